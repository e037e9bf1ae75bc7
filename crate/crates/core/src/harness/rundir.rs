//! Run-directory layout: `config.json`, `metrics.csv`, `graphs/`, `summary.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::dataset::{format_f64, read_matrix_csv, write_json, write_matrix_csv};
use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::harness::config::flat_to_json;
use crate::harness::cv::RunRecord;
use crate::numerics::Tensor;

pub const METRICS_HEADER: &str = "rep,fold,epoch,L_ce,L_inner,L_intra,L_sparsity,total,test_auroc";

pub fn write_config(dir: &Path, flat: &BTreeMap<String, Value>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("config.json");
    fs::write(&path, flat_to_json(flat)).map_err(|e| Error::io(&path, e))
}

/// Per-epoch rows ordered by repetition, fold and epoch.
pub fn metrics_csv(record: &RunRecord) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let mut folds: Vec<_> = record.folds.iter().collect();
    folds.sort_by_key(|f| (f.rep, f.fold));
    for f in folds {
        for e in &f.history {
            let l = &e.loss;
            let auc = e.test_auroc.map_or_else(String::new, format_f64);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                f.rep,
                f.fold,
                e.epoch,
                format_f64(l.ce),
                format_f64(l.inner),
                format_f64(l.intra),
                format_f64(l.sparsity),
                format_f64(l.total),
                auc
            ));
        }
    }
    out
}

pub fn write_metrics(dir: &Path, record: &RunRecord) -> Result<()> {
    let path = dir.join("metrics.csv");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(metrics_csv(record).as_bytes()).map_err(|e| Error::io(&path, e))
}

#[derive(Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mean_auroc: f64,
    pub std_auroc: f64,
    pub fold_aurocs: Vec<f64>,
}

impl VariantSummary {
    pub fn from_record(r: &RunRecord) -> Self {
        let LossWeights { alpha, beta, gamma } = r.weights;
        Self {
            variant: r.label.clone(),
            alpha,
            beta,
            gamma,
            mean_auroc: r.mean_auroc,
            std_auroc: r.std_auroc,
            fold_aurocs: r.final_aurocs(),
        }
    }
}

pub fn write_summary(dir: &Path, records: &[RunRecord]) -> Result<()> {
    let variants: Vec<VariantSummary> = records.iter().map(VariantSummary::from_record).collect();
    write_json(&dir.join("summary.json"), &serde_json::json!({ "variants": variants }))
}

/// Table with one row per variant: variant,alpha,beta,gamma,mean_auroc,std_auroc.
pub fn write_comparison_table(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = String::from("variant,alpha,beta,gamma,mean_auroc,std_auroc\n");
    for r in records {
        let s = VariantSummary::from_record(r);
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.variant,
            s.alpha,
            s.beta,
            s.gamma,
            format_f64(s.mean_auroc),
            format_f64(s.std_auroc)
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `graphs/sample_<i>.csv` for every sample plus `graphs/labels.csv`.
pub fn write_graphs(dir: &Path, graphs: &[Tensor], labels: &[usize]) -> Result<()> {
    let gdir = dir.join("graphs");
    fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
    for (i, g) in graphs.iter().enumerate() {
        write_matrix_csv(&gdir.join(format!("sample_{i}.csv")), g)?;
    }
    let mut out = String::from("sample_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    let path = gdir.join("labels.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Inverse of [`write_graphs`].
pub fn read_graphs(dir: &Path) -> Result<(Vec<Tensor>, Vec<usize>)> {
    let gdir = dir.join("graphs");
    let path = gdir.join("labels.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut labels = Vec::new();
    for (row, line) in text.lines().enumerate().skip(1) {
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("{}: malformed row {row}", path.display())))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("{}: non-integer cell '{s}' in row {row}", path.display())))
        };
        if parse(id)? != labels.len() {
            return Err(Error::Data(format!("{}: sample ids must run 0..n in order", path.display())));
        }
        labels.push(parse(label)?);
    }
    let graphs = (0..labels.len())
        .map(|i| read_matrix_csv(&gdir.join(format!("sample_{i}.csv"))))
        .collect::<Result<_>>()?;
    Ok((graphs, labels))
}
