//! Cohort directories and plain numeric CSV matrices.
//!
//! Layout: `manifest.json`, `labels.csv` (`sample_id,label`) and
//! `samples/sample_<id>.csv` with `v` rows of `t` values each.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cohort::{BoldSample, Cohort, ModulePartition};
use super::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Seventeen significant digits: every `f64` survives a write/read cycle unchanged.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(cell: &str, path: &Path, row: usize, col: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!(
            "{}: non-numeric cell '{cell}' at row {row}, column {col}",
            path.display()
        ))
    })
}

pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let (r, c) = m.dims2()?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..r {
        w.write_record((0..c).map(|j| format_f64(m.at(i, j))))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<Tensor> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        rows.push(
            rec.iter()
                .enumerate()
                .map(|(j, cell)| parse_f64(cell, path, i, j))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Tensor::from_rows(&rows).map_err(|_| Error::Data(format!("{}: ragged rows", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    v: usize,
    t: usize,
    class_names: Vec<String>,
    module_names: Vec<String>,
    assignment: Vec<Option<usize>>,
    generator: Option<SyntheticConfig>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<()> {
    let samples_dir = dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let manifest = Manifest {
        n: cohort.n(),
        v: cohort.v(),
        t: cohort.t(),
        class_names: cohort.class_names.clone(),
        module_names: cohort.partition.names.clone(),
        assignment: cohort.partition.assignment.clone(),
        generator: cohort.generator.clone(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;

    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| Error::csv(&labels_path, e))?;
    w.write_record(["sample_id", "label"])
        .map_err(|e| Error::csv(&labels_path, e))?;
    for (i, s) in cohort.samples.iter().enumerate() {
        w.write_record([i.to_string(), s.label.to_string()])
            .map_err(|e| Error::csv(&labels_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&labels_path, e))?;

    for (i, s) in cohort.samples.iter().enumerate() {
        write_matrix_csv(&samples_dir.join(format!("sample_{i}.csv")), &s.x)?;
    }
    Ok(())
}

pub fn load_cohort(dir: &Path) -> Result<Cohort> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;

    let labels_path = dir.join("labels.csv");
    if !labels_path.is_file() {
        return Err(Error::Data(format!("missing labels file {}", labels_path.display())));
    }
    let mut rd = csv::Reader::from_path(&labels_path).map_err(|e| Error::csv(&labels_path, e))?;
    let mut labels = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(&labels_path, e))?;
        let parse = |j: usize| -> Result<usize> {
            rec.get(j).and_then(|c| c.trim().parse().ok()).ok_or_else(|| {
                Error::Data(format!(
                    "{}: bad cell at row {row}, column {j}",
                    labels_path.display()
                ))
            })
        };
        let id = parse(0)?;
        if id != row {
            return Err(Error::Data(format!(
                "{}: expected sample_id {row}, found {id}",
                labels_path.display()
            )));
        }
        labels.push(parse(1)?);
    }
    if labels.len() != manifest.n {
        return Err(Error::Data(format!(
            "manifest declares {} samples but labels.csv has {}",
            manifest.n,
            labels.len()
        )));
    }

    let mut samples = Vec::with_capacity(manifest.n);
    for (i, label) in labels.into_iter().enumerate() {
        let path = dir.join("samples").join(format!("sample_{i}.csv"));
        let x = read_matrix_csv(&path)?;
        let (v, t) = x.dims2()?;
        if v != manifest.v || t != manifest.t {
            return Err(Error::Data(format!(
                "{} is {v}×{t}, manifest declares {}×{}",
                path.display(),
                manifest.v,
                manifest.t
            )));
        }
        samples.push(BoldSample::new(x, label)?);
    }
    let partition = ModulePartition::new(manifest.module_names, manifest.assignment)?;
    let mut cohort = Cohort::new(samples, manifest.class_names, partition)?;
    cohort.generator = manifest.generator;
    Ok(cohort)
}
