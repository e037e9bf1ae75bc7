//! Three demo operations over the core crate, each taking and returning JSON so the
//! page needs no bindings beyond strings.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use fbnet::analysis::{edge_ttest, mean_heatmap, module_difference_scores, Correction};
use fbnet::dataset::{generate_synthetic, pearson_matrix, Cohort, PlantedBlock, SyntheticConfig};
use fbnet::harness::auroc;
use fbnet::numerics::{t_two_sided_p, Tensor};

#[derive(Deserialize)]
#[serde(default)]
pub struct CohortRequest {
    pub n: usize,
    pub t: usize,
    pub delta: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for CohortRequest {
    fn default() -> Self {
        Self { n: 60, t: 64, delta: 0.4, noise: 0.5, seed: 7 }
    }
}

#[derive(Serialize)]
pub struct Heatmap {
    pub size: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    fn from_tensor(m: &Tensor) -> Self {
        Self { size: m.shape()[0], values: m.data().to_vec() }
    }
}

#[derive(Serialize)]
pub struct Heatmaps {
    pub roi_labels: Vec<String>,
    pub classes: Vec<(String, Heatmap)>,
    pub sample: Vec<f64>,
}

#[derive(Serialize)]
pub struct ModuleRow {
    pub name: String,
    pub size: usize,
    pub score: f64,
}

#[derive(Serialize)]
pub struct Contrast {
    pub t: Heatmap,
    pub significant_edges: usize,
    pub tested_edges: usize,
    pub threshold: f64,
    pub modules: Vec<ModuleRow>,
}

#[derive(Serialize)]
pub struct Scores {
    pub auroc: f64,
    pub p_value: Option<f64>,
}

fn cohort(req: &CohortRequest) -> fbnet::Result<Cohort> {
    let mut cfg = SyntheticConfig { n: req.n, t: req.t, noise: req.noise, seed: req.seed, ..SyntheticConfig::default() };
    cfg.planted = vec![PlantedBlock { module_a: 0, module_b: 0, delta: vec![0.0, req.delta] }];
    generate_synthetic(&cfg)
}

fn pearson_graphs(c: &Cohort) -> fbnet::Result<Vec<Tensor>> {
    c.samples.iter().map(|s| pearson_matrix(&s.x)).collect()
}

/// Class-mean Pearson heatmaps in module order plus the first sample's signals.
pub fn heatmaps(req: &CohortRequest) -> fbnet::Result<Heatmaps> {
    let c = cohort(req)?;
    let graphs = pearson_graphs(&c)?;
    let labels = c.labels();
    let mut classes = Vec::new();
    let mut order = Vec::new();
    for (k, name) in c.class_names.iter().enumerate() {
        let members: Vec<Tensor> = graphs.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(g, _)| g.clone()).collect();
        let (m, o) = mean_heatmap(&members, &c.partition)?;
        classes.push((name.clone(), Heatmap::from_tensor(&m)));
        order = o;
    }
    let roi_labels = order
        .iter()
        .map(|&r| match c.partition.assignment[r] {
            Some(m) => format!("{}:{r}", c.partition.names[m]),
            None => r.to_string(),
        })
        .collect();
    Ok(Heatmaps { roi_labels, classes, sample: c.samples[0].x.data().to_vec() })
}

/// Welch test of every edge between the classes and the module ranking it induces.
pub fn contrast(req: &CohortRequest, bonferroni: bool) -> fbnet::Result<Contrast> {
    let c = cohort(req)?;
    let graphs = pearson_graphs(&c)?;
    let labels = c.labels();
    let split = |k: usize| -> Vec<Tensor> { graphs.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(g, _)| g.clone()).collect() };
    let correction = if bonferroni { Correction::Bonferroni } else { Correction::None };
    let sig = edge_ttest(&split(1), &split(0), correction)?;
    let v = c.v();
    let modules = module_difference_scores(&sig.edges, &c.partition)?
        .into_iter()
        .map(|s| ModuleRow { name: s.name, size: s.size, score: s.score })
        .collect();
    Ok(Contrast {
        t: Heatmap::from_tensor(&sig.t),
        significant_edges: sig.edges.len(),
        tested_edges: v * (v - 1) / 2,
        threshold: sig.threshold,
        modules,
    })
}

/// AUROC of `scores` against 0/1 `labels`, and the two-sided t tail when `t` and `dof` are given.
pub fn score(scores: &[f64], labels: &[usize], t: Option<(f64, f64)>) -> fbnet::Result<Scores> {
    let auroc = auroc(scores, labels)?;
    let p_value = t.map(|(t, dof)| t_two_sided_p(t, dof)).transpose()?;
    Ok(Scores { auroc, p_value })
}

fn to_js<T: Serialize>(r: fbnet::Result<T>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

fn request(json: &str) -> Result<CohortRequest, JsError> {
    serde_json::from_str(json).map_err(|e| JsError::new(&format!("bad request: {e}")))
}

#[wasm_bindgen(js_name = cohortHeatmaps)]
pub fn cohort_heatmaps_js(request_json: &str) -> Result<String, JsError> {
    to_js(heatmaps(&request(request_json)?))
}

#[wasm_bindgen(js_name = edgeContrast)]
pub fn edge_contrast_js(request_json: &str, bonferroni: bool) -> Result<String, JsError> {
    to_js(contrast(&request(request_json)?, bonferroni))
}

#[wasm_bindgen(js_name = scoreAuroc)]
pub fn score_auroc_js(scores: Vec<f64>, labels: Vec<u32>, t: Option<f64>, dof: Option<f64>) -> Result<String, JsError> {
    let labels: Vec<usize> = labels.into_iter().map(|l| l as usize).collect();
    to_js(score(&scores, &labels, t.zip(dof)))
}
