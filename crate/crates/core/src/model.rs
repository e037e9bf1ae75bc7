//! Full classifier: encoder, graph source, graph predictor (or the time-series
//! baseline head), plus checkpoint storage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::dataset::{
    node_features, pearson_matrix, read_matrix_csv, uniform_graph, write_matrix_csv, Cohort, NodeFeatureMode,
};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::graphgen::generate_graphs;
use crate::layers::Mlp;
use crate::numerics::{BatchNormState, Mode, Prng, Tape, Tensor, Var};
use crate::params::{Bindings, ParamId, ParamStore};
use crate::predictor::{Predictor, PredictorConfig};

/// Where each sample's graph comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphSource {
    #[default]
    Learnable,
    Pearson,
    Uniform,
}

impl GraphSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Learnable => "learnable",
            Self::Pearson => "pearson",
            Self::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for GraphSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "learnable" => Ok(Self::Learnable),
            "pearson" => Ok(Self::Pearson),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown graph source '{other}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Encoder → graph → GCN.
    #[default]
    Graph,
    /// Encoder → flattened features → MLP, no graph.
    Baseline,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "graph" => Ok(Self::Graph),
            "baseline" => Ok(Self::Baseline),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub graph_source: GraphSource,
    pub node_feature_mode: NodeFeatureMode,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    /// Hidden width of the baseline MLP head.
    pub baseline_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Graph,
            graph_source: GraphSource::Learnable,
            node_feature_mode: NodeFeatureMode::Pearson,
            encoder: EncoderConfig::default(),
            predictor: PredictorConfig::default(),
            baseline_hidden: 32,
        }
    }
}

/// Per-sample inputs that do not depend on parameters.
#[derive(Clone, Debug)]
pub struct PreparedCohort {
    pub series: Vec<Tensor>,
    pub features: Vec<Tensor>,
    /// Present for the fixed graph sources.
    pub fixed_graphs: Option<Vec<Tensor>>,
    pub labels: Vec<usize>,
    pub v: usize,
    pub t: usize,
}

impl PreparedCohort {
    pub fn new(cohort: &Cohort, config: &ModelConfig) -> Result<Self> {
        let series: Vec<Tensor> = cohort.samples.iter().map(|s| s.x.clone()).collect();
        let features = series
            .iter()
            .map(|x| node_features(x, config.node_feature_mode))
            .collect::<Result<Vec<_>>>()?;
        let fixed_graphs = match (config.kind, config.graph_source) {
            (ModelKind::Graph, GraphSource::Pearson) => Some(
                series
                    .iter()
                    .map(pearson_matrix)
                    .collect::<Result<Vec<_>>>()?,
            ),
            (ModelKind::Graph, GraphSource::Uniform) => Some(vec![uniform_graph(cohort.v()); series.len()]),
            _ => None,
        };
        Ok(Self {
            series,
            features,
            fixed_graphs,
            labels: cohort.labels(),
            v: cohort.v(),
            t: cohort.t(),
        })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    fn stacked_series(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.v * self.t);
        for &i in idx {
            data.extend_from_slice(self.series[i].data());
        }
        Tensor::new([idx.len() * self.v, self.t], data)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Head {
    Graph(Predictor),
    Baseline(Mlp),
}

/// Parameter-free description of the network; weights live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    encoder: Encoder,
    head: Head,
    graph_source: GraphSource,
    v: usize,
}

/// Output of one forward pass.
pub struct Forward<'t> {
    pub logits: Var<'t>,
    /// Graphs fed to the predictor; empty for the baseline.
    pub graphs: Vec<Var<'t>>,
}

impl Network {
    pub fn uses_encoder(&self) -> bool {
        matches!(self.head, Head::Baseline(_)) || self.graph_source == GraphSource::Learnable
    }

    pub fn forward<'t>(
        &self,
        b: &Bindings<'_, 't>,
        data: &PreparedCohort,
        idx: &[usize],
        bn: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Forward<'t>> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("forward pass over an empty batch".into()));
        }
        let tape = b.tape();
        match &self.head {
            Head::Baseline(mlp) => {
                let h_e = self.encoder.encode(b, &data.stacked_series(idx)?)?;
                let flat = h_e.reshape([idx.len(), self.v * self.encoder.out_dim()])?;
                Ok(Forward {
                    logits: mlp.forward(b, flat)?,
                    graphs: Vec::new(),
                })
            }
            Head::Graph(pred) => {
                let graphs = match &data.fixed_graphs {
                    None => {
                        let h_e = self.encoder.encode(b, &data.stacked_series(idx)?)?;
                        generate_graphs(h_e, self.v)?
                    }
                    Some(fixed) => idx.iter().map(|&i| tape.constant(fixed[i].clone())).collect(),
                };
                let features: Vec<Var<'t>> = idx.iter().map(|&i| tape.constant(data.features[i].clone())).collect();
                let logits = pred.forward(b, &graphs, &features, bn, mode)?;
                Ok(Forward { logits, graphs })
            }
        }
    }
}

/// Weights, architecture and batch-norm statistics of one classifier.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub net: Network,
    pub bn: BatchNormState,
    pub num_classes: usize,
    pub t: usize,
}

/// Samples per forward pass at inference; eval mode makes the split exact.
const INFERENCE_CHUNK: usize = 32;
const ENCODER_PREFIX: &str = "encoder";

impl Model {
    pub fn new(config: &ModelConfig, v: usize, t: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {num_classes}")));
        }
        let mut rng = Prng::new(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&config.encoder, t, &mut store, ENCODER_PREFIX, &mut rng)?;
        let head = match config.kind {
            ModelKind::Graph => {
                // both feature modes give one length-v row per ROI
                Head::Graph(Predictor::new(&config.predictor, v, num_classes, &mut store, "predictor", &mut rng)?)
            }
            ModelKind::Baseline => {
                let hidden = config.baseline_hidden;
                if hidden == 0 {
                    return Err(Error::Config("baseline_hidden must be positive".into()));
                }
                Head::Baseline(Mlp::new(
                    &mut store,
                    "baseline",
                    &[v * config.encoder.out_dim, hidden, num_classes],
                    &mut rng,
                ))
            }
        };
        Ok(Self {
            config: config.clone(),
            store,
            net: Network {
                encoder,
                head,
                graph_source: config.graph_source,
                v,
            },
            bn: BatchNormState::new(config.predictor.hidden),
            num_classes,
            t,
        })
    }

    pub fn v(&self) -> usize {
        self.net.v
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        self.store.ids_with_prefix(&format!("{ENCODER_PREFIX}."))
    }

    /// Parameters the optimizer updates: fixed graph sources leave the encoder out.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        if self.net.uses_encoder() {
            self.store.ids().collect()
        } else {
            let enc = self.encoder_ids();
            self.store.ids().filter(|id| !enc.contains(id)).collect()
        }
    }

    /// Softmax class probabilities in eval mode, `[n × |C|]`.
    pub fn predict_proba(&self, data: &PreparedCohort, idx: &[usize]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(idx.len() * self.num_classes);
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let tape = Tape::new();
            let b = Bindings::frozen(&tape, &self.store);
            let mut bn = self.bn.clone();
            let out = self.net.forward(&b, data, chunk, &mut bn, Mode::Eval)?;
            let probs = out.logits.softmax_rows().value();
            probs.check_finite("predicted probabilities")?;
            rows.extend_from_slice(probs.data());
        }
        Tensor::new([idx.len(), self.num_classes], rows)
    }

    /// Probability of class 1 per sample.
    pub fn positive_scores(&self, data: &PreparedCohort, idx: &[usize]) -> Result<Vec<f64>> {
        let p = self.predict_proba(data, idx)?;
        Ok((0..p.rows()).map(|i| p.at(i, 1)).collect())
    }

    /// Graphs the predictor sees for each sample.
    pub fn graphs(&self, data: &PreparedCohort, idx: &[usize]) -> Result<Vec<Tensor>> {
        if matches!(self.net.head, Head::Baseline(_)) {
            return Err(Error::InvalidArgument("the time-series baseline builds no graphs".into()));
        }
        if let Some(fixed) = &data.fixed_graphs {
            return Ok(idx.iter().map(|&i| fixed[i].clone()).collect());
        }
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let tape = Tape::new();
            let b = Bindings::frozen(&tape, &self.store);
            let h_e = self.net.encoder.encode(&b, &data.stacked_series(chunk)?)?;
            out.extend(generate_graphs(h_e, self.v())?.into_iter().map(|g| (*g.value()).clone()));
        }
        Ok(out)
    }

    /// Encoder output `[v × o]` for one sample.
    pub fn encode_sample(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let b = Bindings::frozen(&tape, &self.store);
        Ok((*self.net.encoder.encode(&b, x)?.value()).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut params = Vec::new();
        for (name, value) in self.store.iter() {
            let file = format!("{name}.csv");
            write_matrix_csv(&dir.join(&file), &as_matrix(value))?;
            params.push(ParamEntry {
                name: name.to_string(),
                shape: value.shape().to_vec(),
                file,
            });
        }
        let manifest = Checkpoint {
            config: self.config.clone(),
            v: self.v(),
            t: self.t,
            num_classes: self.num_classes,
            params,
            bn_running_mean: self.bn.running_mean.clone(),
            bn_running_var: self.bn.running_var.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Checkpoint = read_json(&dir.join("manifest.json"))?;
        let mut model = Self::new(&manifest.config, manifest.v, manifest.t, manifest.num_classes, 0)?;
        if manifest.params.len() != model.store.len() {
            return Err(Error::Data(format!(
                "checkpoint lists {} tensors, architecture has {}",
                manifest.params.len(),
                model.store.len()
            )));
        }
        for entry in &manifest.params {
            let id = model
                .store
                .find(&entry.name)
                .ok_or_else(|| Error::Data(format!("checkpoint tensor '{}' not in architecture", entry.name)))?;
            if model.store.get(id).shape() != entry.shape.as_slice() {
                return Err(Error::Data(format!(
                    "checkpoint tensor '{}' has shape {:?}, architecture expects {:?}",
                    entry.name,
                    entry.shape,
                    model.store.get(id).shape()
                )));
            }
            let m = read_matrix_csv(&dir.join(&entry.file))?;
            *model.store.get_mut(id) = m.reshaped(entry.shape.clone())?;
        }
        let d = model.bn.running_mean.len();
        if manifest.bn_running_mean.len() != d || manifest.bn_running_var.len() != d {
            return Err(Error::Data("checkpoint batch-norm statistics have the wrong width".into()));
        }
        model.bn.running_mean = manifest.bn_running_mean;
        model.bn.running_var = manifest.bn_running_var;
        Ok(model)
    }
}

/// Rows = leading dimension, columns = the rest; vectors become one row.
fn as_matrix(t: &Tensor) -> Tensor {
    let shape = t.shape();
    let rows = if shape.len() <= 1 { 1 } else { shape[0] };
    t.clone()
        .reshaped([rows, t.numel() / rows])
        .expect("element count preserved")
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    v: usize,
    t: usize,
    num_classes: usize,
    params: Vec<ParamEntry>,
    bn_running_mean: Vec<f64>,
    bn_running_var: Vec<f64>,
}
