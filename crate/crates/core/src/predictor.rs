//! Graph convolutional classifier and the four-term training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::{group_statistics, loss_inner, loss_intra, loss_sparsity, LossWeights};
use crate::layers::Mlp;
use crate::numerics::{BatchNormState, Mode, Prng, Tensor, Var};
use crate::params::{Bindings, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Number of graph convolution layers `k`.
    pub layers: usize,
    pub hidden: usize,
    pub head_hidden: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 16,
            head_hidden: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    convs: Vec<ParamId>,
    bn_gamma: ParamId,
    bn_beta: ParamId,
    head: Mlp,
    feature_dim: usize,
}

impl Predictor {
    pub fn new(
        config: &PredictorConfig,
        feature_dim: usize,
        num_classes: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut Prng,
    ) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.head_hidden == 0 {
            return Err(Error::Config("predictor widths and depth must be positive".into()));
        }
        let d = config.hidden;
        let convs = (0..config.layers)
            .map(|k| {
                let fin = if k == 0 { feature_dim } else { d };
                store.add_glorot(format!("{prefix}.gcn{k}.weight"), &[fin, d], fin, d, rng)
            })
            .collect();
        let bn_gamma = store.add(format!("{prefix}.bn.gamma"), Tensor::ones([d]));
        let bn_beta = store.add_zeros(format!("{prefix}.bn.beta"), &[d]);
        let head = Mlp::new(store, &format!("{prefix}.head"), &[d, config.head_hidden, num_classes], rng);
        Ok(Self { convs, bn_gamma, bn_beta, head, feature_dim })
    }

    /// Node embeddings summed over nodes: `Σ_p h^k_p` with `h^k = ReLU(A h^{k−1} W^k)`.
    pub fn embed<'t>(&self, b: &Bindings<'_, 't>, graph: Var<'t>, features: Var<'t>) -> Result<Var<'t>> {
        let (v, v2) = graph.value().dims2()?;
        let (fv, f) = features.value().dims2()?;
        if v != v2 || fv != v || f != self.feature_dim {
            return Err(Error::shape(
                "gcn_forward",
                format!(
                    "graph {v}×{v2} with features {fv}×{f} (expected feature size {})",
                    self.feature_dim
                ),
            ));
        }
        let mut h = features;
        for &w in &self.convs {
            h = graph.matmul(h.matmul(b.get(w)?)?)?.relu();
        }
        h.sum_rows()
    }

    /// Logits `[batch × |C|]` for a batch of graphs and node features.
    pub fn forward<'t>(
        &self,
        b: &Bindings<'_, 't>,
        graphs: &[Var<'t>],
        features: &[Var<'t>],
        bn: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var<'t>> {
        if graphs.len() != features.len() || graphs.is_empty() {
            return Err(Error::shape(
                "gcn_forward",
                format!("{} graphs, {} feature matrices", graphs.len(), features.len()),
            ));
        }
        let pooled = graphs
            .iter()
            .zip(features)
            .map(|(g, f)| self.embed(b, *g, *f))
            .collect::<Result<Vec<_>>>()?;
        let stacked = Var::concat_rows(&pooled)?;
        let normed = stacked.batchnorm_1d(b.get(self.bn_gamma)?, b.get(self.bn_beta)?, bn, mode)?;
        self.head.forward(b, normed)
    }
}

/// Logged values of each objective term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub inner: f64,
    pub intra: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self, w: &LossWeights) -> f64 {
        self.ce + w.alpha * self.inner + w.beta * self.intra + w.gamma * self.sparsity
    }
}

/// `L = L_ce + α·L_inner + β·L_intra + γ·L_sparsity`.
///
/// Group statistics come from the batch; a batch holding a single class has no
/// intra-class term.
pub fn total_loss<'t>(
    logits: Var<'t>,
    labels: &[usize],
    graphs: &[Var<'t>],
    w: &LossWeights,
) -> Result<(Var<'t>, LossBreakdown)> {
    let ce = logits.cross_entropy(labels)?;
    let stats = group_statistics(graphs, labels)?;
    let inner = loss_inner(&stats)?;
    let intra = if stats.classes.len() >= 2 {
        Some(loss_intra(&stats)?)
    } else {
        None
    };
    let sparsity = loss_sparsity(graphs)?;
    let mut terms = vec![ce, inner.scale(w.alpha), sparsity.scale(w.gamma)];
    if let Some(intra) = intra {
        terms.push(intra.scale(w.beta));
    }
    let total = Var::sum_n(&terms)?;
    let breakdown = LossBreakdown {
        ce: ce.item(),
        inner: inner.item(),
        intra: intra.map_or(0.0, |v| v.item()),
        sparsity: sparsity.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}
