//! Graph generation from encoded ROI features, and the group and sparsity regularizers.
//!
//! Each ROI's feature row is pushed through a softmax so it becomes a probability
//! vector; the graph is the Gram matrix of those rows. Entries therefore lie in `(0, 1]`
//! and the graph is symmetric positive semidefinite by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            gamma: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and ≥ 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// `A = softmax(h_e) · softmax(h_e)ᵀ` for one sample's `h_e[v×o]`.
pub fn generate_graph<'t>(h_e: Var<'t>) -> Result<Var<'t>> {
    let h_a = h_e.softmax_rows();
    h_a.matmul_nt(h_a)
}

/// Splits a stacked `[batch·v × o]` encoding into per-sample graphs.
pub fn generate_graphs<'t>(h_e: Var<'t>, v: usize) -> Result<Vec<Var<'t>>> {
    let rows = h_e.value().rows();
    if v == 0 || !rows.is_multiple_of(v) {
        return Err(Error::shape("generate_graphs", format!("{rows} rows for v={v}")));
    }
    let h_a = h_e.softmax_rows();
    (0..rows / v)
        .map(|i| {
            let block = h_a.slice_rows(i * v, (i + 1) * v)?;
            block.matmul_nt(block)
        })
        .collect()
}

/// Mean graph, scalar spread and size of one class within a batch.
#[derive(Clone, Copy, Debug)]
pub struct ClassStats<'t> {
    pub class: usize,
    pub mean: Var<'t>,
    /// Mean squared Frobenius distance of members to `mean`.
    pub variance: Var<'t>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct GroupStats<'t> {
    /// Classes present in the batch, ascending.
    pub classes: Vec<ClassStats<'t>>,
}

pub fn group_statistics<'t>(graphs: &[Var<'t>], labels: &[usize]) -> Result<GroupStats<'t>> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("group statistics of an empty batch".into()));
    }
    if graphs.len() != labels.len() {
        return Err(Error::shape(
            "group_statistics",
            format!("{} graphs, {} labels", graphs.len(), labels.len()),
        ));
    }
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let classes = present
        .into_iter()
        .map(|class| {
            let members: Vec<Var<'t>> = graphs
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(g, _)| *g)
                .collect();
            let m = members.len() as f64;
            let mean = Var::sum_n(&members)?.scale(1.0 / m);
            let spreads = members
                .iter()
                .map(|g| Ok(g.sub(mean)?.squared_norm()))
                .collect::<Result<Vec<_>>>()?;
            let variance = Var::sum_n(&spreads)?.scale(1.0 / m);
            Ok(ClassStats { class, mean, variance, count: members.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupStats { classes })
}

/// `Σ_c σ²_c`.
pub fn loss_inner<'t>(stats: &GroupStats<'t>) -> Result<Var<'t>> {
    let vars: Vec<Var<'t>> = stats.classes.iter().map(|c| c.variance).collect();
    Var::sum_n(&vars)
}

/// `−Σ_{(a,b)} ‖μ_a − μ_b‖²_F` over ordered class pairs.
pub fn loss_intra<'t>(stats: &GroupStats<'t>) -> Result<Var<'t>> {
    if stats.classes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "intra-class loss needs two classes, batch has {}",
            stats.classes.len()
        )));
    }
    let mut terms = Vec::new();
    for a in &stats.classes {
        for b in &stats.classes {
            if a.class != b.class {
                terms.push(a.mean.sub(b.mean)?.squared_norm());
            }
        }
    }
    Ok(Var::sum_n(&terms)?.scale(-1.0))
}

/// `(1 / n·v·v) Σ_i ‖vec(A_i)‖₁`.
pub fn loss_sparsity<'t>(graphs: &[Var<'t>]) -> Result<Var<'t>> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidArgument("sparsity loss of an empty batch".into()))?;
    let per_graph = first.value().numel() as f64;
    let norms: Vec<Var<'t>> = graphs.iter().map(|g| g.abs_sum()).collect();
    Ok(Var::sum_n(&norms)?.scale(1.0 / (graphs.len() as f64 * per_graph)))
}

/// Plain-value graph for inspection without a tape.
pub fn graph_from_features(h_e: &Tensor) -> Result<Tensor> {
    let tape = crate::numerics::Tape::new();
    let g = generate_graph(tape.constant(h_e.clone()))?;
    Ok((*g.value()).clone())
}
