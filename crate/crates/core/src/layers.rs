use crate::error::Result;
use crate::numerics::{Prng, Var};
use crate::params::{Bindings, ParamId, ParamStore};

/// Fully connected stack with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes, e.g. `[64, 32, 8]`.
    pub fn new(store: &mut ParamStore, prefix: &str, widths: &[usize], rng: &mut Prng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add_glorot(format!("{prefix}.{i}.weight"), &[w[0], w[1]], w[0], w[1], rng);
                let bias = store.add_zeros(format!("{prefix}.{i}.bias"), &[w[1]]);
                (weight, bias)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<'t>(&self, b: &Bindings<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, &(w, bias)) in self.layers.iter().enumerate() {
            h = h.matmul(b.get(w)?)?.add_row_bias(b.get(bias)?)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }
}
