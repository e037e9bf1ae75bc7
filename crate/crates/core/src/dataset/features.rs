use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeFeatureMode {
    /// Row `p` holds `|corr(x_p, x_q)|` for every ROI `q`.
    #[default]
    Pearson,
    /// `I_v`: no signal in the node features, structure only.
    Identity,
}

impl std::str::FromStr for NodeFeatureMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown node feature mode '{other}'")),
        }
    }
}

/// Indices of rows whose samples are all equal.
pub fn zero_variance_rows(x: &Tensor) -> Vec<usize> {
    let (v, t) = match x.dims2() {
        Ok(d) => d,
        Err(_) => return Vec::new(),
    };
    (0..v)
        .filter(|&p| {
            let row = &x.data()[p * t..(p + 1) * t];
            row.iter().all(|&a| a == row[0])
        })
        .collect()
}

/// Absolute Pearson correlation between every pair of rows of `x[v×t]`.
///
/// Rows without variance correlate 0 with everything else and 1 with themselves; each
/// such row is reported through `log::warn!`.
pub fn pearson_matrix(x: &Tensor) -> Result<Tensor> {
    let (v, t) = x.dims2()?;
    let flat = zero_variance_rows(x);
    for &p in &flat {
        log::warn!("ROI {p} has zero variance; its Pearson edges are set to 0");
    }
    let mut centered = vec![0.0; v * t];
    let mut norms = vec![0.0; v];
    for p in 0..v {
        let row = &x.data()[p * t..(p + 1) * t];
        let mean = row.iter().sum::<f64>() / t as f64;
        let c = &mut centered[p * t..(p + 1) * t];
        for (ci, xi) in c.iter_mut().zip(row) {
            *ci = xi - mean;
        }
        norms[p] = c.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    let mut out = Tensor::eye(v);
    for p in 0..v {
        for q in p + 1..v {
            let r = if flat.contains(&p) || flat.contains(&q) {
                0.0
            } else {
                let cp = &centered[p * t..(p + 1) * t];
                let cq = &centered[q * t..(q + 1) * t];
                let num: f64 = cp.iter().zip(cq).map(|(a, b)| a * b).sum();
                (num / (norms[p] * norms[q])).abs().min(1.0)
            };
            out.set(p, q, r);
            out.set(q, p, r);
        }
    }
    Ok(out)
}

/// Node features `F[v×v]` for the graph predictor.
pub fn node_features(x: &Tensor, mode: NodeFeatureMode) -> Result<Tensor> {
    match mode {
        NodeFeatureMode::Pearson => pearson_matrix(x),
        NodeFeatureMode::Identity => Ok(Tensor::eye(x.dims2()?.0)),
    }
}

/// All-ones `v×v` adjacency.
pub fn uniform_graph(v: usize) -> Tensor {
    Tensor::ones([v, v])
}
