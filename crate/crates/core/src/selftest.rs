//! Built-in verification: finite-difference gradient checks for every differentiable
//! operation and the full model, plus brute-force checks of the batch loss formulas.

use crate::encoder::{EncoderConfig, EncoderKind};
use crate::error::Result;
use crate::graphgen::{generate_graph, group_statistics, loss_inner, loss_intra, loss_sparsity, LossWeights};
use crate::model::{Model, ModelConfig, PreparedCohort};
use crate::numerics::{gradient_check, BatchNormState, Mode, Prng, Tape, Tensor, Var};
use crate::params::Bindings;
use crate::predictor::{total_loss, PredictorConfig};
use crate::dataset::{generate_synthetic, NodeFeatureMode, SyntheticConfig};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const IDENTITY_TOLERANCE: f64 = 1e-8;
pub const SPARSITY_TOLERANCE: f64 = 1e-12;
/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Random points per operation.
pub const POINTS_PER_OP: usize = 10;
/// Cohort and initialization seed of the end-to-end checks.
pub const END_TO_END_SEED: u64 = 17;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn random_vec(n: usize, rng: &mut Prng) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

/// Consumes the next `shape`-sized block of the flat parameter vector.
fn take<'t>(theta: Var<'t>, off: &mut usize, shape: &[usize]) -> Result<Var<'t>> {
    let n: usize = shape.iter().product();
    let v = theta.slice_rows(*off, *off + n)?.reshape(shape.to_vec())?;
    *off += n;
    Ok(v)
}

/// Scalar `Σ x ⊙ R` with a fixed pseudo-random `R`, so no output direction is missed.
fn project<'t>(x: Var<'t>, salt: u64) -> Result<Var<'t>> {
    let value = x.value();
    let mut rng = Prng::new(0x9e37 ^ salt);
    let r = Tensor::new(value.shape().to_vec(), random_vec(value.numel(), &mut rng))?;
    Ok(x.mul(x.tape().constant(r))?.sum_all())
}

type Objective = Box<dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>>;

fn op_cases() -> Vec<(&'static str, usize, Objective)> {
    let mut cases: Vec<(&'static str, usize, Objective)> = Vec::new();
    macro_rules! case {
        ($name:expr, $n:expr, |$th:ident, $off:ident| $body:expr) => {
            cases.push((
                $name,
                $n,
                Box::new(move |_tape, $th| {
                    let mut $off = 0usize;
                    let out = $body;
                    project(out?, $n as u64)
                }),
            ));
        };
    }
    case!("matmul", 6 + 12, |th, o| take(th, &mut o, &[2, 3])?.matmul(take(th, &mut o, &[3, 4])?));
    case!("matmul_nt", 6 + 12, |th, o| take(th, &mut o, &[2, 3])?.matmul_nt(take(th, &mut o, &[4, 3])?));
    case!("transpose", 6, |th, o| take(th, &mut o, &[2, 3])?.transpose());
    case!("add", 12, |th, o| take(th, &mut o, &[2, 3])?.add(take(th, &mut o, &[2, 3])?));
    case!("sub", 12, |th, o| take(th, &mut o, &[2, 3])?.sub(take(th, &mut o, &[2, 3])?));
    case!("mul", 12, |th, o| take(th, &mut o, &[2, 3])?.mul(take(th, &mut o, &[2, 3])?));
    case!("affine", 6, |th, o| Ok(take(th, &mut o, &[2, 3])?.affine(-1.5, 0.25)));
    case!("add_row_bias", 9, |th, o| take(th, &mut o, &[2, 3])?.add_row_bias(take(th, &mut o, &[3])?));
    case!("relu", 8, |th, o| Ok(take(th, &mut o, &[2, 4])?.relu()));
    case!("tanh", 8, |th, o| Ok(take(th, &mut o, &[2, 4])?.tanh()));
    case!("sigmoid", 8, |th, o| Ok(take(th, &mut o, &[2, 4])?.sigmoid()));
    case!("softmax_rows", 12, |th, o| Ok(take(th, &mut o, &[3, 4])?.softmax_rows()));
    case!("conv1d", 10 + 2 * 2 * 3 + 2, |th, o| {
        take(th, &mut o, &[2, 5])?.conv1d(take(th, &mut o, &[2, 2, 3])?, take(th, &mut o, &[2])?)
    });
    case!("conv1d_batched", 3 * 2 * 7 + 3 * 2 * 4 + 3, |th, o| {
        take(th, &mut o, &[3, 2, 7])?.conv1d(take(th, &mut o, &[3, 2, 4])?, take(th, &mut o, &[3])?)
    });
    case!("maxpool1d", 2 * 3 * 9, |th, o| take(th, &mut o, &[2, 3, 9])?.maxpool1d(4));
    case!("reshape", 6, |th, o| take(th, &mut o, &[2, 3])?.reshape([3, 2]));
    case!("slice_rows", 12, |th, o| take(th, &mut o, &[4, 3])?.slice_rows(1, 3));
    case!("slice_cols", 12, |th, o| take(th, &mut o, &[3, 4])?.slice_cols(1, 3));
    case!("concat_rows", 6 + 9, |th, o| {
        Var::concat_rows(&[take(th, &mut o, &[2, 3])?, take(th, &mut o, &[3, 3])?])
    });
    case!("concat_cols", 6 + 4, |th, o| {
        Var::concat_cols(&[take(th, &mut o, &[2, 3])?, take(th, &mut o, &[2, 2])?])
    });
    case!("sum_n", 12, |th, o| {
        Var::sum_n(&[take(th, &mut o, &[2, 3])?, take(th, &mut o, &[2, 3])?])
    });
    case!("sum_rows", 12, |th, o| take(th, &mut o, &[4, 3])?.sum_rows());
    case!("group_mean_rows", 12, |th, o| take(th, &mut o, &[6, 2])?.group_mean_rows(3));
    case!("sum_all", 6, |th, o| Ok(take(th, &mut o, &[2, 3])?.sum_all()));
    case!("mean_all", 6, |th, o| Ok(take(th, &mut o, &[2, 3])?.mean_all()));
    case!("squared_norm", 6, |th, o| Ok(take(th, &mut o, &[2, 3])?.squared_norm()));
    case!("abs_sum", 6, |th, o| Ok(take(th, &mut o, &[2, 3])?.abs_sum()));
    case!("batchnorm_1d", 15 + 6, |th, o| {
        let x = take(th, &mut o, &[5, 3])?;
        let mut state = BatchNormState::new(3);
        x.batchnorm_1d(take(th, &mut o, &[3])?, take(th, &mut o, &[3])?, &mut state, Mode::Train)
    });
    case!("cross_entropy", 12, |th, o| take(th, &mut o, &[4, 3])?.cross_entropy(&[0, 2, 1, 2]));
    case!("generate_graph", 20, |th, o| generate_graph(take(th, &mut o, &[5, 4])?));
    case!("loss_inner", 5 * 9, |th, o| {
        let graphs = (0..5).map(|_| take(th, &mut o, &[3, 3])).collect::<Result<Vec<_>>>()?;
        loss_inner(&group_statistics(&graphs, &[0, 1, 0, 1, 1])?)
    });
    case!("loss_intra", 5 * 9, |th, o| {
        let graphs = (0..5).map(|_| take(th, &mut o, &[3, 3])).collect::<Result<Vec<_>>>()?;
        loss_intra(&group_statistics(&graphs, &[0, 1, 0, 1, 2])?)
    });
    case!("loss_sparsity", 3 * 9, |th, o| {
        let graphs = (0..3).map(|_| take(th, &mut o, &[3, 3])).collect::<Result<Vec<_>>>()?;
        loss_sparsity(&graphs)
    });
    cases
}

/// Gradient check of every differentiable operation, worst case over
/// [`POINTS_PER_OP`] random points.
pub fn operation_gradient_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = Prng::new(seed);
    op_cases()
        .into_iter()
        .map(|(name, n, f)| {
            let mut error = 0.0f64;
            for _ in 0..POINTS_PER_OP {
                let point = random_vec(n, &mut rng);
                error = error.max(gradient_check(|t, th| f(t, th), &point, STEP)?);
            }
            Ok(CheckResult { name: name.to_string(), error, tolerance: GRADIENT_TOLERANCE })
        })
        .collect()
}

/// Small architecture for the end-to-end check at `t = 32`: the default kernel of 16
/// cannot pass three valid convolutions over 32 steps.
pub fn check_model_config(variant: EncoderKind) -> ModelConfig {
    ModelConfig {
        node_feature_mode: NodeFeatureMode::Pearson,
        encoder: EncoderConfig {
            variant,
            out_dim: 4,
            mlp_hidden: 8,
            cnn_channels: vec![3, 3, 2],
            cnn_kernel: 4,
            pool: 4,
            gru_window: 8,
            gru_layers: 3,
            gru_hidden: 3,
            ..EncoderConfig::default()
        },
        predictor: PredictorConfig { layers: 3, hidden: 8, head_hidden: 8 },
        ..ModelConfig::default()
    }
}

/// Total loss of the whole pipeline on a batch of 4 samples with `v = 6`, `t = 32`,
/// differentiated with respect to every parameter from encoder to head.
pub fn end_to_end_gradient_check(variant: EncoderKind, weights: LossWeights, seed: u64) -> Result<CheckResult> {
    let cohort = generate_synthetic(&SyntheticConfig {
        n: 4,
        v: 6,
        t: 32,
        modules: vec![
            crate::dataset::ModuleSpec { name: "A".into(), rois: vec![0, 1, 2] },
            crate::dataset::ModuleSpec { name: "B".into(), rois: vec![3, 4] },
        ],
        seed,
        ..SyntheticConfig::default()
    })?;
    let config = check_model_config(variant);
    let data = PreparedCohort::new(&cohort, &config)?;
    let model = Model::new(&config, 6, 32, 2, seed)?;
    let idx = [0usize, 1, 2, 3];
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let point = model.store.flatten();
    let error = gradient_check(
        |tape, theta| {
            let b = Bindings::from_flat(tape, &model.store, theta)?;
            let mut bn = model.bn.clone();
            let out = model.net.forward(&b, &data, &idx, &mut bn, Mode::Train)?;
            Ok(total_loss(out.logits, &labels, &out.graphs, &weights)?.0)
        },
        &point,
        STEP,
    )?;
    Ok(CheckResult {
        name: format!("end_to_end_{}", variant.name()),
        error,
        tolerance: GRADIENT_TOLERANCE,
    })
}

/// Random batch of softmax-Gram graphs with at least two classes.
fn random_batch(rng: &mut Prng) -> (Vec<Tensor>, Vec<usize>) {
    let n = 2 + rng.below(15);
    let v = 2 + rng.below(7);
    let o = 1 + rng.below(6);
    let classes = 2 + rng.below(2);
    let mut labels: Vec<usize> = (0..n).map(|i| if i < 2 { i } else { rng.below(classes) }).collect();
    rng.shuffle(&mut labels);
    let graphs = (0..n)
        .map(|_| {
            let h = Tensor::new([v, o], (0..v * o).map(|_| 2.0 * rng.normal()).collect()).expect("sized");
            crate::graphgen::graph_from_features(&h).expect("valid features")
        })
        .collect();
    (graphs, labels)
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `σ²_c = (1 / 2m²) Σ_i Σ_j ‖A_i − A_j‖²` per class, and the intra loss written as
/// `Σ_{a≠b} (σ²_a + σ²_b − mean_{i∈a, j∈b} ‖A_i − A_j‖²)`.
fn brute_force_losses(graphs: &[Tensor], labels: &[usize]) -> (f64, f64) {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members = |c: usize| -> Vec<&Tensor> { graphs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(g, _)| g).collect() };
    let cross = |a: &[&Tensor], b: &[&Tensor]| -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                s += sq_dist(x, y);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    let var: Vec<f64> = classes.iter().map(|&c| cross(&members(c), &members(c)) / 2.0).collect();
    let inner = var.iter().sum();
    let mut intra = 0.0;
    for (ia, &a) in classes.iter().enumerate() {
        for (ib, &b) in classes.iter().enumerate() {
            if a != b {
                intra += var[ia] + var[ib] - cross(&members(a), &members(b));
            }
        }
    }
    (inner, intra)
}

/// Largest discrepancies over `batches` random batches: (inner, intra, sparsity).
pub fn loss_identity_errors(batches: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = Prng::new(seed);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..batches {
        let (graphs, labels) = random_batch(&mut rng);
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = graphs.iter().map(|g| tape.constant(g.clone())).collect();
        let stats = group_statistics(&vars, &labels)?;
        let (inner, intra) = brute_force_losses(&graphs, &labels);
        worst.0 = worst.0.max((loss_inner(&stats)?.item() - inner).abs());
        worst.1 = worst.1.max((loss_intra(&stats)?.item() - intra).abs());
        let v2 = graphs[0].numel() as f64;
        let l1: f64 = graphs.iter().flat_map(|g| g.data()).map(|x| x.abs()).sum::<f64>() / (graphs.len() as f64 * v2);
        worst.2 = worst.2.max((loss_sparsity(&vars)?.item() - l1).abs());
    }
    Ok(worst)
}

/// Everything the `selftest` command reports.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = operation_gradient_checks(seed)?;
    for variant in [EncoderKind::Cnn, EncoderKind::Gru] {
        out.push(end_to_end_gradient_check(variant, LossWeights::default(), END_TO_END_SEED)?);
    }
    let (inner, intra, sparsity) = loss_identity_errors(100, seed)?;
    out.push(CheckResult { name: "loss_inner_identity".into(), error: inner, tolerance: IDENTITY_TOLERANCE });
    out.push(CheckResult { name: "loss_intra_identity".into(), error: intra, tolerance: IDENTITY_TOLERANCE });
    out.push(CheckResult { name: "loss_sparsity_l1".into(), error: sparsity, tolerance: SPARSITY_TOLERANCE });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_all(3).unwrap();
        for r in &results {
            eprintln!("{:<28} {:e}", r.name, r.error);
        }
        for r in &results {
            assert!(r.passed(), "{} error {:e}", r.name, r.error);
        }
    }
}
