//! Training loop, cross-validation protocol, baselines, graph-source comparison and
//! loss ablations.

pub mod config;
pub mod cv;
pub mod metrics;
pub mod rundir;
pub mod train;

pub use config::{apply_overrides, CvConfig, LossVariant, RunConfig, TrainConfig, DEFAULT_SEED, DESK_EPOCHS};
pub use rundir::{read_graphs, write_graphs};
pub use cv::{cross_validate, cv_splits, fit_full, fold_seed, run_ablation, run_graph_comparison, FoldRecord, RunRecord};
pub use metrics::{auroc, mean_std};
pub use train::{make_batches, train_model, train_step, EpochRecord, TrainOutcome};

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, PreparedCohort};
use crate::numerics::{Mode, Tape, Tensor};
use crate::params::Bindings;

/// Logits of the graph-free baseline: encoder output flattened to `v·o`, then MLP.
pub fn timeseries_baseline_forward(model: &Model, data: &PreparedCohort, idx: &[usize]) -> Result<Tensor> {
    if model.config.kind != ModelKind::Baseline {
        return Err(Error::InvalidArgument("model is not a time-series baseline".into()));
    }
    let tape = Tape::new();
    let b = Bindings::frozen(&tape, &model.store);
    let mut bn = model.bn.clone();
    let out = model.net.forward(&b, data, idx, &mut bn, Mode::Eval)?;
    Ok((*out.logits.value()).clone())
}
