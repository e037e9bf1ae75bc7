//! Mini-batch training of one model on one index set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::harness::config::RunConfig;
use crate::harness::metrics::auroc;
use crate::model::{Model, ModelKind, PreparedCohort};
use crate::numerics::{adam_step, AdamState, Mode, Prng, Tape};
use crate::params::Bindings;
use crate::predictor::{total_loss, LossBreakdown};

/// Mean loss terms over one epoch's batches and the test AUROC after it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub test_auroc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// Shuffled batches of `size`; a trailing singleton joins the previous batch so
/// batch normalization always sees at least two samples.
pub fn make_batches(idx: &[usize], size: usize, rng: &mut Prng) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    rng.shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

/// One optimizer step on `batch`; returns the logged loss terms.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    data: &PreparedCohort,
    batch: &[usize],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let trainable = model.trainable_ids();
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let (breakdown, grads) = {
        let tape = Tape::new();
        let b = Bindings::new(&tape, &model.store, &trainable);
        let out = model.net.forward(&b, data, batch, &mut model.bn, Mode::Train)?;
        let (loss, breakdown) = match model.config.kind {
            ModelKind::Baseline => {
                let ce = out.logits.cross_entropy(&labels)?;
                let v = ce.item();
                (ce, LossBreakdown { ce: v, total: v, ..LossBreakdown::default() })
            }
            ModelKind::Graph => total_loss(out.logits, &labels, &out.graphs, weights)?,
        };
        if !breakdown.total.is_finite() {
            return Ok(breakdown);
        }
        tape.backward(loss)?;
        (breakdown, b.grads(&trainable))
    };
    let mut params = model.store.values_mut(&trainable);
    adam_step(&mut params, &grads, adam)?;
    Ok(breakdown)
}

/// Trains a fresh model on `train_idx`, logging per-epoch losses and, when `test_idx`
/// is given, test AUROC.
pub fn train_model(
    data: &PreparedCohort,
    train_idx: &[usize],
    test_idx: Option<&[usize]>,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
    if train_idx.len() < 2 || !train_labels.contains(&0) || !train_labels.contains(&1) {
        return Err(Error::InvalidArgument(
            "training set needs at least two samples covering both classes".into(),
        ));
    }
    let num_classes = data.labels.iter().copied().max().unwrap_or(0) + 1;
    let mut model = Model::new(&cfg.model_config(), data.v, data.t, num_classes.max(2), seed)?;
    let trainable = model.trainable_ids();
    let mut adam = AdamState::new(cfg.train.adam(), trainable.iter().map(|&id| model.store.get(id)));
    let weights = cfg.effective_weights();
    let mut rng = Prng::new(seed).fork(&[1]);
    let test_labels: Option<Vec<usize>> = test_idx.map(|t| t.iter().map(|&i| data.labels[i]).collect());
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let batches = make_batches(train_idx, cfg.train.batch_size, &mut rng);
        let mut sum = LossBreakdown::default();
        for (bi, batch) in batches.iter().enumerate() {
            let br = train_step(&mut model, &mut adam, data, batch, &weights)?;
            if !br.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became {} at epoch {epoch}, batch {bi} (ce {}, inner {}, intra {}, sparsity {})",
                    br.total, br.ce, br.inner, br.intra, br.sparsity
                )));
            }
            sum.ce += br.ce;
            sum.inner += br.inner;
            sum.intra += br.intra;
            sum.sparsity += br.sparsity;
            sum.total += br.total;
        }
        let nb = batches.len() as f64;
        let loss = LossBreakdown {
            ce: sum.ce / nb,
            inner: sum.inner / nb,
            intra: sum.intra / nb,
            sparsity: sum.sparsity / nb,
            total: sum.total / nb,
        };
        let last = epoch + 1 == cfg.train.epochs;
        let test_auroc = match (test_idx, &test_labels) {
            (Some(t), Some(l)) if cfg.train.eval_every_epoch || last => {
                Some(auroc(&model.positive_scores(data, t)?, l)?)
            }
            _ => None,
        };
        log::debug!("epoch {epoch}: total {:.6} ce {:.6} auroc {:?}", loss.total, loss.ce, test_auroc);
        history.push(EpochRecord { epoch, loss, test_auroc });
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_indices_and_absorb_singletons() {
        let idx: Vec<usize> = (0..33).collect();
        let b = make_batches(&idx, 16, &mut Prng::new(1));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 17]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        let b = make_batches(&idx[..20], 16, &mut Prng::new(1));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![16, 4]);
    }
}
