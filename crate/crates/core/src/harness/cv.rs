//! Repeated stratified cross-validation and the controlled comparisons built on it.

use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_kfold, Cohort, FoldSplit};
use crate::error::{Error, Result};
use crate::graphgen::LossWeights;
use crate::harness::config::{LossVariant, RunConfig};
use crate::harness::metrics::mean_std;
use crate::harness::train::{train_model, EpochRecord, TrainOutcome};
use crate::model::{GraphSource, Model, PreparedCohort};
use crate::numerics::derive_seed;

const SPLIT_TAG: u64 = 0x5350_4c49_54;
const FULL_FIT_TAG: u64 = 0x4655_4c4c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub rep: usize,
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub history: Vec<EpochRecord>,
    pub final_auroc: f64,
}

/// Outcome of one cross-validated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub weights: LossWeights,
    pub folds: Vec<FoldRecord>,
    pub mean_auroc: f64,
    pub std_auroc: f64,
}

impl RunRecord {
    pub fn final_aurocs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.final_auroc).collect()
    }
}

/// Seed of one fold-run, a pure function of the master seed and its position.
pub fn fold_seed(master: u64, rep: usize, fold: usize) -> u64 {
    derive_seed(master, &[rep as u64, fold as u64])
}

pub fn cv_splits(cohort: &Cohort, cfg: &RunConfig) -> Result<Vec<FoldSplit>> {
    stratified_kfold(
        &cohort.labels(),
        cfg.cv.folds,
        cfg.cv.repetitions,
        derive_seed(cfg.seed, &[SPLIT_TAG]),
    )
}

fn binary_check(cohort: &Cohort) -> Result<()> {
    if cohort.num_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "AUROC evaluation needs exactly two classes, cohort has {}",
            cohort.num_classes()
        )));
    }
    Ok(())
}

/// Runs `jobs` fold-runs at a time; results come back in split order.
fn run_folds(
    data: &PreparedCohort,
    splits: &[FoldSplit],
    cfg: &RunConfig,
    jobs: usize,
) -> Result<Vec<FoldRecord>> {
    let one = |s: &FoldSplit| -> Result<FoldRecord> {
        let seed = fold_seed(cfg.seed, s.rep, s.fold);
        let TrainOutcome { history, .. } = train_model(data, &s.train, Some(&s.test), cfg, seed)?;
        let final_auroc = history
            .last()
            .and_then(|r| r.test_auroc)
            .ok_or_else(|| Error::InvalidArgument("fold produced no test AUROC".into()))?;
        log::info!("rep {} fold {}: final test AUROC {final_auroc:.4}", s.rep, s.fold);
        Ok(FoldRecord {
            rep: s.rep,
            fold: s.fold,
            seed,
            train: s.train.clone(),
            test: s.test.clone(),
            history,
            final_auroc,
        })
    };
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| splits.par_iter().map(one).collect());
    }
    let _ = jobs;
    splits.iter().map(one).collect()
}

pub fn cross_validate(cohort: &Cohort, cfg: &RunConfig, jobs: usize) -> Result<RunRecord> {
    cfg.validate()?;
    binary_check(cohort)?;
    let data = PreparedCohort::new(cohort, &cfg.model_config())?;
    let splits = cv_splits(cohort, cfg)?;
    let folds = run_folds(&data, &splits, cfg, jobs)?;
    let (mean_auroc, std_auroc) = mean_std(&folds.iter().map(|f| f.final_auroc).collect::<Vec<_>>());
    Ok(RunRecord {
        label: run_label(cfg),
        weights: cfg.effective_weights(),
        folds,
        mean_auroc,
        std_auroc,
    })
}

fn run_label(cfg: &RunConfig) -> String {
    match cfg.model {
        crate::model::ModelKind::Baseline => format!("baseline-{}", cfg.encoder.variant.name()),
        crate::model::ModelKind::Graph => format!("{}/{}", cfg.graph_source.name(), cfg.loss_variant.name()),
    }
}

/// CE, CE+GL, CE+SL and the full objective on identical folds and seeds.
pub fn run_ablation(cohort: &Cohort, cfg: &RunConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    LossVariant::ALL
        .into_iter()
        .map(|variant| {
            let c = RunConfig { loss_variant: variant, ..cfg.clone() };
            let mut rec = cross_validate(cohort, &c, jobs)?;
            rec.label = variant.name().to_string();
            Ok(rec)
        })
        .collect()
}

/// Learnable, Pearson and uniform graphs with the same features, predictor, folds and seeds.
pub fn run_graph_comparison(cohort: &Cohort, cfg: &RunConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    [GraphSource::Learnable, GraphSource::Pearson, GraphSource::Uniform]
        .into_iter()
        .map(|source| {
            let c = RunConfig { graph_source: source, ..cfg.clone() };
            let mut rec = cross_validate(cohort, &c, jobs)?;
            rec.label = source.name().to_string();
            Ok(rec)
        })
        .collect()
}

/// Trains on every sample; the resulting model supplies the cohort's graphs.
pub fn fit_full(cohort: &Cohort, cfg: &RunConfig) -> Result<(Model, Vec<EpochRecord>)> {
    let data = PreparedCohort::new(cohort, &cfg.model_config())?;
    let all: Vec<usize> = (0..cohort.n()).collect();
    let out = train_model(&data, &all, None, cfg, derive_seed(cfg.seed, &[FULL_FIT_TAG]))?;
    Ok((out.model, out.history))
}
