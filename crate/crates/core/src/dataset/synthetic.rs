//! Synthetic cohorts whose classes differ only in their ROI covariance structure.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cohort::{BoldSample, Cohort, ModulePartition};
use super::features::NodeFeatureMode;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Prng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub rois: Vec<usize>,
}

/// Correlation offset on every edge between two modules (or inside one when
/// `module_a == module_b`), one entry per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlock {
    pub module_a: usize,
    pub module_b: usize,
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub class_names: Vec<String>,
    /// Class proportions; normalized before use.
    pub class_balance: Vec<f64>,
    pub modules: Vec<ModuleSpec>,
    /// Within-module correlation shared by every class.
    pub base_correlation: f64,
    pub planted: Vec<PlantedBlock>,
    /// Standard deviation of independent noise added to every ROI.
    pub noise: f64,
    pub node_feature_mode: NodeFeatureMode,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let module = |name: &str, start: usize| ModuleSpec {
            name: name.into(),
            rois: (start..start + 4).collect(),
        };
        Self {
            n: 200,
            v: 16,
            t: 64,
            class_names: vec!["class0".into(), "class1".into()],
            class_balance: vec![0.5, 0.5],
            modules: vec![module("M0", 0), module("M1", 4), module("M2", 8)],
            base_correlation: 0.2,
            planted: vec![PlantedBlock {
                module_a: 0,
                module_b: 0,
                delta: vec![0.0, 0.4],
            }],
            noise: 0.5,
            node_feature_mode: NodeFeatureMode::Pearson,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.class_names.len();
        if self.n == 0 || self.v < 2 || self.t < 2 {
            return Err(Error::Config(format!(
                "need n ≥ 1, v ≥ 2, t ≥ 2 (got n={}, v={}, t={})",
                self.n, self.v, self.t
            )));
        }
        if c == 0 || self.class_balance.len() != c {
            return Err(Error::Config(format!(
                "{} class names but {} balance entries",
                c,
                self.class_balance.len()
            )));
        }
        if self.class_balance.iter().any(|&b| !(b >= 0.0)) || self.class_balance.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("class balance must be nonnegative with positive sum".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be nonnegative".into()));
        }
        let mut seen = vec![false; self.v];
        for m in &self.modules {
            if m.rois.is_empty() {
                return Err(Error::Config(format!("module '{}' is empty", m.name)));
            }
            for &r in &m.rois {
                if r >= self.v || seen[r] {
                    return Err(Error::Config(format!(
                        "module '{}' lists ROI {r} that is out of range or already assigned",
                        m.name
                    )));
                }
                seen[r] = true;
            }
        }
        for b in &self.planted {
            if b.module_a >= self.modules.len() || b.module_b >= self.modules.len() {
                return Err(Error::Config("planted block names an unknown module".into()));
            }
            if b.delta.len() != c {
                return Err(Error::Config(format!(
                    "planted block has {} deltas for {c} classes",
                    b.delta.len()
                )));
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> ModulePartition {
        let mut assignment = vec![None; self.v];
        for (m, spec) in self.modules.iter().enumerate() {
            for &r in &spec.rois {
                assignment[r] = Some(m);
            }
        }
        ModulePartition {
            names: self.modules.iter().map(|m| m.name.clone()).collect(),
            assignment,
        }
    }

    /// Number of samples per class; rounding slack goes to the last class.
    pub fn class_counts(&self) -> Vec<usize> {
        let total: f64 = self.class_balance.iter().sum();
        let mut counts: Vec<usize> = self
            .class_balance
            .iter()
            .map(|b| (self.n as f64 * b / total).round() as usize)
            .collect();
        let last = counts.len() - 1;
        let head: usize = counts[..last].iter().sum::<usize>().min(self.n);
        counts[last] = self.n - head;
        counts
    }

    /// Signal covariance `Σ_c` per class: unit diagonal, `base_correlation` inside every
    /// module, planted deltas on their blocks, plus `noise²` on the diagonal.
    pub fn class_covariances(&self) -> Result<Vec<Tensor>> {
        self.validate()?;
        let v = self.v;
        let partition = self.partition();
        (0..self.class_names.len())
            .map(|c| {
                let mut s = Tensor::eye(v);
                for p in 0..v {
                    for q in 0..v {
                        if p != q && partition.assignment[p].is_some() && partition.assignment[p] == partition.assignment[q] {
                            s.set(p, q, self.base_correlation);
                        }
                    }
                }
                for b in &self.planted {
                    for &p in &self.modules[b.module_a].rois {
                        for &q in &self.modules[b.module_b].rois {
                            if p != q {
                                s.set(p, q, s.at(p, q) + b.delta[c]);
                                if b.module_a != b.module_b {
                                    s.set(q, p, s.at(q, p) + b.delta[c]);
                                }
                            }
                        }
                    }
                }
                for p in 0..v {
                    s.set(p, p, s.at(p, p) + self.noise * self.noise);
                }
                Ok(s)
            })
            .collect()
    }
}

fn cholesky(s: &Tensor, class: &str) -> Result<DMatrix<f64>> {
    let v = s.rows();
    DMatrix::from_row_slice(v, v, s.data())
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(format!("covariance of class '{class}'")))
}

/// Draws a cohort: every time point of a class-`c` sample is an independent
/// `N(0, Σ_c)` vector. Sample `i` uses its own stream derived from `(seed, i)`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Cohort> {
    let covs = cfg.class_covariances()?;
    let factors = covs
        .iter()
        .zip(&cfg.class_names)
        .map(|(s, name)| cholesky(s, name))
        .collect::<Result<Vec<_>>>()?;

    let mut labels: Vec<usize> = cfg
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
        .collect();
    Prng::new(derive_seed(cfg.seed, &[u64::MAX])).shuffle(&mut labels);

    let (v, t) = (cfg.v, cfg.t);
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = Prng::new(derive_seed(cfg.seed, &[i as u64]));
            let l = &factors[label];
            let mut x = Tensor::zeros([v, t]);
            let mut z = vec![0.0; v];
            for tau in 0..t {
                z.iter_mut().for_each(|zi| *zi = rng.normal());
                for p in 0..v {
                    let mut acc = 0.0;
                    for (q, zq) in z.iter().enumerate().take(p + 1) {
                        acc += l[(p, q)] * zq;
                    }
                    x.set(p, tau, acc);
                }
            }
            BoldSample::new(x, label)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cohort = Cohort::new(samples, cfg.class_names.clone(), cfg.partition())?;
    cohort.generator = Some(cfg.clone());
    Ok(cohort)
}

/// Cohort whose classes differ only in the per-ROI signal variance (no covariance
/// structure); used to exercise encoders without any graph signal.
pub fn generate_variance_cohort(n: usize, v: usize, t: usize, scale: f64, seed: u64) -> Result<Cohort> {
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let sd = if label == 1 { scale } else { 1.0 };
            let mut rng = Prng::new(derive_seed(seed, &[i as u64]));
            let x = Tensor::new([v, t], (0..v * t).map(|_| sd * rng.normal()).collect())?;
            BoldSample::new(x, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(
        samples,
        vec!["low".into(), "high".into()],
        ModulePartition::unassigned(v),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::pearson_matrix;

    #[test]
    fn shapes_and_class_counts() {
        let cfg = SyntheticConfig { n: 30, class_balance: vec![0.6, 0.4], ..Default::default() };
        let c = generate_synthetic(&cfg).unwrap();
        assert_eq!(c.n(), 30);
        assert_eq!((c.v(), c.t()), (16, 64));
        let ones = c.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 12);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let cfg = SyntheticConfig { n: 10, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(&SyntheticConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.samples[0].x, other.samples[0].x);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let mut cfg = SyntheticConfig { n: 4, noise: 0.0, ..Default::default() };
        cfg.planted[0].delta = vec![0.0, -0.9];
        assert!(matches!(generate_synthetic(&cfg), Err(Error::NotPositiveDefinite(_))));
    }

    /// Frobenius distance between the class-`c` sample covariance and `Σ_c`.
    fn covariance_error(cohort: &Cohort, cfg: &SyntheticConfig, c: usize, target: &Tensor) -> (f64, usize) {
        let v = cfg.v;
        let mut acc = Tensor::zeros([v, v]);
        let mut count = 0usize;
        for s in cohort.samples.iter().filter(|s| s.label == c) {
            for tau in 0..cfg.t {
                for p in 0..v {
                    for q in 0..v {
                        let val = acc.at(p, q) + s.x.at(p, tau) * s.x.at(q, tau);
                        acc.set(p, q, val);
                    }
                }
            }
            count += cfg.t;
        }
        let frob = acc
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a / count as f64 - b).powi(2))
            .sum::<f64>()
            .sqrt();
        (frob, count)
    }

    #[test]
    fn empirical_covariance_converges() {
        // E‖Ŝ − Σ‖²_F = Σ_pq (Σ_pp Σ_qq + Σ_pq²) / N for Gaussian draws
        let cfg = SyntheticConfig { n: 200, ..Default::default() };
        let cohort = generate_synthetic(&cfg).unwrap();
        for (c, target) in cfg.class_covariances().unwrap().iter().enumerate() {
            let (frob, count) = covariance_error(&cohort, &cfg, c, target);
            let mut expected_sq = 0.0;
            for p in 0..cfg.v {
                for q in 0..cfg.v {
                    expected_sq += target.at(p, p) * target.at(q, q) + target.at(p, q).powi(2);
                }
            }
            let expected = (expected_sq / count as f64).sqrt();
            assert!(frob < 1.25 * expected, "class {c}: {frob} vs expected {expected}");
        }
    }

    // With v = 16 and 6400 draws the expected Frobenius error of a sample covariance is
    // about 0.21 even for unit variances, so the 0.15 bound cannot hold.
    #[test]
    #[ignore = "0.15 bound is below the sampling error of a 16×16 covariance at 6400 draws"]
    fn empirical_covariance_within_fixed_bound() {
        let cfg = SyntheticConfig { n: 200, ..Default::default() };
        let cohort = generate_synthetic(&cfg).unwrap();
        for (c, target) in cfg.class_covariances().unwrap().iter().enumerate() {
            let (frob, _) = covariance_error(&cohort, &cfg, c, target);
            assert!(frob < 0.15, "class {c}: frobenius distance {frob}");
        }
    }

    #[test]
    fn planted_edges_separate_classes_in_pearson() {
        let cfg = SyntheticConfig::default();
        let cohort = generate_synthetic(&cfg).unwrap();
        let rois = &cfg.modules[0].rois;
        let mut mean = [0.0; 2];
        let mut count = [0usize; 2];
        for s in &cohort.samples {
            let p = pearson_matrix(&s.x).unwrap();
            for (i, &a) in rois.iter().enumerate() {
                for &b in &rois[i + 1..] {
                    mean[s.label] += p.at(a, b);
                    count[s.label] += 1;
                }
            }
        }
        let diff = mean[1] / count[1] as f64 - mean[0] / count[0] as f64;
        assert!(diff >= 0.2, "class difference on planted edges {diff}");
    }
}
