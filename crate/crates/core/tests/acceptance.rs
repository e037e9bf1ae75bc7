//! Acceptance criteria 1–9. Runs without the libtest harness so every criterion
//! prints its own pass/fail line; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use fbnet::analysis::{analyze, Correction};
use fbnet::dataset::{generate_synthetic, pearson_matrix, NodeFeatureMode, SyntheticConfig};
use fbnet::graphgen::{graph_from_features, LossWeights};
use fbnet::harness::rundir::metrics_csv;
use fbnet::harness::{auroc, cross_validate, fit_full, run_ablation, LossVariant, RunConfig};
use fbnet::model::{GraphSource, PreparedCohort};
use fbnet::numerics::{t_two_sided_p, Prng, Tensor};
use fbnet::selftest;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

// 1
fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut results = selftest::operation_gradient_checks(1).expect("operation checks run");
    for variant in [fbnet::encoder::EncoderKind::Cnn, fbnet::encoder::EncoderKind::Gru] {
        results.push(
            selftest::end_to_end_gradient_check(variant, LossWeights::default(), selftest::END_TO_END_SEED)
                .expect("end-to-end check runs"),
        );
    }
    let elapsed = start.elapsed();
    let worst = results.iter().max_by(|a, b| a.error.total_cmp(&b.error)).unwrap();
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    let e2e: Vec<String> = results
        .iter()
        .filter(|r| r.name.starts_with("end_to_end"))
        .map(|r| format!("{} {:.2e}", r.name, r.error))
        .collect();
    outcome(
        failing.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst {} {:.2e} (< 1e-4); {}; failing {:?}; {:.1}s (< 120s)",
            results.len(),
            worst.name,
            worst.error,
            e2e.join(", "),
            failing,
            elapsed.as_secs_f64()
        ),
    )
}

// 2
fn loss_identities() -> Outcome {
    let (inner, intra, sparsity) = selftest::loss_identity_errors(100, 2).expect("identity checks run");
    outcome(
        inner < 1e-8 && intra < 1e-8 && sparsity < 1e-12,
        format!("100 batches: inner {inner:.1e}, intra {intra:.1e} (< 1e-8); sparsity {sparsity:.1e} (< 1e-12)"),
    )
}

// 3
fn graph_invariants() -> Outcome {
    let mut rng = Prng::new(3);
    let (mut asym, mut min_entry, mut max_entry, mut min_quad) = (0.0f64, f64::INFINITY, 0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        let v = 2 + rng.below(15);
        let o = 1 + rng.below(8);
        let scale = 0.1 + 5.0 * rng.uniform();
        let h = Tensor::new([v, o], (0..v * o).map(|_| scale * rng.normal()).collect()).unwrap();
        let a = graph_from_features(&h).unwrap();
        for i in 0..v {
            for j in 0..v {
                asym = asym.max((a.at(i, j) - a.at(j, i)).abs());
                min_entry = min_entry.min(a.at(i, j));
                max_entry = max_entry.max(a.at(i, j));
            }
        }
        for _ in 0..10 {
            let x: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
            let mut q = 0.0;
            for i in 0..v {
                for j in 0..v {
                    q += x[i] * a.at(i, j) * x[j];
                }
            }
            min_quad = min_quad.min(q);
        }
    }
    let (mut p_asym, mut p_diag) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let v = 2 + rng.below(10);
        let t = 8 + rng.below(40);
        let x = Tensor::new([v, t], (0..v * t).map(|_| rng.normal()).collect()).unwrap();
        let p = pearson_matrix(&x).unwrap();
        for i in 0..v {
            p_diag = p_diag.max((p.at(i, i) - 1.0).abs());
            for j in 0..v {
                p_asym = p_asym.max((p.at(i, j) - p.at(j, i)).abs());
            }
        }
    }
    outcome(
        asym <= 1e-10 && min_entry > 0.0 && max_entry <= 1.0 && min_quad >= -1e-10 && p_asym == 0.0 && p_diag == 0.0,
        format!(
            "1000 graphs: asymmetry {asym:.1e}, entries in [{min_entry:.2e}, {max_entry:.3}], min xᵀAx {min_quad:.2e}; \
             pearson asymmetry {p_asym:.1e}, |diag−1| {p_diag:.1e}"
        ),
    )
}

// 4
fn auroc_exactness() -> Outcome {
    let (mut cases, mut mismatches) = (0usize, 0usize);
    for n in 2..=8usize {
        let score_patterns = 3usize.pow(n as u32);
        for mask in 1..(1usize << n) - 1 {
            let labels: Vec<usize> = (0..n).map(|i| (mask >> i) & 1).collect();
            for code in 0..score_patterns {
                let mut c = code;
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        let s = (c % 3) as f64 * 0.5;
                        c /= 3;
                        s
                    })
                    .collect();
                let (mut gt, mut eq, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
                for i in 0..n {
                    if labels[i] == 1 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                    for j in 0..n {
                        if labels[i] == 1 && labels[j] == 0 {
                            if scores[i] > scores[j] {
                                gt += 1;
                            } else if scores[i] == scores[j] {
                                eq += 1;
                            }
                        }
                    }
                }
                let oracle = (gt as f64 + 0.5 * eq as f64) / (pos * neg) as f64;
                cases += 1;
                if auroc(&scores, &labels).unwrap() != oracle {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("{cases} labelled inputs of size 2..8 with three-level tied scores, {mismatches} mismatches"))
}

/// Two-sided Student-t tail by quadrature: with x = √ν·tan θ the density becomes
/// ∝ cos^{ν−1} θ, so p = 1 − ∫₀^{atan(|t|/√ν)} cos^{ν−1} / ∫₀^{π/2} cos^{ν−1}.
fn t_tail_quadrature(t: f64, dof: f64) -> f64 {
    let f = |th: f64| ((dof - 1.0) * th.cos().ln()).exp();
    // beyond this angle the integrand is below e^{-60}
    let cut = if dof > 1.0 { (120.0 / (dof - 1.0)).sqrt().min(std::f64::consts::FRAC_PI_2) } else { std::f64::consts::FRAC_PI_2 };
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let upper = (t.abs() / dof.sqrt()).atan();
    if upper >= cut {
        return 0.0;
    }
    let total = simpson(0.0, cut);
    (total - simpson(0.0, upper)) / total
}

// 5
fn statistical_functions() -> Outcome {
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for &(t, dof, table) in &[(2.228, 10.0, 0.05), (1.960, 1e6, 0.05), (0.0, 7.0, 1.0), (0.0, 1e6, 1.0)] {
        let p = t_two_sided_p(t, dof).unwrap();
        let oracle = t_tail_quadrature(t, dof);
        worst = worst.max((p - oracle).abs());
        lines.push(format!("({t},{dof:e}) → {p:.6} [table {table}]"));
    }
    // Welch tests on Gaussian null graphs: 1035 edges
    let mut rng = Prng::new(5);
    let v = 46;
    let null_group = |rng: &mut Prng| -> Vec<Tensor> {
        (0..20)
            .map(|_| {
                let mut g = Tensor::zeros([v, v]);
                for i in 0..v {
                    for j in i + 1..v {
                        let x = rng.normal();
                        g.set(i, j, x);
                        g.set(j, i, x);
                    }
                }
                g
            })
            .collect()
    };
    let (a, b) = (null_group(&mut rng), null_group(&mut rng));
    let sig = fbnet::analysis::edge_ttest(&a, &b, Correction::None).unwrap();
    let edges = v * (v - 1) / 2;
    let frac = sig.edges.len() as f64 / edges as f64;
    outcome(
        worst < 1e-6 && (0.02..=0.09).contains(&frac),
        format!(
            "max |p − quadrature| {worst:.1e} (< 1e-6): {}; null fraction p<0.05 {frac:.3} over {edges} edges (in [0.02, 0.09])",
            lines.join(", ")
        ),
    )
}

/// Desk configuration of the directional experiment.
fn directional_config() -> RunConfig {
    let mut cfg = RunConfig { node_feature_mode: NodeFeatureMode::Identity, ..RunConfig::default() };
    cfg.encoder.cnn_channels = vec![8, 8, 8];
    cfg.train.eval_every_epoch = false;
    cfg
}

fn directional_cohort(seed: u64) -> SyntheticConfig {
    SyntheticConfig { node_feature_mode: NodeFeatureMode::Identity, seed, ..SyntheticConfig::default() }
}

// 6
fn directional_result() -> Outcome {
    let start = Instant::now();
    let cohort = generate_synthetic(&directional_cohort(7)).unwrap();
    let full = directional_config();
    let uniform = RunConfig { graph_source: GraphSource::Uniform, ..full.clone() };
    let rf = cross_validate(&cohort, &full, 1).unwrap();
    let ru = cross_validate(&cohort, &uniform, 1).unwrap();
    let elapsed = start.elapsed();
    outcome(
        rf.mean_auroc >= 0.80 && ru.mean_auroc <= 0.65 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "n=200 v=16 t=64 delta 0.4 identity features, {} folds × {} epochs: learnable/full {:.3} ± {:.3} (≥ 0.80), \
             uniform {:.3} ± {:.3} (≤ 0.65); {:.0}s (< 900s)",
            rf.folds.len(),
            full.train.epochs,
            rf.mean_auroc,
            rf.std_auroc,
            ru.mean_auroc,
            ru.std_auroc,
            elapsed.as_secs_f64()
        ),
    )
}

// 7
fn ablation_fidelity() -> Outcome {
    let cohort = generate_synthetic(&SyntheticConfig { n: 30, v: 12, t: 32, ..SyntheticConfig::default() }).unwrap();
    let mut cfg = RunConfig::default();
    cfg.encoder.cnn_channels = vec![2, 2, 2];
    cfg.encoder.cnn_kernel = 4;
    cfg.train.epochs = 2;
    let records = run_ablation(&cohort, &cfg, 1).unwrap();
    let labels: Vec<&str> = records.iter().map(|r| r.label.as_str()).collect();
    let expected = ["ce", "ce+gl", "ce+sl", "full"];
    let shared = records.iter().all(|r| {
        r.folds.len() == records[0].folds.len()
            && r.folds.iter().zip(&records[0].folds).all(|(a, b)| a.train == b.train && a.test == b.test && a.seed == b.seed)
    });
    let w = |i: usize| records[i].weights;
    let ce_zero = w(0) == LossWeights::zero();
    let gl = w(1).gamma == 0.0 && w(1).alpha == 1e-3 && w(1).beta == 1e-3;
    let sl = w(2).alpha == 0.0 && w(2).beta == 0.0 && w(2).gamma == 1e-4;
    let full = w(3) == LossWeights { alpha: 1e-3, beta: 1e-3, gamma: 1e-4 };
    let full_variant = LossVariant::Full.apply(LossWeights::default()) == w(3);
    outcome(
        labels == expected && shared && ce_zero && gl && sl && full && full_variant,
        format!(
            "variants {labels:?}, shared folds/seeds {shared}, CE α=β=γ=0 {ce_zero}, CE+GL γ=0 {gl}, CE+SL α=β=0 {sl}, \
             FULL (1e-3, 1e-3, 1e-4) {full}"
        ),
    )
}

// 8
fn interpretability_recovery() -> Outcome {
    let cfg = directional_config();
    let (mut hits, mut lines) = (0, Vec::new());
    for seed in 1..=5u64 {
        let cohort = generate_synthetic(&directional_cohort(seed)).unwrap();
        let (model, _) = fit_full(&cohort, &RunConfig { seed, ..cfg.clone() }).unwrap();
        let data = PreparedCohort::new(&cohort, &cfg.model_config()).unwrap();
        let all: Vec<usize> = (0..cohort.n()).collect();
        let graphs = model.graphs(&data, &all).unwrap();
        let report = analyze(&graphs, &cohort.labels(), &cohort.partition, Correction::None).unwrap();
        let planted = &cohort.partition.names[0];
        let rank = report.scores.iter().position(|s| &s.name == planted).unwrap() + 1;
        let top = &report.scores[0];
        // all-zero scores rank nothing
        if rank == 1 && top.score > 0.0 {
            hits += 1;
        }
        lines.push(format!("seed {seed}: rank {rank} (top {} {:.2}, |E^d| {})", top.name, top.score, report.significance.edges.len()));
    }
    outcome(hits >= 4, format!("planted module ranked first in {hits}/5 generator seeds (≥ 4): {}", lines.join("; ")))
}

// 9
fn determinism() -> Outcome {
    let cohort = generate_synthetic(&SyntheticConfig { n: 40, ..SyntheticConfig::default() }).unwrap();
    let mut cfg = RunConfig::default();
    cfg.encoder.cnn_channels = vec![4, 4, 4];
    cfg.train.epochs = 3;
    cfg.cv.repetitions = 1;
    let a = metrics_csv(&cross_validate(&cohort, &cfg, 1).unwrap());
    let b = metrics_csv(&cross_validate(&cohort, &cfg, 1).unwrap());
    let c = metrics_csv(&cross_validate(&cohort, &cfg, 2).unwrap());
    outcome(
        a == b && a == c,
        format!("{} bytes of metrics.csv, repeat identical {}, --jobs 2 identical {}", a.len(), a == b, a == c),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 gradient correctness", gradient_correctness),
        ("2 loss identities", loss_identities),
        ("3 graph invariants", graph_invariants),
        ("4 AUROC exactness", auroc_exactness),
        ("5 statistical functions", statistical_functions),
        ("6 directional synthetic result", directional_result),
        ("7 ablation fidelity", ablation_fidelity),
        ("8 interpretability recovery", interpretability_recovery),
        ("9 determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        println!(
            "criterion {name}: {} [{:.1}s] {}",
            if o.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
