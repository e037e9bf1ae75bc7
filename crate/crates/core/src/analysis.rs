//! Group-level interpretation of generated graphs: mean heatmaps, per-edge Welch
//! t-tests between two classes, and module difference scores `T_u`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{format_f64, write_json, ModulePartition};
use crate::error::{Error, Result};
use crate::numerics::{t_two_sided_p, Tensor};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    #[default]
    None,
    /// Threshold divided by the number of tested edges `v(v−1)/2`.
    Bonferroni,
}

impl std::str::FromStr for Correction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "bonferroni" => Ok(Self::Bonferroni),
            other => Err(format!("unknown correction '{other}' (none|bonferroni)")),
        }
    }
}

fn check_uniform(graphs: &[Tensor]) -> Result<usize> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no graphs given".into()))?;
    let v = first.rows();
    for g in graphs {
        let (r, c) = g.dims2()?;
        if r != v || c != v {
            return Err(Error::shape("analysis", format!("expected {v}×{v} graph, got {r}×{c}")));
        }
    }
    Ok(v)
}

/// Entrywise mean over `graphs`, restricted to assigned ROIs in module order.
/// Returns the matrix and the ROI index behind each of its rows.
pub fn mean_heatmap(graphs: &[Tensor], partition: &ModulePartition) -> Result<(Tensor, Vec<usize>)> {
    let v = check_uniform(graphs)?;
    if partition.len() != v {
        return Err(Error::shape("mean_heatmap", format!("partition covers {} ROIs, graphs have {v}", partition.len())));
    }
    let order = partition.grouped_order();
    let k = order.len();
    let mut out = Tensor::zeros([k, k]);
    for g in graphs {
        for (a, &p) in order.iter().enumerate() {
            for (b, &q) in order.iter().enumerate() {
                out.set(a, b, out.at(a, b) + g.at(p, q));
            }
        }
    }
    let n = graphs.len() as f64;
    Ok((out.map(|x| x / n), order))
}

/// Per-edge Welch test of class A against class B.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSignificance {
    pub t: Tensor,
    pub p: Tensor,
    /// `(p, q)` with `p < q` and p-value below `threshold`.
    pub edges: Vec<(usize, usize)>,
    pub threshold: f64,
}

/// Welch statistic and Welch–Satterthwaite degrees of freedom; `None` when both
/// groups have zero variance.
fn welch(a: &[f64], b: &[f64]) -> (f64, Option<f64>) {
    let moments = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let constant = x.iter().all(|&y| y == x[0]);
        let var = if constant { 0.0 } else { x.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0) };
        (m, var / n, n)
    };
    let (ma, sa, na) = moments(a);
    let (mb, sb, nb) = moments(b);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return (0.0, None);
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    (t, Some(dof))
}

pub fn edge_ttest(group_a: &[Tensor], group_b: &[Tensor], correction: Correction) -> Result<EdgeSignificance> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "each group needs at least 2 graphs, got {} and {}",
            group_a.len(),
            group_b.len()
        )));
    }
    let v = check_uniform(group_a)?;
    if check_uniform(group_b)? != v {
        return Err(Error::shape("edge_ttest", "groups have different ROI counts"));
    }
    let tested = (v * (v - 1) / 2).max(1) as f64;
    let threshold = match correction {
        Correction::None => SIGNIFICANCE_LEVEL,
        Correction::Bonferroni => SIGNIFICANCE_LEVEL / tested,
    };
    let mut t = Tensor::zeros([v, v]);
    let mut p = Tensor::ones([v, v]);
    let mut edges = Vec::new();
    let mut xa = vec![0.0; group_a.len()];
    let mut xb = vec![0.0; group_b.len()];
    for i in 0..v {
        for j in i + 1..v {
            for (x, g) in xa.iter_mut().zip(group_a) {
                *x = g.at(i, j);
            }
            for (x, g) in xb.iter_mut().zip(group_b) {
                *x = g.at(i, j);
            }
            let (stat, pv) = match welch(&xa, &xb) {
                (_, None) => {
                    let (ma, mb) = (xa[0], xb[0]);
                    if ma == mb {
                        (0.0, 1.0)
                    } else {
                        (if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY }, 0.0)
                    }
                }
                (stat, Some(dof)) => (stat, t_two_sided_p(stat, dof)?),
            };
            t.set(i, j, stat);
            t.set(j, i, stat);
            p.set(i, j, pv);
            p.set(j, i, pv);
            if pv < threshold {
                edges.push((i, j));
            }
        }
    }
    Ok(EdgeSignificance { t, p, edges, threshold })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleScore {
    pub module: usize,
    pub name: String,
    pub size: usize,
    pub score: f64,
}

/// `T_u = Σ_{(p,q)∈E^d} (𝟙[p∈M_u] + 𝟙[q∈M_u]) / |M_u|`, skipping edges that touch an
/// unassigned ROI. Sorted by descending score, ties by module index.
pub fn module_difference_scores(edges: &[(usize, usize)], partition: &ModulePartition) -> Result<Vec<ModuleScore>> {
    partition.validate()?;
    let sizes: Vec<usize> = (0..partition.module_count()).map(|m| partition.members(m).len()).collect();
    let mut hits = vec![0usize; sizes.len()];
    for &(p, q) in edges {
        let module = |r: usize| -> Result<Option<usize>> {
            partition
                .assignment
                .get(r)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("edge endpoint {r} outside the partition")))
        };
        if let (Some(a), Some(b)) = (module(p)?, module(q)?) {
            hits[a] += 1;
            hits[b] += 1;
        }
    }
    let mut scores: Vec<ModuleScore> = sizes
        .iter()
        .enumerate()
        .map(|(m, &size)| ModuleScore {
            module: m,
            name: partition.names[m].clone(),
            size,
            score: hits[m] as f64 / size as f64,
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.module.cmp(&b.module)));
    Ok(scores)
}

fn module_name(partition: &ModulePartition, roi: usize) -> &str {
    match partition.assignment[roi] {
        Some(m) => &partition.names[m],
        None => "UNASSIGNED",
    }
}

/// Matrix CSV with two header rows (ROI index, module) and two leading label columns.
pub fn labelled_matrix_csv(m: &Tensor, rois: &[usize], partition: &ModulePartition) -> String {
    let mut out = String::from("roi,");
    for r in rois {
        let _ = write!(out, ",{r}");
    }
    out.push_str("\n,module");
    for &r in rois {
        let _ = write!(out, ",{}", module_name(partition, r));
    }
    out.push('\n');
    for (a, &r) in rois.iter().enumerate() {
        let _ = write!(out, "{r},{}", module_name(partition, r));
        for b in 0..rois.len() {
            let _ = write!(out, ",{}", format_f64(m.at(a, b)));
        }
        out.push('\n');
    }
    out
}

pub fn module_scores_csv(scores: &[ModuleScore]) -> String {
    let mut out = String::from("module,size,T_u,rank\n");
    for (rank, s) in scores.iter().enumerate() {
        let _ = writeln!(out, "{},{},{},{}", s.name, s.size, format_f64(s.score), rank + 1);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub significance: EdgeSignificance,
    pub scores: Vec<ModuleScore>,
}

impl AnalysisReport {
    pub fn top(&self, k: usize) -> &[ModuleScore] {
        &self.scores[..k.min(self.scores.len())]
    }
}

/// Full analysis of one set of labelled graphs; class 1 is tested against class 0.
pub fn analyze(
    graphs: &[Tensor],
    labels: &[usize],
    partition: &ModulePartition,
    correction: Correction,
) -> Result<AnalysisReport> {
    if graphs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} graphs but {} labels", graphs.len(), labels.len())));
    }
    let group = |c: usize| -> Vec<Tensor> {
        graphs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(g, _)| g.clone()).collect()
    };
    let significance = edge_ttest(&group(1), &group(0), correction)?;
    let scores = module_difference_scores(&significance.edges, partition)?;
    Ok(AnalysisReport { significance, scores })
}

fn write(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Writes heatmaps, t/p matrices, module scores and `analysis.json` into `dir`.
pub fn write_analysis(
    dir: &Path,
    graphs: &[Tensor],
    labels: &[usize],
    class_names: &[String],
    partition: &ModulePartition,
    correction: Correction,
) -> Result<AnalysisReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (all, order) = mean_heatmap(graphs, partition)?;
    write(&dir.join("heatmap_all.csv"), &labelled_matrix_csv(&all, &order, partition))?;
    for (c, name) in class_names.iter().enumerate() {
        let members: Vec<Tensor> = graphs.iter().zip(labels).filter(|(_, &l)| l == c).map(|(g, _)| g.clone()).collect();
        if members.is_empty() {
            continue;
        }
        let (h, _) = mean_heatmap(&members, partition)?;
        write(&dir.join(format!("heatmap_class_{name}.csv")), &labelled_matrix_csv(&h, &order, partition))?;
    }
    let report = analyze(graphs, labels, partition, correction)?;
    let every: Vec<usize> = (0..partition.len()).collect();
    write(&dir.join("tstats.csv"), &labelled_matrix_csv(&report.significance.t, &every, partition))?;
    write(&dir.join("pvalues.csv"), &labelled_matrix_csv(&report.significance.p, &every, partition))?;
    write(&dir.join("module_scores.csv"), &module_scores_csv(&report.scores))?;
    write_json(
        &dir.join("analysis.json"),
        &serde_json::json!({
            "test": "welch",
            "dof": "welch-satterthwaite",
            "correction": correction,
            "threshold": report.significance.threshold,
            "contrast": [class_names.get(1), class_names.first()],
            "significant_edges": report.significance.edges.len(),
            "top3": report.top(3).iter().map(|s| &s.name).collect::<Vec<_>>(),
        }),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn partition(sizes: &[usize], unassigned: usize) -> ModulePartition {
        let mut assignment = Vec::new();
        for (m, &s) in sizes.iter().enumerate() {
            assignment.extend(std::iter::repeat_n(Some(m), s));
        }
        assignment.extend(std::iter::repeat_n(None, unassigned));
        ModulePartition::new((0..sizes.len()).map(|m| format!("M{m}")).collect(), assignment).unwrap()
    }

    fn score_of(scores: &[ModuleScore], m: usize) -> f64 {
        scores.iter().find(|s| s.module == m).unwrap().score
    }

    #[test]
    fn heatmap_drops_unassigned_and_groups() {
        let p = ModulePartition::new(vec!["a".into(), "b".into()], vec![Some(1), None, Some(0)]).unwrap();
        let g = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]]).unwrap();
        let (h, order) = mean_heatmap(&[g], &p).unwrap();
        assert_eq!(order, vec![2, 0]);
        assert_eq!(h.data(), &[9.0, 7.0, 3.0, 1.0]);
    }

    #[test]
    fn heatmap_of_zeros_and_ones() {
        let p = partition(&[3], 0);
        let (h, _) = mean_heatmap(&[Tensor::zeros([3, 3]), Tensor::ones([3, 3])], &p).unwrap();
        assert!(h.data().iter().all(|&x| x == 0.5));
        assert!(mean_heatmap(&[], &p).is_err());
    }

    #[test]
    fn identical_groups_are_null() {
        let mut rng = crate::numerics::Prng::new(3);
        let g: Vec<Tensor> = (0..5)
            .map(|_| {
                let mut m = Tensor::zeros([4, 4]);
                for i in 0..4 {
                    for j in i..4 {
                        let x = rng.uniform();
                        m.set(i, j, x);
                        m.set(j, i, x);
                    }
                }
                m
            })
            .collect();
        let s = edge_ttest(&g, &g, Correction::None).unwrap();
        assert!(s.t.data().iter().all(|&x| x == 0.0));
        assert!(s.p.data().iter().all(|&x| x == 1.0));
        assert!(s.edges.is_empty());
    }

    #[test]
    fn separated_means_are_significant() {
        let mut rng = crate::numerics::Prng::new(5);
        let mk = |mean: f64, rng: &mut crate::numerics::Prng| {
            let x = mean + 1e-3 * rng.normal();
            Tensor::from_rows(&[vec![1.0, x], vec![x, 1.0]]).unwrap()
        };
        let a: Vec<Tensor> = (0..20).map(|_| mk(0.8, &mut rng)).collect();
        let b: Vec<Tensor> = (0..20).map(|_| mk(0.2, &mut rng)).collect();
        let s = edge_ttest(&a, &b, Correction::None).unwrap();
        assert!(s.p.at(0, 1) < 1e-6);
        assert_eq!(s.p.at(0, 1), s.p.at(1, 0));
        assert_eq!(s.edges, vec![(0, 1)]);
    }

    #[test]
    fn welch_matches_hand_arithmetic() {
        // means 2 and 5, sample variances 1 and 4, n = 3 each
        let (t, dof) = welch(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        let se2: f64 = 1.0 / 3.0 + 4.0 / 3.0;
        assert!((t - (-3.0 / se2.sqrt())).abs() < 1e-12);
        let expect = se2 * se2 / ((1.0f64 / 3.0).powi(2) / 2.0 + (4.0f64 / 3.0).powi(2) / 2.0);
        assert!((dof.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn constant_groups_with_different_means() {
        let a = vec![Tensor::full([2, 2], 0.7); 3];
        let b = vec![Tensor::full([2, 2], 0.1); 3];
        let s = edge_ttest(&a, &b, Correction::None).unwrap();
        assert_eq!(s.p.at(0, 1), 0.0);
        assert_eq!(s.t.at(0, 1), f64::INFINITY);
        assert!(edge_ttest(&a[..1], &b, Correction::None).is_err());
    }

    #[test]
    fn bonferroni_threshold() {
        let a = vec![Tensor::full([5, 5], 0.0); 2];
        let s = edge_ttest(&a, &a, Correction::Bonferroni).unwrap();
        assert!((s.threshold - 0.005).abs() < 1e-15);
    }

    #[test]
    fn score_examples() {
        let p = partition(&[4, 8], 0);
        assert!(module_difference_scores(&[], &p).unwrap().iter().all(|s| s.score == 0.0));
        let s = module_difference_scores(&[(0, 1)], &p).unwrap();
        assert_eq!(score_of(&s, 0), 0.5);
        let s = module_difference_scores(&[(0, 5)], &p).unwrap();
        assert_eq!(score_of(&s, 0), 0.25);
        assert_eq!(score_of(&s, 1), 0.125);
        assert_eq!(s[0].module, 0);
    }

    #[test]
    fn unassigned_edges_are_skipped() {
        let p = partition(&[2], 2);
        let s = module_difference_scores(&[(0, 2), (2, 3)], &p).unwrap();
        assert_eq!(s[0].score, 0.0);
    }

    #[test]
    fn csv_header_rows() {
        let p = ModulePartition::new(vec!["a".into()], vec![Some(0), None]).unwrap();
        let csv = labelled_matrix_csv(&Tensor::eye(2), &[0, 1], &p);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "roi,,0,1");
        assert_eq!(lines[1], ",module,a,UNASSIGNED");
        assert!(lines[3].starts_with("1,UNASSIGNED,0.0"));
    }

    fn edge_set(v: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::btree_set((0..v, 0..v).prop_filter("p<q", |(a, b)| a < b), 0..20)
            .prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #[test]
        fn scores_are_additive(a in edge_set(10), b in edge_set(10)) {
            let b: Vec<_> = b.into_iter().filter(|e| !a.contains(e)).collect();
            let p = partition(&[3, 4, 2], 1);
            let sa = module_difference_scores(&a, &p).unwrap();
            let sb = module_difference_scores(&b, &p).unwrap();
            let both: Vec<_> = a.iter().chain(&b).copied().collect();
            let s = module_difference_scores(&both, &p).unwrap();
            for m in 0..3 {
                prop_assert!((score_of(&s, m) - score_of(&sa, m) - score_of(&sb, m)).abs() < 1e-12);
            }
        }

        #[test]
        fn relabeling_permutes_scores(edges in edge_set(9), perm in Just(vec![2usize, 0, 1]).prop_shuffle()) {
            let p = partition(&[3, 4, 2], 0);
            let relabelled = ModulePartition::new(
                p.names.clone(),
                p.assignment.iter().map(|a| a.map(|m| perm[m])).collect(),
            )
            .unwrap();
            let s = module_difference_scores(&edges, &p).unwrap();
            let r = module_difference_scores(&edges, &relabelled).unwrap();
            for m in 0..3 {
                prop_assert_eq!(score_of(&s, m), score_of(&r, perm[m]));
            }
        }
    }
}
