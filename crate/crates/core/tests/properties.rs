use proptest::prelude::*;

use fbnet::dataset::{pearson_matrix, stratified_kfold};
use fbnet::graphgen::graph_from_features;
use fbnet::harness::auroc;
use fbnet::numerics::{t_two_sided_p, Tape, Tensor};

fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(0usize..2, n).prop_filter("both classes", |l| l.contains(&0) && l.contains(&1)),
        )
    })
}

fn features(max_v: usize, max_o: usize) -> impl Strategy<Value = Tensor> {
    (2..=max_v, 1..=max_o).prop_flat_map(|(v, o)| {
        prop::collection::vec(-4.0f64..4.0, v * o).prop_map(move |d| Tensor::new([v, o], d).unwrap())
    })
}

proptest! {
    #[test]
    fn auroc_ignores_increasing_transforms((scores, labels) in labelled_scores(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = auroc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubic: Vec<f64> = scores.iter().map(|s| s * s * s + s).collect();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(auroc(&affine, &labels).unwrap(), base);
        prop_assert_eq!(auroc(&cubic, &labels).unwrap(), base);
        prop_assert_eq!(auroc(&exp, &labels).unwrap(), base);
    }

    #[test]
    fn negated_scores_complement_auroc((scores, labels) in labelled_scores()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_follows_roi_permutation(h in features(10, 6), seed in any::<u64>()) {
        let v = h.shape()[0];
        let o = h.shape()[1];
        let mut perm: Vec<usize> = (0..v).collect();
        let mut s = seed;
        for i in (1..v).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let rows: Vec<f64> = perm.iter().flat_map(|&p| h.data()[p * o..(p + 1) * o].to_vec()).collect();
        let permuted = Tensor::new([v, o], rows).unwrap();
        let a = graph_from_features(&h).unwrap();
        let b = graph_from_features(&permuted).unwrap();
        for i in 0..v {
            for j in 0..v {
                prop_assert!((b.at(i, j) - a.at(perm[i], perm[j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn graph_ignores_per_roi_shifts(h in features(8, 6), shift in -50.0f64..50.0) {
        let (v, o) = (h.shape()[0], h.shape()[1]);
        let shifted = Tensor::new([v, o], h.data().iter().enumerate().map(|(k, x)| x + shift * (k / o) as f64).collect()).unwrap();
        let a = graph_from_features(&h).unwrap();
        let b = graph_from_features(&shifted).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn pearson_ignores_positive_affine_rescaling(x in features(6, 20), scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
        prop_assume!(x.shape()[1] >= 3);
        let y = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| scale * v + offset).collect()).unwrap();
        let a = pearson_matrix(&x).unwrap();
        let b = pearson_matrix(&y).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(x in features(6, 8), shift in -100.0f64..100.0) {
        let tape = Tape::new();
        let shifted = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v + shift).collect()).unwrap();
        let a = tape.constant(x.clone()).softmax_rows().value();
        let b = tape.constant(shifted).softmax_rows().value();
        let o = x.shape()[1];
        for row in a.data().chunks(o) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn t_tail_decreases_in_abs_t(t in 0.0f64..20.0, dt in 1e-3f64..5.0, dof in 1.0f64..200.0) {
        let p0 = t_two_sided_p(t, dof).unwrap();
        let p1 = t_two_sided_p(t + dt, dof).unwrap();
        prop_assert!(p1 <= p0);
        prop_assert_eq!(t_two_sided_p(-t, dof).unwrap(), p0);
    }

    #[test]
    fn folds_partition_every_repetition(pos in 5usize..20, neg in 5usize..20, k in 2usize..6, reps in 1usize..4, seed in any::<u64>()) {
        let mut labels = vec![1; pos];
        labels.extend(vec![0; neg]);
        let n = labels.len();
        let splits = stratified_kfold(&labels, k, reps, seed).unwrap();
        prop_assert_eq!(splits.len(), k * reps);
        for rep in 0..reps {
            let mut seen = vec![0usize; n];
            for s in splits.iter().filter(|s| s.rep == rep) {
                prop_assert!(s.train.iter().all(|i| !s.test.contains(i)));
                prop_assert_eq!(s.train.len() + s.test.len(), n);
                for &i in &s.test {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
