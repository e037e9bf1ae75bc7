use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Prng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub rep: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated stratified k-fold partitions.
///
/// Each repetition shuffles every class independently and deals the members round-robin
/// over the folds, continuing the deal across classes so fold sizes stay within one.
pub fn stratified_kfold(labels: &[usize], k: usize, repetitions: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(k * repetitions);
    for rep in 0..repetitions {
        let mut rng = Prng::new(derive_seed(seed, &[rep as u64]));
        let mut fold_of = vec![0usize; labels.len()];
        let mut dealt = 0usize;
        for members in &by_class {
            let mut m = members.clone();
            rng.shuffle(&mut m);
            for i in m {
                fold_of[i] = dealt % k;
                dealt += 1;
            }
        }
        for fold in 0..k {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..labels.len()).partition(|&i| fold_of[i] == fold);
            out.push(FoldSplit { rep, fold, train, test });
        }
    }
    Ok(out)
}
