use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Disjoint test folds over subject indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    /// Subject indices of each test fold, ascending.
    pub folds: Vec<Vec<usize>>,
    /// Fold of every subject.
    pub assignment: Vec<usize>,
}

impl Folds {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Training indices of fold `i`: everything outside its test set.
    pub fn train(&self, i: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&s| self.assignment[s] != i).collect()
    }
}

/// Shuffles subjects (each class separately when stratified), lays the
/// classes end to end and deals the sequence round-robin into `k` folds.
/// Fold sizes differ by at most one, and so do per-fold class counts.
pub fn kfold_split(labels: &[u8], k: usize, stratified: bool, seed: u64) -> Result<Folds> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Argument(format!("k must be >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds the {n} subjects")));
    }
    let mut rng = rng_for(seed, "kfold");
    let sequence: Vec<usize> = if stratified {
        let mut seq = Vec::with_capacity(n);
        for class in [0u8, 1] {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            seq.extend(members);
        }
        if seq.len() != n {
            return Err(Error::Argument("stratified split needs 0/1 labels".into()));
        }
        seq
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut assignment = vec![0; n];
    let mut folds = vec![Vec::new(); k];
    for (pos, &s) in sequence.iter().enumerate() {
        assignment[s] = pos % k;
        folds[pos % k].push(s);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(Folds { folds, assignment })
}
