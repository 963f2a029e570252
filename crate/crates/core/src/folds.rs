//! Seeded fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Label;

/// Fold id of every example, stratified by label: each class is shuffled
/// and dealt round-robin, continuing where the previous class stopped.
/// `k` is clamped to the number of examples.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Vec<usize> {
    let k = k.clamp(1, labels.len().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in [1, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % k;
            next += 1;
        }
    }
    assignment
}

/// Fold id of each of `n` items, shuffled then dealt round-robin.
pub fn plain_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let k = k.clamp(1, n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, i) in idx.into_iter().enumerate() {
        assignment[i] = pos % k;
    }
    assignment
}

/// `(train, test)` index lists for fold `f`.
pub fn split_fold(assignment: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != f)
}

/// Number of distinct folds in an assignment.
pub fn fold_count(assignment: &[usize]) -> usize {
    assignment.iter().max().map_or(0, |m| m + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strata_are_balanced() {
        let labels: Vec<Label> = (0..100).map(|i| if i < 30 { 1 } else { -1 }).collect();
        let folds = stratified_folds(&labels, 10, 3);
        for f in 0..10 {
            let pos = (0..100)
                .filter(|&i| folds[i] == f && labels[i] == 1)
                .count();
            let all = folds.iter().filter(|&&x| x == f).count();
            assert_eq!(pos, 3);
            assert_eq!(all, 10);
        }
    }

    #[test]
    fn clamps_fold_count() {
        assert_eq!(fold_count(&plain_folds(4, 10, 0)), 4);
        assert_eq!(fold_count(&stratified_folds(&[1, -1, 1], 10, 0)), 3);
    }

    #[test]
    fn split_partitions() {
        let folds = plain_folds(23, 5, 1);
        let (train, test) = split_fold(&folds, 2);
        assert_eq!(train.len() + test.len(), 23);
        assert!(test.iter().all(|&i| folds[i] == 2));
    }
}
