//! Outcome-stratified train/test splitting and k-fold assignment.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::table::DataTable;

/// Row indices of each class, in table order: `[negatives, positives]`.
fn class_rows(labels: &[bool]) -> [Vec<usize>; 2] {
    let mut classes = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        classes[usize::from(y)].push(i);
    }
    classes
}

/// Per-class test counts, `floor(count * test_fraction + 0.5)`.
pub fn stratified_test_counts(class_counts: [usize; 2], test_fraction: f64) -> [usize; 2] {
    class_counts.map(|c| (c as f64 * test_fraction + 0.5).floor() as usize)
}

/// Train/test row indices (each ascending) for a binary label vector.
pub fn stratified_split_indices(labels: &[bool], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("test_fraction {test_fraction} not in (0, 1)")));
    }
    let classes = class_rows(labels);
    if classes.iter().any(Vec::is_empty) {
        return Err(Error::SingleClass("stratified split needs both classes".into()));
    }
    let counts = stratified_test_counts([classes[0].len(), classes[1].len()], test_fraction);
    let mut rng = substream(seed, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (mut rows, n_test) in classes.into_iter().zip(counts) {
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "test_fraction {test_fraction} leaves an empty train or test set"
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(table: &DataTable, outcome: &str, test_fraction: f64, seed: u64) -> Result<(DataTable, DataTable)> {
    let labels = table.labels(outcome)?;
    let (train, test) = stratified_split_indices(&labels, test_fraction, seed)?;
    Ok((table.select_rows(&train), table.select_rows(&test)))
}

/// Stratified k-fold assignment: per class a seeded shuffle, then round-robin.
///
/// The positive class continues the round-robin where the negatives stopped
/// so overall fold sizes stay balanced too.
pub fn kfold_indices(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need at least 2 folds")));
    }
    let classes = class_rows(labels);
    for (class, rows) in classes.iter().enumerate() {
        if rows.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} rows, fewer than {k} folds",
                rows.len()
            )));
        }
    }
    let mut rng = substream(seed, 1);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut rows in classes {
        rows.shuffle(&mut rng);
        for r in rows {
            folds[next].push(r);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of fold `i` within `0..n`.
pub fn fold_train_rows(folds: &[Vec<usize>], held_out: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    rows.sort_unstable();
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(pos: usize, neg: usize) -> Vec<bool> {
        let mut v = vec![true; pos];
        v.extend(vec![false; neg]);
        v
    }

    #[test]
    fn reproduces_561_241() {
        let y = labels(409, 393);
        let (train, test) = stratified_split_indices(&y, 0.30, 42).unwrap();
        assert_eq!((train.len(), test.len()), (561, 241));
        assert_eq!(test.iter().filter(|&&i| y[i]).count(), 123);
        assert_eq!(test.iter().filter(|&&i| !y[i]).count(), 118);
    }

    #[test]
    fn ten_rows_one_of_each_class() {
        let y = labels(5, 5);
        let (_, test) = stratified_split_indices(&y, 0.2, 3).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test.iter().filter(|&&i| y[i]).count(), 1);
    }

    #[test]
    fn same_seed_same_split() {
        let y = labels(30, 21);
        assert_eq!(
            stratified_split_indices(&y, 0.3, 9).unwrap(),
            stratified_split_indices(&y, 0.3, 9).unwrap()
        );
        assert_ne!(
            stratified_split_indices(&y, 0.3, 9).unwrap(),
            stratified_split_indices(&y, 0.3, 10).unwrap()
        );
    }

    #[test]
    fn split_errors() {
        assert!(stratified_split_indices(&labels(0, 5), 0.3, 1).is_err());
        assert!(stratified_split_indices(&labels(5, 5), 0.0, 1).is_err());
        // 1 + 1 rows at 0.9 -> every row goes to test
        assert!(stratified_split_indices(&labels(1, 1), 0.9, 1).is_err());
    }

    #[test]
    fn kfold_eight_rows() {
        let y = labels(4, 4);
        let folds = kfold_indices(&y, 4, 5).unwrap();
        for f in &folds {
            assert_eq!(f.len(), 2);
            assert_eq!(f.iter().filter(|&&i| y[i]).count(), 1);
        }
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(&y, 4, 5).unwrap());
        assert!(kfold_indices(&labels(3, 10), 4, 5).is_err());
    }

    proptest! {
        #[test]
        fn split_is_stratified_partition(pos in 1usize..60, neg in 1usize..60, frac in 0.05f64..0.95, seed: u64) {
            let y = labels(pos, neg);
            if let Ok((train, test)) = stratified_split_indices(&y, frac, seed) {
                let mut all = train.clone();
                all.extend(&test);
                all.sort_unstable();
                prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
                for (class, size) in [(true, pos), (false, neg)] {
                    let got = test.iter().filter(|&&i| y[i] == class).count() as f64;
                    prop_assert!((got - size as f64 * frac).abs() <= 1.0);
                }
            }
        }

        #[test]
        fn kfold_sizes_balanced(pos in 4usize..40, neg in 4usize..40, seed: u64) {
            let y = labels(pos, neg);
            let folds = kfold_indices(&y, 4, seed).unwrap();
            for class in [true, false] {
                let sizes: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| y[i] == class).count()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }
}
