use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{GmdaError, Result};

fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.class_count()];
    for (i, &l) in dataset.observed_labels().iter().enumerate() {
        by_class[l].push(i);
    }
    by_class
}

/// Stratified train/test index split.
///
/// Each observed class contributes `round(train_fraction * count)` samples to
/// the training side. Classes absent from the dataset are ignored; a present
/// class that would end up empty on either side is an error.
pub fn split_indices(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(GmdaError::InvalidConfig(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut idx) in indices_by_class(dataset).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let take = (train_fraction * idx.len() as f64).round() as usize;
        if take == 0 || take == idx.len() {
            return Err(GmdaError::DegenerateSplit { class });
        }
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, test))
}

pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset, train_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}

/// Stratified k-fold test index sets. Samples of each class are shuffled and
/// dealt round-robin, continuing the deal across classes so fold sizes differ
/// by at most one.
pub fn kfold_indices(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(GmdaError::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let by_class = indices_by_class(dataset);
    for (class, idx) in by_class.iter().enumerate() {
        if !idx.is_empty() && idx.len() < folds {
            return Err(GmdaError::TooFewSamples {
                class,
                needed: folds,
                found: idx.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tests = vec![Vec::new(); folds];
    let mut dealt = 0;
    for mut idx in by_class {
        idx.shuffle(&mut rng);
        for i in idx {
            tests[dealt % folds].push(i);
            dealt += 1;
        }
    }
    Ok(tests)
}

/// `(train, test)` pairs for stratified k-fold cross-validation.
pub fn kfold(dataset: &Dataset, folds: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let tests = kfold_indices(dataset, folds, seed)?;
    let mut fold_of = vec![0; dataset.len()];
    for (f, idx) in tests.iter().enumerate() {
        for &i in idx {
            fold_of[i] = f;
        }
    }
    tests
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = (0..dataset.len()).filter(|&i| fold_of[i] != f).collect();
            Ok((dataset.subset(&train)?, dataset.subset(test)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize, k: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        Dataset::new((0..n).map(|i| i as f64).collect(), 1, labels, None, k).unwrap()
    }

    fn sorted(mut v: Vec<usize>) -> Vec<usize> {
        v.sort_unstable();
        v
    }

    #[test]
    fn half_split_is_stratified() {
        let ds = balanced(1000, 2);
        let (train, test) = split(&ds, 0.5, 1).unwrap();
        assert_eq!((train.len(), test.len()), (500, 500));
        assert_eq!(train.class_counts(), vec![250, 250]);
        assert_eq!(test.class_counts(), vec![250, 250]);
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = balanced(1000, 2);
        let (a_tr, a_te) = split_indices(&ds, 0.8, 1).unwrap();
        assert_eq!((a_tr.len(), a_te.len()), (800, 200));
        let all = sorted([a_tr.clone(), a_te.clone()].concat());
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let (b_tr, _) = split_indices(&ds, 0.8, 2).unwrap();
        assert_ne!(a_tr, b_tr);
        assert_eq!(b_tr.len(), 800);
        assert_eq!(split_indices(&ds, 0.8, 1).unwrap().0, a_tr);
    }

    #[test]
    fn degenerate_split() {
        let ds = Dataset::new(vec![0.0, 1.0, 2.0], 1, vec![0, 0, 1], None, 2).unwrap();
        assert!(matches!(
            split(&ds, 0.5, 0),
            Err(GmdaError::DegenerateSplit { class: 1 })
        ));
        assert!(split(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn five_fold_at_scale() {
        let ds = balanced(15_000, 2);
        let folds = kfold_indices(&ds, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 3000));
        let all = sorted(folds.concat());
        assert_eq!(all, (0..15_000).collect::<Vec<_>>());
    }

    #[test]
    fn leave_one_out() {
        let ds = balanced(7, 1);
        let pairs = kfold(&ds, 7, 0).unwrap();
        assert_eq!(pairs.len(), 7);
        for (train, test) in &pairs {
            assert_eq!(test.len(), 1);
            assert_eq!(train.len(), 6);
        }
    }

    #[test]
    fn too_few_samples_for_folds() {
        let ds = balanced(9, 3);
        assert!(matches!(
            kfold(&ds, 4, 0),
            Err(GmdaError::TooFewSamples {
                needed: 4,
                found: 3,
                ..
            })
        ));
        assert!(kfold(&ds, 1, 0).is_err());
    }
}
