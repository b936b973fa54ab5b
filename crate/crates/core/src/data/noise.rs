use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmdaError, Result};

/// How observed labels are corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// With probability `rate` the label is redrawn uniformly over all classes,
    /// the original included, so the realized error rate is `rate * (K-1)/K`.
    Symmetric { rate: f64 },
    /// `flip_table[true][observed]`, each row a distribution over observed labels.
    Asymmetric { flip_table: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Symmetric { rate },
            seed,
        }
    }

    pub fn asymmetric(flip_table: Vec<Vec<f64>>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Asymmetric { flip_table },
            seed,
        }
    }

    /// Class `from` is relabeled as `to` with probability `rate`; other classes are untouched.
    pub fn directed(classes: usize, from: usize, to: usize, rate: f64, seed: u64) -> Result<Self> {
        if from >= classes || to >= classes {
            return Err(GmdaError::InvalidSpec(format!(
                "flip {from}->{to} outside {classes} classes"
            )));
        }
        let mut table = identity(classes);
        table[from][from] -= rate;
        table[from][to] += rate;
        let spec = Self::asymmetric(table, seed);
        spec.validate(classes)?;
        Ok(spec)
    }

    /// Every class `c` is relabeled as `(c + 1) mod K` with probability `rate`.
    pub fn cyclic(classes: usize, rate: f64, seed: u64) -> Result<Self> {
        let mut table = identity(classes);
        if classes > 1 {
            for (c, row) in table.iter_mut().enumerate() {
                row[c] -= rate;
                row[(c + 1) % classes] += rate;
            }
        }
        let spec = Self::asymmetric(table, seed);
        spec.validate(classes)?;
        Ok(spec)
    }

    /// The flip table `p(observed | true)` this spec induces, rows indexed by true class.
    pub fn flip_table(&self, classes: usize) -> Vec<Vec<f64>> {
        match &self.kind {
            NoiseKind::Symmetric { rate } => (0..classes)
                .map(|t| {
                    (0..classes)
                        .map(|o| {
                            let stay = if o == t { 1.0 - rate } else { 0.0 };
                            stay + rate / classes as f64
                        })
                        .collect()
                })
                .collect(),
            NoiseKind::Asymmetric { flip_table } => flip_table.clone(),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        match &self.kind {
            NoiseKind::Symmetric { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return Err(GmdaError::InvalidSpec(format!("symmetric rate {rate} outside [0, 1]")));
                }
            }
            NoiseKind::Asymmetric { flip_table } => {
                if flip_table.len() != classes || flip_table.iter().any(|r| r.len() != classes) {
                    return Err(GmdaError::InvalidSpec(format!(
                        "flip table must be {classes}x{classes}"
                    )));
                }
                for (t, row) in flip_table.iter().enumerate() {
                    if row.iter().any(|p| !(*p >= 0.0)) {
                        return Err(GmdaError::InvalidSpec(format!(
                            "flip table row {t} has a negative entry"
                        )));
                    }
                    let s: f64 = row.iter().sum();
                    if (s - 1.0).abs() > 1e-10 {
                        return Err(GmdaError::InvalidSpec(format!("flip table row {t} sums to {s}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Replaces observed labels with corrupted copies of the true labels.
///
/// Features and true labels are never touched. Every sample consumes the same
/// number of random draws regardless of outcome, so the stream stays aligned.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    let truth = dataset.true_labels().ok_or(GmdaError::MissingTrueLabels)?;
    let k = dataset.class_count();
    spec.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let observed: Vec<usize> = match &spec.kind {
        NoiseKind::Symmetric { rate } => truth
            .iter()
            .map(|&t| {
                let u: f64 = rng.random();
                let redraw = rng.random_range(0..k);
                if u < *rate {
                    redraw
                } else {
                    t
                }
            })
            .collect(),
        NoiseKind::Asymmetric { flip_table } => truth
            .iter()
            .map(|&t| {
                let u: f64 = rng.random();
                let row = &flip_table[t];
                let mut acc = 0.0;
                for (o, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return o;
                    }
                }
                // rounding left u above the last cumulative sum
                row.iter().rposition(|p| *p > 0.0).unwrap_or(t)
            })
            .collect(),
    };
    dataset.with_observed_labels(observed)
}

/// Row-stochastic `p(observed | true)` estimated from label pairs; rows with
/// no samples are left at zero.
pub fn empirical_flip_matrix(truth: &[usize], observed: &[usize], classes: usize) -> Vec<Vec<f64>> {
    let mut counts = vec![vec![0.0; classes]; classes];
    for (&t, &o) in truth.iter().zip(observed) {
        counts[t][o] += 1.0;
    }
    for row in &mut counts {
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(n: usize, k: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let features = (0..n).map(|i| i as f64).collect();
        Dataset::new(features, 1, labels.clone(), Some(labels), k).unwrap()
    }

    fn disagreement(ds: &Dataset) -> f64 {
        let t = ds.true_labels().unwrap();
        let o = ds.observed_labels();
        t.iter().zip(o).filter(|(a, b)| a != b).count() as f64 / t.len() as f64
    }

    #[test]
    fn zero_rate_is_identity() {
        let ds = balanced(500, 3);
        let noisy = inject_noise(&ds, &NoiseSpec::symmetric(0.0, 9)).unwrap();
        assert_eq!(noisy.observed_labels(), ds.true_labels().unwrap());
    }

    #[test]
    fn full_rate_binary_redraw_is_half() {
        let ds = balanced(10_000, 2);
        let noisy = inject_noise(&ds, &NoiseSpec::symmetric(1.0, 3)).unwrap();
        assert!((disagreement(&noisy) - 0.5).abs() <= 0.05);
    }

    #[test]
    fn rate_point_two_binary() {
        // binomial oracle: E = 0.2 * 1/2 = 0.1, sd = sqrt(0.1*0.9/1e4) = 0.003
        let ds = balanced(10_000, 2);
        for seed in 0..5 {
            let noisy = inject_noise(&ds, &NoiseSpec::symmetric(0.2, seed)).unwrap();
            assert!((disagreement(&noisy) - 0.10).abs() <= 0.02);
        }
    }

    #[test]
    fn features_and_truth_untouched() {
        let ds = balanced(300, 3);
        let spec = NoiseSpec::cyclic(3, 0.4, 1).unwrap();
        let noisy = inject_noise(&ds, &spec).unwrap();
        assert_eq!(noisy.features(), ds.features());
        assert_eq!(noisy.true_labels(), ds.true_labels());
    }

    #[test]
    fn symmetric_empirical_flip_matrix_converges() {
        let (k, rate) = (3, 0.3);
        let ds = balanced(10_000, k);
        let noisy = inject_noise(&ds, &NoiseSpec::symmetric(rate, 11)).unwrap();
        let emp = empirical_flip_matrix(ds.true_labels().unwrap(), noisy.observed_labels(), k);
        let expected = NoiseSpec::symmetric(rate, 0).flip_table(k);
        for t in 0..k {
            for o in 0..k {
                assert!((emp[t][o] - expected[t][o]).abs() <= 0.02, "{t},{o}");
            }
        }
    }

    #[test]
    fn directed_flip_only_moves_one_class() {
        let ds = balanced(4000, 2);
        let spec = NoiseSpec::directed(2, 0, 1, 0.3, 5).unwrap();
        let noisy = inject_noise(&ds, &spec).unwrap();
        let emp = empirical_flip_matrix(ds.true_labels().unwrap(), noisy.observed_labels(), 2);
        assert_eq!(emp[1], vec![0.0, 1.0]);
        assert!((emp[0][1] - 0.3).abs() < 0.03);
    }

    #[test]
    fn deterministic_and_validated() {
        let ds = balanced(200, 2);
        let a = inject_noise(&ds, &NoiseSpec::symmetric(0.5, 42)).unwrap();
        let b = inject_noise(&ds, &NoiseSpec::symmetric(0.5, 42)).unwrap();
        assert_eq!(a, b);
        assert!(inject_noise(&ds, &NoiseSpec::symmetric(1.5, 0)).is_err());
        let bad = NoiseSpec::asymmetric(vec![vec![0.5, 0.4], vec![0.0, 1.0]], 0);
        assert!(inject_noise(&ds, &bad).is_err());
        let unlabeled = ds.without_true_labels();
        assert!(matches!(
            inject_noise(&unlabeled, &NoiseSpec::symmetric(0.1, 0)),
            Err(GmdaError::MissingTrueLabels)
        ));
    }

    #[test]
    fn json_shape() {
        let spec: NoiseSpec = serde_json::from_str(r#"{"kind":"symmetric","rate":0.2,"seed":7}"#).unwrap();
        assert_eq!(spec, NoiseSpec::symmetric(0.2, 7));
        let spec: NoiseSpec =
            serde_json::from_str(r#"{"kind":"asymmetric","flip_table":[[1,0],[0.25,0.75]],"seed":1}"#).unwrap();
        assert!(spec.validate(2).is_ok());
    }
}
