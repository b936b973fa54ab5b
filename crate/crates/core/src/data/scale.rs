use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmdaError, Result};

/// Per-feature z-scoring fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Sample standard deviation (n-1 denominator); 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn fit(dataset: &Dataset) -> Self {
        let (n, d) = (dataset.len(), dataset.dim());
        let mut mean = vec![0.0; d];
        for row in dataset.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; d];
        for row in dataset.rows() {
            for j in 0..d {
                ss[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let scale = ss
            .into_iter()
            .map(|s| {
                let sd = if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 };
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }

    pub fn transform(&self, dataset: &Dataset) -> Result<Dataset> {
        if dataset.dim() != self.dim() {
            return Err(GmdaError::DimensionMismatch {
                expected: self.dim(),
                found: dataset.dim(),
            });
        }
        let features = dataset.rows().flat_map(|r| self.transform_row(r)).collect();
        dataset.with_features(features)
    }
}

/// Fits a [`Scaler`] on `train` and applies it to both parts.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, Scaler)> {
    let scaler = Scaler::fit(train);
    Ok((scaler.transform(train)?, scaler.transform(test)?, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(xs: &[f64]) -> Dataset {
        Dataset::new(xs.to_vec(), 1, vec![0; xs.len()], None, 1).unwrap()
    }

    #[test]
    fn hand_column() {
        let ds = column(&[1.0, 2.0, 3.0, 4.0]);
        let (tr, _, sc) = standardize(&ds, &ds).unwrap();
        // sd with n-1: sqrt((2.25+0.25+0.25+2.25)/3) = sqrt(5/3)
        let sd = (5.0f64 / 3.0).sqrt();
        assert_eq!(sc.mean, vec![2.5]);
        assert!((sc.scale[0] - sd).abs() < 1e-15);
        let want = [-1.5 / sd, -0.5 / sd, 0.5 / sd, 1.5 / sd];
        for (a, b) in tr.features().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_column_centered_only() {
        let ds = Dataset::new(vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0], 2, vec![0; 3], None, 1).unwrap();
        let (tr, _, sc) = standardize(&ds, &ds).unwrap();
        assert_eq!(sc.scale[0], 1.0);
        assert_eq!(tr.row(0)[0], 0.0);
    }

    #[test]
    fn test_uses_train_statistics() {
        let train = column(&[0.0, 2.0]);
        let test = column(&[4.0]);
        let (_, te, sc) = standardize(&train, &test).unwrap();
        assert_eq!(te.features()[0], (4.0 - 1.0) / sc.scale[0]);
    }

    #[test]
    fn standardized_input_is_near_identity() {
        let ds = column(&[1.0, 2.0, 3.0, 4.0]);
        let (once, _, _) = standardize(&ds, &ds).unwrap();
        let (twice, _, sc) = standardize(&once, &once).unwrap();
        assert!(sc.mean[0].abs() < 1e-15 && (sc.scale[0] - 1.0).abs() < 1e-12);
        for (a, b) in once.features().iter().zip(twice.features()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
