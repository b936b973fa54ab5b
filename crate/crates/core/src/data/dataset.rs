use crate::error::{GmdaError, Result};

/// Feature matrix with observed (possibly corrupted) labels and, when known,
/// the clean labels they were derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    observed: Vec<usize>,
    truth: Option<Vec<usize>>,
    class_count: usize,
}

impl Dataset {
    /// `features` is row-major `n x dim`.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        observed: Vec<usize>,
        truth: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        let n = observed.len();
        if n == 0 {
            return Err(GmdaError::InvalidDataset("dataset is empty".into()));
        }
        if dim == 0 {
            return Err(GmdaError::InvalidDataset("feature dimension is zero".into()));
        }
        if class_count == 0 {
            return Err(GmdaError::InvalidDataset("class count is zero".into()));
        }
        if features.len() != n * dim {
            return Err(GmdaError::InvalidDataset(format!(
                "{} feature values for {n} rows of dimension {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(GmdaError::InvalidDataset(format!(
                "non-finite feature in row {}",
                i / dim
            )));
        }
        let check = |labels: &[usize], what: &str| -> Result<()> {
            match labels.iter().position(|&l| l >= class_count) {
                Some(i) => Err(GmdaError::InvalidDataset(format!(
                    "{what} label {} in row {i} exceeds class count {class_count}",
                    labels[i]
                ))),
                None => Ok(()),
            }
        };
        check(&observed, "observed")?;
        if let Some(t) = &truth {
            if t.len() != n {
                return Err(GmdaError::LengthMismatch {
                    left: n,
                    right: t.len(),
                });
            }
            check(t, "true")?;
        }
        Ok(Self {
            features,
            dim,
            observed,
            truth,
            class_count,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], observed: Vec<usize>, class_count: usize) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(GmdaError::DimensionMismatch {
                expected: dim,
                found: r.len(),
            });
        }
        if rows.len() != observed.len() {
            return Err(GmdaError::LengthMismatch {
                left: rows.len(),
                right: observed.len(),
            });
        }
        Self::new(rows.concat(), dim, observed, None, class_count)
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    /// Labels to score predictions against: the true labels when present.
    pub fn reference_labels(&self) -> &[usize] {
        self.truth.as_deref().unwrap_or(&self.observed)
    }

    /// Number of samples carrying each observed label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.observed {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order; the class count is preserved.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self::new(
            features,
            self.dim,
            indices.iter().map(|&i| self.observed[i]).collect(),
            self.truth.as_ref().map(|t| indices.iter().map(|&i| t[i]).collect()),
            self.class_count,
        )
    }

    pub fn with_observed_labels(&self, observed: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.dim,
            observed,
            self.truth.clone(),
            self.class_count,
        )
    }

    /// Copy whose true labels are set to the current observed labels.
    pub fn with_observed_as_true(&self) -> Self {
        Self {
            truth: Some(self.observed.clone()),
            ..self.clone()
        }
    }

    pub fn without_true_labels(&self) -> Self {
        Self {
            truth: None,
            ..self.clone()
        }
    }

    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Self::new(
            features,
            self.dim,
            self.observed.clone(),
            self.truth.clone(),
            self.class_count,
        )
    }
}
