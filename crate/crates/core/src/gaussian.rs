//! Multivariate normal kernel.
//!
//! Densities are evaluated in the log domain through a cached Cholesky factor;
//! the precision matrix is never formed.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{GmdaError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Default relative ridge: `ridge * mean(diag(cov))` is added to the diagonal.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// How many times a failed factorization retries with a 10x larger ridge.
pub const RIDGE_ESCALATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
struct Factor {
    /// Row-major lower-triangular Cholesky factor.
    lower: Vec<f64>,
    log_det: f64,
}

/// One Gaussian component with its covariance factorization cached.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    factor: Option<Factor>,
}

impl GaussianComponent {
    /// Builds a component, adding a ridge of `relative_ridge * mean(diag)` and
    /// factorizing. See [`ridge_scale`] for the scale used on degenerate input.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, relative_ridge: f64) -> Result<Self> {
        let eps = relative_ridge * ridge_scale(&covariance);
        Self::with_absolute_ridge(mean, covariance, eps)
    }

    /// Builds a component adding exactly `epsilon` to the diagonal, escalating
    /// `epsilon` tenfold up to [`RIDGE_ESCALATIONS`] times if factorization fails.
    pub fn with_absolute_ridge(mean: Vec<f64>, covariance: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        Self::unfactorized(mean, covariance)?.factorize(epsilon)
    }

    /// A component whose factorization has not been computed yet.
    pub fn unfactorized(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() {
            return Err(GmdaError::NonSquare {
                rows: covariance.nrows(),
                cols: covariance.ncols(),
            });
        }
        if covariance.nrows() != mean.len() {
            return Err(GmdaError::DimensionMismatch {
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        Ok(Self {
            mean,
            covariance,
            factor: None,
        })
    }

    /// Regularizes the stored covariance with `epsilon` and caches its factorization.
    pub fn factorize(self, epsilon: f64) -> Result<Self> {
        let mut eps = epsilon;
        for attempt in 0..=RIDGE_ESCALATIONS {
            let cov = regularize(&self.covariance, eps)?;
            if let Some(factor) = cholesky(&cov) {
                if attempt > 0 {
                    log::debug!("covariance factorized after ridge escalation to {eps:e}");
                }
                return Ok(Self {
                    mean: self.mean,
                    covariance: cov,
                    factor: Some(factor),
                });
            }
            if eps <= 0.0 {
                break;
            }
            if attempt < RIDGE_ESCALATIONS {
                eps *= 10.0;
            }
        }
        Err(GmdaError::NotPositiveDefinite { ridge: eps })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Covariance as stored, i.e. after regularization when factorized.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn is_factorized(&self) -> bool {
        self.factor.is_some()
    }

    /// `log det(covariance)`, if factorized.
    pub fn log_det(&self) -> Option<f64> {
        self.factor.as_ref().map(|f| f.log_det)
    }

    /// The lower Cholesky factor, if factorized.
    pub fn cholesky_lower(&self) -> Option<DMatrix<f64>> {
        let d = self.dim();
        self.factor.as_ref().map(|f| DMatrix::from_row_slice(d, d, &f.lower))
    }

    /// Log-density at `point`.
    pub fn log_pdf(&self, point: &[f64]) -> Result<f64> {
        let d = self.dim();
        if point.len() != d {
            return Err(GmdaError::DimensionMismatch {
                expected: d,
                found: point.len(),
            });
        }
        let factor = self.factor.as_ref().ok_or(GmdaError::NotFactorized)?;
        Ok(self.log_pdf_with(factor, point))
    }

    /// Log-density without dimension checks; the component must be factorized.
    pub(crate) fn log_pdf_unchecked(&self, point: &[f64]) -> f64 {
        let factor = self.factor.as_ref().expect("component factorized");
        self.log_pdf_with(factor, point)
    }

    /// Average log-density over a population with the given `mean` and
    /// (maximum-likelihood) `scatter`:
    /// `-(d ln 2π + ln|Σ| + tr(Σ⁻¹ (S + δδᵀ))) / 2` with `δ = mean - μ`.
    pub fn expected_log_pdf(&self, mean: &[f64], scatter: &DMatrix<f64>) -> Result<f64> {
        let d = self.dim();
        if mean.len() != d || scatter.nrows() != d || scatter.ncols() != d {
            return Err(GmdaError::DimensionMismatch {
                expected: d,
                found: mean.len(),
            });
        }
        let factor = self.factor.as_ref().ok_or(GmdaError::NotFactorized)?;
        let lower = DMatrix::from_row_slice(d, d, &factor.lower);
        let delta = DMatrix::from_iterator(d, 1, mean.iter().zip(&self.mean).map(|(a, b)| a - b));
        let second = scatter + &delta * delta.transpose();
        // tr(Σ⁻¹ A) = tr(L⁻¹ A L⁻ᵀ) for symmetric A
        let half = lower.solve_lower_triangular(&second).ok_or(GmdaError::NotFactorized)?;
        let full = lower
            .solve_lower_triangular(&half.transpose())
            .ok_or(GmdaError::NotFactorized)?;
        Ok(-0.5 * (d as f64 * LN_2PI + factor.log_det + full.trace()))
    }

    fn log_pdf_with(&self, factor: &Factor, point: &[f64]) -> f64 {
        let d = self.dim();
        // forward substitution L z = x - mu, accumulating |z|^2
        let mut z = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= z.len() {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut maha = 0.0;
        for j in 0..d {
            let row = &factor.lower[j * d..j * d + j + 1];
            let mut acc = point[j] - self.mean[j];
            for k in 0..j {
                acc -= row[k] * z[k];
            }
            let zj = acc / row[j];
            z[j] = zj;
            maha += zj * zj;
        }
        -0.5 * (d as f64 * LN_2PI + factor.log_det + maha)
    }
}

/// Free-function form of [`GaussianComponent::log_pdf`].
pub fn log_pdf(point: &[f64], component: &GaussianComponent) -> Result<f64> {
    component.log_pdf(point)
}

/// `(A + Aᵀ)/2 + epsilon·I`.
pub fn regularize(matrix: &DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    if !matrix.is_square() {
        return Err(GmdaError::NonSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(GmdaError::InvalidConfig(format!(
            "ridge must be nonnegative, got {epsilon}"
        )));
    }
    let n = matrix.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = matrix[(i, i)] + epsilon;
        for j in 0..i {
            let v = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Scale a relative ridge is multiplied by: the mean diagonal entry, or 1 when
/// that is not positive (all-zero scatter from a single point, for instance).
pub fn ridge_scale(covariance: &DMatrix<f64>) -> f64 {
    let n = covariance.nrows().min(covariance.ncols());
    if n == 0 {
        return 1.0;
    }
    let mean = (0..n).map(|i| covariance[(i, i)]).sum::<f64>() / n as f64;
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

fn cholesky(cov: &DMatrix<f64>) -> Option<Factor> {
    if cov.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = Cholesky::new(cov.clone())?;
    let l = chol.l();
    let d = l.nrows();
    let mut lower = vec![0.0; d * d];
    let mut log_det = 0.0;
    for i in 0..d {
        let diag = l[(i, i)];
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        log_det += diag.ln();
        for j in 0..=i {
            lower[i * d + j] = l[(i, j)];
        }
    }
    Some(Factor {
        lower,
        log_det: 2.0 * log_det,
    })
}

/// Numerically stable `log Σ exp(v)`.
///
/// Returns `-inf` when every entry is `-inf`. The shifted terms are summed in
/// sorted order, so the result is bit-identical under any permutation of `values`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(GmdaError::EmptyInput);
    }
    Ok(lse(values))
}

/// [`log_sum_exp`] for callers that guarantee a non-empty slice.
pub(crate) fn lse(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    if max.is_infinite() {
        return max;
    }
    let mut stack = [0.0f64; 16];
    let mut heap;
    let terms: &mut [f64] = if values.len() <= stack.len() {
        &mut stack[..values.len()]
    } else {
        heap = vec![0.0; values.len()];
        &mut heap
    };
    for (t, v) in terms.iter_mut().zip(values) {
        *t = (v - max).exp();
    }
    terms.sort_unstable_by(f64::total_cmp);
    max + terms.iter().sum::<f64>().ln()
}

/// Serialized form of a component: mean and dense row-major covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dense_log_pdf(x: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> f64 {
        let d = x.len();
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        let diff = nalgebra::DVector::from_iterator(d, x.iter().zip(mu).map(|(a, b)| a - b));
        let q = (diff.transpose() * inv * &diff)[(0, 0)];
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + q)
    }

    #[test]
    fn standard_normal_at_mode() {
        let c = GaussianComponent::with_absolute_ridge(vec![0.0], DMatrix::from_element(1, 1, 1.0), 0.0).unwrap();
        assert_relative_eq!(c.log_pdf(&[0.0]).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
    }

    #[test]
    fn identity_2d_at_mode() {
        let c = GaussianComponent::with_absolute_ridge(vec![0.0, 0.0], DMatrix::identity(2, 2), 0.0).unwrap();
        assert_relative_eq!(
            c.log_pdf(&[0.0, 0.0]).unwrap(),
            -1.837_877_066_409_345_3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn correlated_2d_matches_dense_inverse() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = GaussianComponent::with_absolute_ridge(vec![1.0, 2.0], cov.clone(), 0.0).unwrap();
        let got = c.log_pdf(&[0.0, 0.0]).unwrap();
        let want = dense_log_pdf(&[0.0, 0.0], &[1.0, 2.0], &cov);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        // frozen value from the dense oracle: det = 1.75, quad form = 4
        let frozen = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 1.75f64.ln() - 0.5 * 4.0;
        assert!((got - frozen).abs() < 1e-12);
    }

    #[test]
    fn cached_log_det_matches_factor_diagonal() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = GaussianComponent::with_absolute_ridge(vec![0.0; 3], cov.clone(), 0.0).unwrap();
        let l = c.cholesky_lower().unwrap();
        let from_diag: f64 = 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
        assert_relative_eq!(c.log_det().unwrap(), from_diag, epsilon = 1e-14);
        assert_relative_eq!(c.log_det().unwrap(), cov.determinant().ln(), epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_and_missing_factor() {
        let c = GaussianComponent::unfactorized(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(c.log_pdf(&[0.0, 0.0]), Err(GmdaError::NotFactorized)));
        let c = c.factorize(0.0).unwrap();
        assert!(matches!(
            c.log_pdf(&[0.0]),
            Err(GmdaError::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn regularize_examples() {
        let z = regularize(&DMatrix::zeros(2, 2), 1e-6).unwrap();
        assert_eq!(z, DMatrix::identity(2, 2) * 1e-6);
        let i = regularize(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(i, DMatrix::identity(2, 2));
        let a = regularize(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), 0.5).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.5, 1.0, 1.0, 1.5]));
        assert!(matches!(
            regularize(&DMatrix::zeros(2, 3), 0.0),
            Err(GmdaError::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn singular_covariance_needs_ridge() {
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            GaussianComponent::with_absolute_ridge(vec![0.0, 0.0], ones.clone(), 0.0),
            Err(GmdaError::NotPositiveDefinite { .. })
        ));
        let c = GaussianComponent::new(vec![0.0, 0.0], ones, DEFAULT_RIDGE).unwrap();
        assert!(c.is_factorized());
    }

    #[test]
    fn ridge_escalates_on_indefinite_input() {
        // smallest eigenvalue -5e-7: 1e-7 fails, 1e-6 succeeds
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.000_000_5, 1.000_000_5, 1.0]);
        let c = GaussianComponent::with_absolute_ridge(vec![0.0, 0.0], m, 1e-7).unwrap();
        assert_relative_eq!(c.covariance()[(0, 0)], 1.0 + 1e-6, epsilon = 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianComponent::with_absolute_ridge(vec![0.0, 0.0], bad, 1e-7).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert_relative_eq!(
            log_sum_exp(&[0.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            log_sum_exp(&[-1000.0, -1000.0]).unwrap(),
            -1000.0 + std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        let p = [0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()];
        assert!(log_sum_exp(&p).unwrap().abs() < 1e-15);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(log_sum_exp(&[]), Err(GmdaError::EmptyInput)));
    }

    #[test]
    fn log_sum_exp_is_permutation_exact() {
        let v = [0.1, -3.7, 2.25, 0.000_1, -50.0, 1.5];
        let base = log_sum_exp(&v).unwrap();
        let mut w = v;
        w.reverse();
        assert_eq!(base.to_bits(), log_sum_exp(&w).unwrap().to_bits());
        w.swap(0, 3);
        assert_eq!(base.to_bits(), log_sum_exp(&w).unwrap().to_bits());
    }

    #[test]
    fn expected_log_pdf_is_the_sample_average() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.7]);
        let c = GaussianComponent::with_absolute_ridge(vec![0.5, -1.0], cov, 0.0).unwrap();
        let pts = [[1.0, 0.0], [-0.5, -2.0], [2.0, 1.5], [0.0, 0.25]];
        let n = pts.len() as f64;
        let mean = [0.625, -0.0625];
        let mut scatter = DMatrix::zeros(2, 2);
        for p in &pts {
            for a in 0..2 {
                for b in 0..2 {
                    scatter[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]) / n;
                }
            }
        }
        let avg: f64 = pts.iter().map(|p| c.log_pdf(p).unwrap()).sum::<f64>() / n;
        assert_relative_eq!(c.expected_log_pdf(&mean, &scatter).unwrap(), avg, epsilon = 1e-12);
    }

    #[test]
    fn density_integrates_to_one_1d() {
        let (mu, var) = (1.3, 2.5);
        let c = GaussianComponent::with_absolute_ridge(vec![mu], DMatrix::from_element(1, 1, var), 0.0).unwrap();
        let sd: f64 = var.sqrt();
        let (lo, hi) = (mu - 8.0 * sd, mu + 8.0 * sd);
        let steps = 4000;
        let h = (hi - lo) / steps as f64;
        // composite Simpson
        let mut total = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += w * c.log_pdf(&[x]).unwrap().exp();
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }
}
