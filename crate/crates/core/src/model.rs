//! Parameter container and its JSON form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMap, Scaler};
use crate::error::{GmdaError, Result};
use crate::gaussian::GaussianComponent;

/// Tolerance for the simplex constraints on weights, flip columns and priors.
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Mixture density of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMixture {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianComponent>,
}

/// Label-flipping channel stored observed-major: `get(observed, truth)` is
/// `p(observed | truth)`, so every column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipMatrix {
    k: usize,
    data: Vec<f64>,
}

impl FlipMatrix {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != k * k {
            return Err(GmdaError::ShapeMismatch(format!(
                "flip matrix needs {} entries, got {}",
                k * k,
                data.len()
            )));
        }
        Ok(Self { k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(GmdaError::ShapeMismatch("flip matrix must be square".into()));
        }
        Self::new(k, rows.concat())
    }

    /// `diag` on the diagonal and `(1 - diag)/(K - 1)` elsewhere; `[1]` for one class.
    pub fn diagonal(k: usize, diag: f64) -> Self {
        if k == 1 {
            return Self { k, data: vec![1.0] };
        }
        let off = (1.0 - diag) / (k - 1) as f64;
        let data = (0..k * k).map(|i| if i / k == i % k { diag } else { off }).collect();
        Self { k, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, observed: usize, truth: usize) -> f64 {
        self.data[observed * self.k + truth]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.k).map(<[f64]>::to_vec).collect()
    }

    pub fn diagonal_entries(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.get(i, i)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.k).map(|t| (0..self.k).map(|o| self.get(o, t)).sum()).collect()
    }
}

/// Class mixtures, flipping channel and class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct GmdaParams {
    classes: Vec<ClassMixture>,
    gamma: FlipMatrix,
    pi: Vec<f64>,
}

impl GmdaParams {
    /// Checks shapes only; see [`GmdaParams::validate`] for the numeric invariants.
    pub fn new(classes: Vec<ClassMixture>, gamma: FlipMatrix, pi: Vec<f64>) -> Result<Self> {
        let k = classes.len();
        if k == 0 {
            return Err(GmdaError::InvalidParams("no classes".into()));
        }
        if gamma.k() != k || pi.len() != k {
            return Err(GmdaError::ShapeMismatch(format!(
                "{k} classes but gamma is {0}x{0} and pi has {1} entries",
                gamma.k(),
                pi.len()
            )));
        }
        let m = classes[0].components.len();
        let d = classes[0].components.first().map_or(0, GaussianComponent::dim);
        if m == 0 || d == 0 {
            return Err(GmdaError::InvalidParams("empty mixture".into()));
        }
        for (w, class) in classes.iter().enumerate() {
            if class.components.len() != m || class.weights.len() != m {
                return Err(GmdaError::ShapeMismatch(format!(
                    "class {w} does not have {m} components and weights"
                )));
            }
            if let Some(c) = class.components.iter().find(|c| c.dim() != d) {
                return Err(GmdaError::DimensionMismatch {
                    expected: d,
                    found: c.dim(),
                });
            }
        }
        Ok(Self { classes, gamma, pi })
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn m(&self) -> usize {
        self.classes[0].components.len()
    }

    pub fn d(&self) -> usize {
        self.classes[0].components[0].dim()
    }

    pub fn classes(&self) -> &[ClassMixture] {
        &self.classes
    }

    pub fn class(&self, w: usize) -> &ClassMixture {
        &self.classes[w]
    }

    pub fn gamma(&self) -> &FlipMatrix {
        &self.gamma
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Mixture mean of each class, `Σ_m w_m μ_m`.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        self.classes
            .iter()
            .map(|c| {
                let mut mean = vec![0.0; self.d()];
                for (w, comp) in c.weights.iter().zip(&c.components) {
                    for (a, b) in mean.iter_mut().zip(comp.mean()) {
                        *a += w * b;
                    }
                }
                mean
            })
            .collect()
    }

    /// Checks every simplex constraint and that each component is factorized.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmdaError::InvalidParams(m));
        let simplex = |v: &[f64]| {
            v.iter().all(|x| *x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
        };
        for (w, class) in self.classes.iter().enumerate() {
            if !simplex(&class.weights) {
                return bad(format!(
                    "weights of class {w} are not a distribution: {:?}",
                    class.weights
                ));
            }
            for (m, comp) in class.components.iter().enumerate() {
                if !comp.is_factorized() {
                    return bad(format!("component ({w},{m}) is not factorized"));
                }
                let cov = comp.covariance();
                let d = cov.nrows();
                for i in 0..d {
                    for j in 0..i {
                        let (a, b) = (cov[(i, j)], cov[(j, i)]);
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                            return bad(format!("covariance ({w},{m}) is not symmetric"));
                        }
                    }
                }
            }
        }
        let k = self.k();
        for t in 0..k {
            let col: Vec<f64> = (0..k).map(|o| self.gamma.get(o, t)).collect();
            if !simplex(&col) {
                return bad(format!("gamma column {t} is not a distribution: {col:?}"));
            }
        }
        if !simplex(&self.pi) {
            return bad(format!("class priors are not a distribution: {:?}", self.pi));
        }
        Ok(())
    }

    /// Relabels classes: class `w` becomes `sigma[w]` on both the true and the
    /// observed axis of the flip matrix.
    pub fn permute_classes(&self, sigma: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if sigma.len() != k || sigma.iter().any(|&s| s >= k || std::mem::replace(&mut seen[s], true)) {
            return Err(GmdaError::InvalidParams(format!(
                "{sigma:?} is not a permutation of 0..{k}"
            )));
        }
        let mut classes = self.classes.clone();
        let mut pi = self.pi.clone();
        let mut gamma = vec![0.0; k * k];
        for w in 0..k {
            classes[sigma[w]] = self.classes[w].clone();
            pi[sigma[w]] = self.pi[w];
            for o in 0..k {
                gamma[sigma[o] * k + sigma[w]] = self.gamma.get(o, w);
            }
        }
        Self::new(classes, FlipMatrix::new(k, gamma)?, pi)
    }

    pub fn to_doc(&self) -> ParamsDoc {
        let d = self.d();
        ParamsDoc {
            k: self.k(),
            m: self.m(),
            d,
            pi: self.pi.clone(),
            gamma: self.gamma.rows(),
            classes: self
                .classes
                .iter()
                .map(|c| ClassDoc {
                    weights: c.weights.clone(),
                    means: c.components.iter().map(|g| g.mean().to_vec()).collect(),
                    covariances: c
                        .components
                        .iter()
                        .map(|g| {
                            let cov = g.covariance();
                            (0..d * d).map(|i| cov[(i / d, i % d)]).collect()
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Rebuilds parameters from their document form. Covariances are taken as
    /// stored (already regularized) and factorized without further ridge.
    pub fn from_doc(doc: &ParamsDoc) -> Result<Self> {
        let (k, m, d) = (doc.k, doc.m, doc.d);
        if doc.classes.len() != k {
            return Err(GmdaError::ShapeMismatch(format!(
                "k = {k} but {} classes stored",
                doc.classes.len()
            )));
        }
        let mut classes = Vec::with_capacity(k);
        for (w, c) in doc.classes.iter().enumerate() {
            if c.means.len() != m || c.covariances.len() != m || c.weights.len() != m {
                return Err(GmdaError::ShapeMismatch(format!(
                    "class {w} does not have {m} components"
                )));
            }
            let components = c
                .means
                .iter()
                .zip(&c.covariances)
                .map(|(mean, cov)| {
                    if mean.len() != d || cov.len() != d * d {
                        return Err(GmdaError::ShapeMismatch(format!(
                            "class {w} component has wrong dimensions"
                        )));
                    }
                    GaussianComponent::with_absolute_ridge(mean.clone(), DMatrix::from_row_slice(d, d, cov), 0.0)
                })
                .collect::<Result<Vec<_>>>()?;
            classes.push(ClassMixture {
                weights: c.weights.clone(),
                components,
            });
        }
        let params = Self::new(classes, FlipMatrix::from_rows(&doc.gamma)?, doc.pi.clone())?;
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDoc {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// One dense row-major `d x d` matrix per component.
    pub covariances: Vec<Vec<f64>>,
}

/// JSON layout of [`GmdaParams`]. `gamma` rows are indexed by observed label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDoc {
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub pi: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub classes: Vec<ClassDoc>,
}

/// A fitted model as written to disk, with the feature scaler and label names
/// needed to apply it to raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    #[serde(flatten)]
    pub params: ParamsDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<Scaler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelMap>,
}

impl SavedModel {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new(params: &GmdaParams, scaler: Option<Scaler>, labels: Option<LabelMap>) -> Self {
        Self {
            schema_version: Self::SCHEMA_VERSION,
            params: params.to_doc(),
            scaler,
            labels,
        }
    }

    pub fn params(&self) -> Result<GmdaParams> {
        GmdaParams::from_doc(&self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.schema_version != Self::SCHEMA_VERSION {
            return Err(GmdaError::InvalidSpec(format!(
                "unsupported model schema version {}",
                model.schema_version
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_params() -> GmdaParams {
        let comp = |mu: f64, var: f64| {
            GaussianComponent::with_absolute_ridge(
                vec![mu, -mu],
                DMatrix::from_row_slice(2, 2, &[var, 0.1, 0.1, var]),
                0.0,
            )
            .unwrap()
        };
        GmdaParams::new(
            vec![
                ClassMixture {
                    weights: vec![0.3, 0.7],
                    components: vec![comp(0.0, 1.0), comp(1.0 / 3.0, 2.0)],
                },
                ClassMixture {
                    weights: vec![0.5, 0.5],
                    components: vec![comp(4.0, 0.5), comp(-2.0, 1.5)],
                },
            ],
            FlipMatrix::diagonal(2, 0.8),
            vec![0.4, 0.6],
        )
        .unwrap()
    }

    #[test]
    fn diagonal_flip_matrix() {
        let g = FlipMatrix::diagonal(2, 0.9);
        for (got, want) in g.as_slice().iter().zip([0.9, 0.1, 0.1, 0.9]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(FlipMatrix::diagonal(1, 0.3).as_slice(), &[1.0]);
        let g3 = FlipMatrix::diagonal(3, 0.8);
        for s in g3.column_sums() {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn validate_catches_broken_simplex() {
        let p = toy_params();
        assert!(p.validate().is_ok());
        let mut bad = p.clone();
        bad.pi = vec![0.5, 0.6];
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.gamma = FlipMatrix::from_rows(&[vec![0.9, 0.9], vec![0.1, 0.2]]).unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_value_exact() {
        let p = toy_params();
        let saved = SavedModel::new(&p, Some(Scaler::identity(2)), Some(LabelMap::identity(2)));
        let text = saved.to_json().unwrap();
        let back = SavedModel::from_json(&text).unwrap();
        assert_eq!(back, saved);
        assert_eq!(back.params().unwrap(), p);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["k", "m", "d", "pi", "gamma", "classes"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn permutation_round_trip() {
        let p = toy_params();
        let q = p.permute_classes(&[1, 0]).unwrap();
        assert_eq!(q.pi(), &[0.6, 0.4]);
        assert_eq!(q.class(0), p.class(1));
        assert_eq!(q.permute_classes(&[1, 0]).unwrap(), p);
        assert!(p.permute_classes(&[0, 0]).is_err());
    }
}
