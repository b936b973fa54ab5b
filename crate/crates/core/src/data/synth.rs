use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmdaError, Result};

/// Recipe for a synthetic class-conditional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub components_per_class: usize,
    /// Class priors; uniform when empty.
    #[serde(default)]
    pub class_priors: Vec<f64>,
    /// Minimum distance between any two component means.
    pub mean_separation: f64,
    /// Isotropic variance of every component.
    pub covariance_scale: f64,
    /// Common covariance added between every pair of features, i.e. the
    /// covariance is `covariance_scale * I + cross_class_covariance * 11ᵀ`.
    /// Large values stretch all components along the diagonal direction so
    /// the classes overlap.
    #[serde(default)]
    pub cross_class_covariance: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Two classes, two components each, in the plane.
    pub fn two_class_plane(n: usize, seed: u64) -> Self {
        Self {
            n,
            d: 2,
            k: 2,
            components_per_class: 2,
            class_priors: vec![0.5, 0.5],
            mean_separation: 5.0,
            covariance_scale: 1.0,
            cross_class_covariance: 0.0,
            seed,
        }
    }

    pub fn priors(&self) -> Vec<f64> {
        if self.class_priors.is_empty() {
            vec![1.0 / self.k as f64; self.k]
        } else {
            self.class_priors.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GmdaError::InvalidSpec(m));
        if self.k == 0 || self.d == 0 || self.components_per_class == 0 {
            return bad("n, d, k and components_per_class must be positive".into());
        }
        if self.n < self.k * self.components_per_class {
            return bad(format!(
                "n = {} is below k * components_per_class = {}",
                self.n,
                self.k * self.components_per_class
            ));
        }
        let priors = self.priors();
        if priors.len() != self.k || priors.iter().any(|p| !(*p >= 0.0)) {
            return bad(format!("class_priors must be {} nonnegative values", self.k));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return bad("class_priors must sum to 1".into());
        }
        if !(self.mean_separation >= 0.0) || !self.mean_separation.is_finite() {
            return bad("mean_separation must be finite and nonnegative".into());
        }
        if !(self.covariance_scale > 0.0) || !self.covariance_scale.is_finite() {
            return bad("covariance_scale must be positive".into());
        }
        if !(self.cross_class_covariance >= 0.0) || !self.cross_class_covariance.is_finite() {
            return bad("cross_class_covariance must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// Generating parameters behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// `means[class][component]`.
    pub means: Vec<Vec<Vec<f64>>>,
    /// Shared covariance, row-major.
    pub covariance: Vec<f64>,
    pub priors: Vec<f64>,
}

impl SynthTruth {
    /// Average of each class's component means (components are equally likely).
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        self.means
            .iter()
            .map(|comps| {
                let d = comps[0].len();
                let mut m = vec![0.0; d];
                for c in comps {
                    for (a, b) in m.iter_mut().zip(c) {
                        *a += b / comps.len() as f64;
                    }
                }
                m
            })
            .collect()
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    generate_with_truth(spec).map(|(ds, _)| ds)
}

/// Draws a labeled sample; observed labels equal the true labels.
pub fn generate_with_truth(spec: &SynthSpec) -> Result<(Dataset, SynthTruth)> {
    spec.validate()?;
    let (d, k, m) = (spec.d, spec.k, spec.components_per_class);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let means = place_means(&mut rng, k * m, d, spec.mean_separation);
    let mut cov = DMatrix::from_element(d, d, spec.cross_class_covariance);
    for i in 0..d {
        cov[(i, i)] += spec.covariance_scale;
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| GmdaError::InvalidSpec("generating covariance is not positive definite".into()))?
        .l();

    let priors = spec.priors();
    let mut features = Vec::with_capacity(spec.n * d);
    let mut labels = Vec::with_capacity(spec.n);
    let mut z = vec![0.0; d];
    for _ in 0..spec.n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut class = k - 1;
        for (c, p) in priors.iter().enumerate() {
            acc += p;
            if u < acc {
                class = c;
                break;
            }
        }
        let comp = rng.random_range(0..m);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mu = &means[class * m + comp];
        for i in 0..d {
            let mut x = mu[i];
            for j in 0..=i {
                x += chol[(i, j)] * z[j];
            }
            features.push(x);
        }
        labels.push(class);
    }

    let truth = SynthTruth {
        means: means.chunks(m).map(|c| c.to_vec()).collect(),
        covariance: (0..d * d).map(|i| cov[(i / d, i % d)]).collect(),
        priors,
    };
    let ds = Dataset::new(features, d, labels.clone(), Some(labels), k)?;
    Ok((ds, truth))
}

/// Rejection-samples `count` points in a cube so that all pairwise distances
/// are at least `separation`; the cube grows when placement keeps failing.
fn place_means(rng: &mut ChaCha8Rng, count: usize, d: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut half_width = separation.max(1.0) * (count as f64).powf(1.0 / d as f64);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut failures = 0;
    while means.len() < count {
        let candidate: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..half_width)).collect();
        let ok = means.iter().all(|m| {
            let dist2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b).powi(2)).sum();
            dist2.sqrt() >= separation
        });
        if ok {
            means.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures >= 200 {
                half_width *= 1.25;
                failures = 0;
            }
        }
    }
    means
}
