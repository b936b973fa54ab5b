//! E-step, M-step, the EM driver and clean-label prediction.
//!
//! Notation used in comments: `q[i][w]` is the posterior of true class `w`
//! for sample `i` given its features and observed label, `h[i][w][m]` the
//! posterior of component `m` given the sample belongs to class `w`. Their
//! product is the joint (class, component) responsibility `r[i][w][m]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{GmdaError, Result};
use crate::gaussian::{lse, GaussianComponent, DEFAULT_RIDGE};
use crate::init::init_params;
use crate::model::{ClassMixture, FlipMatrix, GmdaParams, ParamsDoc};
use crate::par;

/// Below this responsibility mass a component is considered dead and revived.
pub const DEAD_MASS: f64 = 1e-12;

/// A component whose mean variance falls below this fraction of the pooled
/// feature variance has collapsed onto (nearly) a single point and is revived
/// like a dead one.
pub const COLLAPSE_RATIO: f64 = 1e-10;

/// Weight given to a revived component before renormalization.
pub const REVIVED_WEIGHT_FLOOR: f64 = 1e-6;

/// Allowed per-step decrease of the log-likelihood, relative to `1 + |L|`.
pub const MONOTONE_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop once `|L_t - L_{t-1}| <= rel_tol * |L_{t-1}|`.
    pub rel_tol: f64,
    /// Relative covariance ridge, scaled by the mean diagonal.
    pub ridge: f64,
    pub seed: u64,
    pub gamma_diag_init: f64,
    /// Fail with `MonotonicityViolation` when the likelihood drops beyond slack.
    pub check_monotonic: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-6,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            gamma_diag_init: 0.8,
            check_monotonic: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(GmdaError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(GmdaError::InvalidConfig("rel_tol must be positive".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(GmdaError::InvalidConfig("ridge must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// E-step output, plus the log-likelihood of the parameters it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    m: usize,
    q: Vec<f64>,
    h: Vec<f64>,
    loglik: f64,
}

impl Responsibilities {
    /// Hand-built responsibilities; `q` is `n x k`, `h` is `n x k x m`, row-major.
    pub fn new(k: usize, m: usize, q: Vec<f64>, h: Vec<f64>) -> Result<Self> {
        if k == 0 || m == 0 || !q.len().is_multiple_of(k) {
            return Err(GmdaError::ShapeMismatch("q must be n x k".into()));
        }
        let n = q.len() / k;
        if h.len() != n * k * m {
            return Err(GmdaError::ShapeMismatch(format!(
                "h has {} entries, expected {}",
                h.len(),
                n * k * m
            )));
        }
        if q.iter().chain(&h).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GmdaError::InvalidParams("responsibilities must lie in [0, 1]".into()));
        }
        Ok(Self {
            n,
            k,
            m,
            q,
            h,
            loglik: f64::NAN,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn q(&self, i: usize, w: usize) -> f64 {
        self.q[i * self.k + w]
    }

    #[inline]
    pub fn h(&self, i: usize, w: usize, m: usize) -> f64 {
        self.h[(i * self.k + w) * self.m + m]
    }

    pub fn q_row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }

    /// Log-likelihood of the parameters these responsibilities came from
    /// (`NaN` when built by hand).
    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    /// Checks that every q row and every h slice sums to one within `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        for i in 0..self.n {
            let s: f64 = self.q_row(i).iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(GmdaError::InvalidParams(format!("q row {i} sums to {s}")));
            }
            for w in 0..self.k {
                let s: f64 = (0..self.m).map(|m| self.h(i, w, m)).sum();
                if (s - 1.0).abs() > tol {
                    return Err(GmdaError::InvalidParams(format!("h slice ({i},{w}) sums to {s}")));
                }
            }
        }
        Ok(())
    }
}

struct LogTerms {
    weights: Vec<f64>,
    gamma: Vec<f64>,
    pi: Vec<f64>,
}

impl LogTerms {
    fn new(params: &GmdaParams) -> Self {
        Self {
            weights: params
                .classes()
                .iter()
                .flat_map(|c| c.weights.iter().map(|w| w.ln()))
                .collect(),
            gamma: params.gamma().as_slice().iter().map(|g| g.ln()).collect(),
            pi: params.pi().iter().map(|p| p.ln()).collect(),
        }
    }
}

fn check_dims(dataset: &Dataset, params: &GmdaParams) -> Result<()> {
    if dataset.dim() != params.d() {
        return Err(GmdaError::DimensionMismatch {
            expected: params.d(),
            found: dataset.dim(),
        });
    }
    if dataset.class_count() != params.k() {
        return Err(GmdaError::ShapeMismatch(format!(
            "dataset has {} classes, model has {}",
            dataset.class_count(),
            params.k()
        )));
    }
    Ok(())
}

/// Fills `out[m] = log w_m + log g(x | μ_m, Σ_m)` and returns their log-sum-exp.
fn component_scores(x: &[f64], class: &ClassMixture, log_w: &[f64], out: &mut [f64]) -> f64 {
    for (m, comp) in class.components.iter().enumerate() {
        out[m] = log_w[m] + comp.log_pdf_unchecked(x);
    }
    lse(out)
}

/// `log p(x | w) = log Σ_m w_m g(x | μ_m, Σ_m)`.
pub fn log_class_density(x: &[f64], params: &GmdaParams, class: usize) -> Result<f64> {
    if x.len() != params.d() {
        return Err(GmdaError::DimensionMismatch {
            expected: params.d(),
            found: x.len(),
        });
    }
    if class >= params.k() {
        return Err(GmdaError::InvalidParams(format!("class {class} out of range")));
    }
    let c = params.class(class);
    let log_w: Vec<f64> = c.weights.iter().map(|w| w.ln()).collect();
    let mut scratch = vec![0.0; params.m()];
    Ok(component_scores(x, c, &log_w, &mut scratch))
}

/// Posterior over true classes and mixture components for every sample.
///
/// `q[i][w] ∝ p(x_i | w) γ[ỹ_i][w] π_w` normalized over classes and
/// `h[i][w][m] ∝ w_{w,m} g(x_i | μ_{w,m}, Σ_{w,m})` normalized over components,
/// both computed in the log domain.
pub fn e_step(dataset: &Dataset, params: &GmdaParams) -> Result<Responsibilities> {
    check_dims(dataset, params)?;
    let (n, k, m) = (dataset.len(), params.k(), params.m());
    let logs = LogTerms::new(params);
    let labels = dataset.observed_labels();

    let parts = par::map_chunks(n, |range| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let len = range.len();
        let mut q = vec![0.0; len * k];
        let mut h = vec![0.0; len * k * m];
        let mut ll = 0.0;
        let mut comp = vec![0.0; m];
        let mut score = vec![0.0; k];
        for (local, i) in range.enumerate() {
            let x = dataset.row(i);
            let o = labels[i];
            for w in 0..k {
                let lcd = component_scores(x, params.class(w), &logs.weights[w * m..(w + 1) * m], &mut comp);
                let slice = &mut h[(local * k + w) * m..(local * k + w + 1) * m];
                if lcd.is_finite() {
                    for (hm, c) in slice.iter_mut().zip(&comp) {
                        *hm = (c - lcd).exp();
                    }
                } else {
                    slice.fill(1.0 / m as f64);
                }
                score[w] = lcd + logs.gamma[o * k + w] + logs.pi[w];
            }
            let norm = lse(&score);
            if !norm.is_finite() {
                return Err(GmdaError::NumericalCollapse(i));
            }
            for (qw, s) in q[local * k..(local + 1) * k].iter_mut().zip(&score) {
                *qw = (s - norm).exp();
            }
            ll += norm;
        }
        Ok((q, h, ll))
    });

    let mut q = Vec::with_capacity(n * k);
    let mut h = Vec::with_capacity(n * k * m);
    let mut loglik = 0.0;
    for part in parts {
        let (pq, ph, pl) = part?;
        q.extend_from_slice(&pq);
        h.extend_from_slice(&ph);
        loglik += pl;
    }
    Ok(Responsibilities { n, k, m, q, h, loglik })
}

/// `L = Σ_i log Σ_w p(x_i | w) γ[ỹ_i][w] π_w`.
pub fn log_likelihood(dataset: &Dataset, params: &GmdaParams) -> Result<f64> {
    Ok(e_step(dataset, params)?.loglik)
}

/// The EM lower bound evaluated at `params` with responsibilities `resp`,
/// entropy terms included. Equals [`log_likelihood`] when `resp` is the E-step
/// output for `params`.
pub fn evidence_lower_bound(dataset: &Dataset, params: &GmdaParams, resp: &Responsibilities) -> Result<f64> {
    check_dims(dataset, params)?;
    let (k, m) = (params.k(), params.m());
    let logs = LogTerms::new(params);
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let x = dataset.row(i);
        let o = dataset.observed_labels()[i];
        for w in 0..k {
            let q = resp.q(i, w);
            if q == 0.0 {
                continue;
            }
            let mut inner = logs.gamma[o * k + w] + logs.pi[w] - q.ln();
            for c in 0..m {
                let h = resp.h(i, w, c);
                if h == 0.0 {
                    continue;
                }
                let lg = params.class(w).components[c].log_pdf_unchecked(x);
                inner += h * (logs.weights[w * m + c] + lg - h.ln());
            }
            total += q * inner;
        }
    }
    Ok(total)
}

/// Parameters produced by an M-step and the components that had to be revived.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepOutput {
    pub params: GmdaParams,
    /// `(class, component)` pairs that were re-seeded: mass below [`DEAD_MASS`],
    /// covariance collapsed below [`COLLAPSE_RATIO`], or not factorizable.
    pub revived: Vec<(usize, usize)>,
}

struct FirstPass {
    mass: Vec<f64>,
    sum_x: Vec<f64>,
    /// `[observed][true]` accumulations of q.
    q_by_label: Vec<f64>,
}

/// Closed-form maximization of the lower bound.
///
/// With `r = q[i][w] h[i][w][m]`, every sample contributing once through its
/// own observed label:
///
/// * `μ_{w,m} = Σ r x / Σ r`, `Σ_{w,m} = Σ r (x-μ)(x-μ)ᵀ / Σ r` (then ridged),
/// * `w_{w,m} = Σ_i r / Σ_i Σ_m r`,
/// * `γ[o][w] = Σ_{i: ỹ_i = o} q[i][w] / Σ_i q[i][w]`,
/// * `π_w = Σ_i q[i][w] / n`.
///
/// No Bessel correction is applied to the covariance.
pub fn m_step(dataset: &Dataset, resp: &Responsibilities, ridge: f64) -> Result<MStepOutput> {
    m_step_inner(dataset, resp, ridge, None)
}

/// [`m_step`] guarded against the covariance ridge.
///
/// Where a component has (nearly) collapsed onto a subspace the ridge
/// dominates its covariance, and the ridged update can score worse than the
/// component it replaces. Such an update is rejected and the component from
/// `previous` kept, so the expected complete-data log-likelihood never
/// decreases and neither does the likelihood.
pub fn m_step_from(
    dataset: &Dataset,
    resp: &Responsibilities,
    ridge: f64,
    previous: &GmdaParams,
) -> Result<MStepOutput> {
    if previous.k() != resp.k() || previous.m() != resp.m() || previous.d() != dataset.dim() {
        return Err(GmdaError::ShapeMismatch("previous parameters do not match".into()));
    }
    m_step_inner(dataset, resp, ridge, Some(previous))
}

fn m_step_inner(
    dataset: &Dataset,
    resp: &Responsibilities,
    ridge: f64,
    previous: Option<&GmdaParams>,
) -> Result<MStepOutput> {
    let (n, k, m, d) = (dataset.len(), resp.k(), resp.m(), dataset.dim());
    if resp.len() != n {
        return Err(GmdaError::LengthMismatch {
            left: n,
            right: resp.len(),
        });
    }
    if dataset.class_count() != k {
        return Err(GmdaError::ShapeMismatch(format!(
            "dataset has {} classes, responsibilities have {k}",
            dataset.class_count()
        )));
    }
    let labels = dataset.observed_labels();
    let km = k * m;

    let first = par::reduce_chunks(
        n,
        |range| {
            let mut acc = FirstPass {
                mass: vec![0.0; km],
                sum_x: vec![0.0; km * d],
                q_by_label: vec![0.0; k * k],
            };
            for i in range {
                let x = dataset.row(i);
                let o = labels[i];
                for w in 0..k {
                    let q = resp.q(i, w);
                    acc.q_by_label[o * k + w] += q;
                    for c in 0..m {
                        let r = q * resp.h(i, w, c);
                        let j = w * m + c;
                        acc.mass[j] += r;
                        for (s, xv) in acc.sum_x[j * d..(j + 1) * d].iter_mut().zip(x) {
                            *s += r * xv;
                        }
                    }
                }
            }
            acc
        },
        |mut a, b| {
            par::add_into(&mut a.mass, &b.mass);
            par::add_into(&mut a.sum_x, &b.sum_x);
            par::add_into(&mut a.q_by_label, &b.q_by_label);
            a
        },
    )
    .ok_or_else(|| GmdaError::InvalidDataset("empty dataset".into()))?;

    let alive: Vec<bool> = first.mass.iter().map(|&s| s >= DEAD_MASS).collect();
    let means: Vec<Vec<f64>> = (0..km)
        .map(|j| {
            if alive[j] {
                first.sum_x[j * d..(j + 1) * d]
                    .iter()
                    .map(|s| s / first.mass[j])
                    .collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();

    // second pass: weighted scatter about the new means, lower triangle only
    let scatter = par::reduce_chunks(
        n,
        |range| {
            let mut acc = vec![0.0; km * d * d];
            let mut diff = vec![0.0; d];
            for i in range {
                let x = dataset.row(i);
                for w in 0..k {
                    let q = resp.q(i, w);
                    for c in 0..m {
                        let j = w * m + c;
                        if !alive[j] {
                            continue;
                        }
                        let r = q * resp.h(i, w, c);
                        if r == 0.0 {
                            continue;
                        }
                        for (dv, (xv, mv)) in diff.iter_mut().zip(x.iter().zip(&means[j])) {
                            *dv = xv - mv;
                        }
                        let block = &mut acc[j * d * d..(j + 1) * d * d];
                        for a in 0..d {
                            let ra = r * diff[a];
                            for b in 0..=a {
                                block[a * d + b] += ra * diff[b];
                            }
                        }
                    }
                }
            }
            acc
        },
        |mut a, b| {
            par::add_into(&mut a, &b);
            a
        },
    )
    .expect("non-empty dataset");

    let pooled = pooled_variance(dataset);
    let mut classes = Vec::with_capacity(k);
    let mut revived = Vec::new();
    for w in 0..k {
        let class_mass: f64 = first.mass[w * m..(w + 1) * m].iter().sum();
        let mut weights: Vec<f64> = if class_mass >= DEAD_MASS {
            first.mass[w * m..(w + 1) * m].iter().map(|s| s / class_mass).collect()
        } else {
            vec![1.0 / m as f64; m]
        };
        let mut comps: Vec<Option<GaussianComponent>> = Vec::with_capacity(m);
        for c in 0..m {
            let j = w * m + c;
            if !alive[j] {
                comps.push(None);
                continue;
            }
            let block = &scatter[j * d * d..(j + 1) * d * d];
            let mut cov = DMatrix::zeros(d, d);
            for a in 0..d {
                for b in 0..=a {
                    let v = block[a * d + b] / first.mass[j];
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            let spread = cov.diagonal().mean();
            if spread < COLLAPSE_RATIO * pooled {
                log::warn!("component ({w},{c}) collapsed onto a point (mean variance {spread:e})");
                comps.push(None);
                continue;
            }
            match GaussianComponent::new(means[j].clone(), cov.clone(), ridge) {
                Ok(g) => {
                    let kept = match previous {
                        Some(prev) => {
                            let old = &prev.class(w).components[c];
                            let gain = g.expected_log_pdf(&means[j], &cov)? - old.expected_log_pdf(&means[j], &cov)?;
                            (gain < 0.0).then(|| old.clone())
                        }
                        None => None,
                    };
                    if kept.is_some() {
                        log::debug!("component ({w},{c}): ridged update rejected");
                    }
                    comps.push(Some(kept.unwrap_or(g)));
                }
                Err(GmdaError::NotPositiveDefinite { .. }) => {
                    log::warn!("component ({w},{c}) has a singular covariance");
                    comps.push(None);
                }
                Err(e) => return Err(e),
            }
        }
        let dead: Vec<usize> = (0..m).filter(|&c| comps[c].is_none()).collect();
        if !dead.is_empty() {
            let template = average_covariance(comps.iter().flatten()).map_or_else(|| pooled_scatter(dataset), Ok)?;
            for &c in &dead {
                let at = revival_sample(dataset, resp, &revived);
                log::warn!("re-seeding component ({w},{c}) at sample {at}");
                comps[c] = Some(GaussianComponent::new(
                    dataset.row(at).to_vec(),
                    template.clone(),
                    ridge,
                )?);
                weights[c] = weights[c].max(REVIVED_WEIGHT_FLOOR);
                revived.push((w, c));
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|v| *v /= total);
        }
        classes.push(ClassMixture {
            weights,
            components: comps.into_iter().map(|c| c.expect("filled")).collect(),
        });
    }

    let mut gamma = vec![0.0; k * k];
    let mut pi = vec![0.0; k];
    for w in 0..k {
        let total: f64 = (0..k).map(|o| first.q_by_label[o * k + w]).sum();
        for o in 0..k {
            gamma[o * k + w] = if total > 0.0 {
                first.q_by_label[o * k + w] / total
            } else {
                1.0 / k as f64
            };
        }
        pi[w] = total / n as f64;
    }

    let params = GmdaParams::new(classes, FlipMatrix::new(k, gamma)?, pi)?;
    params.validate()?;
    Ok(MStepOutput { params, revived })
}

fn average_covariance<'a>(comps: impl Iterator<Item = &'a GaussianComponent>) -> Option<DMatrix<f64>> {
    let mut count = 0usize;
    let mut sum: Option<DMatrix<f64>> = None;
    for c in comps {
        count += 1;
        sum = Some(match sum {
            Some(s) => s + c.covariance(),
            None => c.covariance().clone(),
        });
    }
    sum.map(|s| s / count as f64)
}

/// Mean per-feature variance of the whole dataset.
fn pooled_variance(dataset: &Dataset) -> f64 {
    let (n, d) = (dataset.len() as f64, dataset.dim());
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for row in dataset.rows() {
        for a in 0..d {
            sum[a] += row[a];
            sq[a] += row[a] * row[a];
        }
    }
    let var: f64 = (0..d).map(|a| (sq[a] / n - (sum[a] / n).powi(2)).max(0.0)).sum();
    var / d as f64
}

fn pooled_scatter(dataset: &Dataset) -> Result<DMatrix<f64>> {
    let d = dataset.dim();
    let n = dataset.len() as f64;
    let mut mean = vec![0.0; d];
    for row in dataset.rows() {
        par::add_into(&mut mean, row);
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut cov = DMatrix::zeros(d, d);
    for row in dataset.rows() {
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]) / n;
            }
        }
    }
    Ok(cov)
}

/// Sample whose largest joint responsibility is smallest, i.e. the point
/// worst explained by the current mixture. Skips samples already used for
/// revivals in this step (matched by position).
fn revival_sample(dataset: &Dataset, resp: &Responsibilities, used: &[(usize, usize)]) -> usize {
    let (k, m) = (resp.k(), resp.m());
    let mut scored: Vec<(f64, usize)> = (0..dataset.len())
        .map(|i| {
            let best = (0..k)
                .flat_map(|w| (0..m).map(move |c| (w, c)))
                .map(|(w, c)| resp.q(i, w) * resp.h(i, w, c))
                .fold(0.0, f64::max);
            (best, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored[used.len().min(scored.len() - 1)].1
}

/// Outcome of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// `loglik_trace[0]` is the initial likelihood, entry `t` follows the `t`-th M-step.
    pub loglik_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub final_params: GmdaParams,
    /// `(iteration, class, component)` for every dead component revived.
    pub revivals: Vec<(usize, usize, usize)>,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn to_doc(&self) -> FitReportDoc {
        FitReportDoc {
            loglik_trace: self.loglik_trace.clone(),
            iterations_run: self.iterations_run,
            converged: self.converged,
            revivals: self.revivals.clone(),
            final_params: self.final_params.to_doc(),
        }
    }
}

/// Serialized [`FitReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportDoc {
    pub loglik_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub revivals: Vec<(usize, usize, usize)>,
    pub final_params: ParamsDoc,
}

/// k-means initialization followed by EM.
pub fn fit(dataset: &Dataset, components: usize, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let init = init_params(dataset, components, config.seed, config.gamma_diag_init, config.ridge)?;
    fit_from(dataset, init, config)
}

/// The single-Gaussian-per-class model; identical to `fit(dataset, 1, config)`.
pub fn fit_single_gaussian(dataset: &Dataset, config: &FitConfig) -> Result<FitReport> {
    fit(dataset, 1, config)
}

/// EM from explicit starting parameters.
pub fn fit_from(dataset: &Dataset, init: GmdaParams, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    init.validate()?;
    let mut params = init;
    let mut resp = e_step(dataset, &params)?;
    let mut trace = vec![resp.loglik];
    let mut revivals = Vec::new();
    let mut converged = false;
    for iter in 1..=config.max_iters {
        let step = m_step_from(dataset, &resp, config.ridge, &params)?;
        let next_resp = e_step(dataset, &step.params)?;
        let (prev, cur) = (resp.loglik, next_resp.loglik);
        if config.check_monotonic && step.revived.is_empty() && cur < prev - MONOTONE_SLACK * (1.0 + prev.abs()) {
            return Err(GmdaError::MonotonicityViolation {
                iteration: iter,
                previous: prev,
                current: cur,
            });
        }
        revivals.extend(step.revived.iter().map(|&(w, c)| (iter, w, c)));
        params = step.params;
        resp = next_resp;
        trace.push(cur);
        log::debug!("iteration {iter}: log-likelihood {cur}");
        if (cur - prev).abs() <= config.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(FitReport {
        iterations_run: trace.len() - 1,
        loglik_trace: trace,
        converged,
        final_params: params,
        revivals,
    })
}

/// `p(w | x) ∝ π_w p(x | w)`. The flip matrix plays no part in prediction.
pub fn predict_posterior(x: &[f64], params: &GmdaParams) -> Result<Vec<f64>> {
    if x.len() != params.d() {
        return Err(GmdaError::DimensionMismatch {
            expected: params.d(),
            found: x.len(),
        });
    }
    let (k, m) = (params.k(), params.m());
    let mut comp = vec![0.0; m];
    let scores: Vec<f64> = (0..k)
        .map(|w| {
            let c = params.class(w);
            let log_w: Vec<f64> = c.weights.iter().map(|v| v.ln()).collect();
            params.pi()[w].ln() + component_scores(x, c, &log_w, &mut comp)
        })
        .collect();
    let norm = lse(&scores);
    if !norm.is_finite() {
        return Err(GmdaError::NumericalCollapse(0));
    }
    Ok(scores.iter().map(|s| (s - norm).exp()).collect())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_label(x: &[f64], params: &GmdaParams) -> Result<usize> {
    Ok(argmax(&predict_posterior(x, params)?))
}

/// Posterior rows for every sample of `dataset` (labels are ignored).
pub fn predict_posteriors(dataset: &Dataset, params: &GmdaParams) -> Result<Vec<Vec<f64>>> {
    par::map_indexed(dataset.len(), |i| predict_posterior(dataset.row(i), params))
        .into_iter()
        .collect()
}

pub fn predict_labels(dataset: &Dataset, params: &GmdaParams) -> Result<Vec<usize>> {
    Ok(predict_posteriors(dataset, params)?.iter().map(|p| argmax(p)).collect())
}
