//! Gaussian mixture discriminant analysis under label noise.
//!
//! Each class density is a Gaussian mixture. Observed labels are treated as
//! passing through an unknown flipping channel `gamma[observed][true]`, which
//! is learned by EM together with the mixtures and the class priors. Prediction
//! returns the posterior over the clean label.
//!
//! The crate is organised bottom-up:
//!
//! * [`gaussian`]: log-domain Gaussian density kernel and covariance conditioning.
//! * [`init`]: seeded k-means and starting parameters.
//! * [`model`] / [`em`]: parameter container, E/M steps, the fit driver and prediction.
//! * [`data`]: datasets, synthetic generation, label-noise injection, splits and CSV.
//! * [`eval`]: error rates, experiment sweeps, parameter recovery and tables.
//!
//! Data-parallel sections (per-sample E-step, M-step reductions, experiment
//! cells) run on rayon when the default `parallel` feature is enabled and
//! sequentially otherwise. Reductions combine fixed-size chunks in index order,
//! so results are bit-identical for every thread count and for both builds.

pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod init;
pub mod model;
pub mod par;

pub use data::{Dataset, LabelMap, NoiseKind, NoiseSpec, Scaler, SynthSpec};
pub use em::{
    e_step, fit, fit_from, fit_single_gaussian, log_class_density, log_likelihood, m_step, m_step_from, predict_label,
    predict_posterior, FitConfig, FitReport, MStepOutput, Responsibilities,
};
pub use error::{GmdaError, Result};
pub use gaussian::{log_sum_exp, regularize, GaussianComponent};
pub use init::{init_params, kmeans, KMeansResult};
pub use model::{ClassMixture, FlipMatrix, GmdaParams, SavedModel};
