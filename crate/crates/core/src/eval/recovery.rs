use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{GmdaError, Result};
use crate::model::GmdaParams;

/// Ground truth a fitted model is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTruth {
    /// `flip_table[true][observed]`, the layout noise specs use.
    pub flip_table: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
    /// Generating component means, `means[class][component]`, in raw feature units.
    pub means: Vec<Vec<Vec<f64>>>,
}

/// Fitted flip matrix and priors next to the truth, after class matching.
///
/// Matrices are stored `[observed][true]`, the layout of [`crate::FlipMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Fitted class `w` was matched to true class `permutation[w]`.
    pub permutation: Vec<usize>,
    pub gamma_fitted: Vec<Vec<f64>>,
    pub gamma_truth: Vec<Vec<f64>>,
    pub gamma_abs_dev: Vec<Vec<f64>>,
    pub pi_fitted: Vec<f64>,
    pub pi_truth: Vec<f64>,
    pub pi_abs_dev: Vec<f64>,
    pub max_gamma_dev: f64,
    pub max_pi_dev: f64,
}

impl RecoveryReport {
    pub fn gamma_diagonal(&self) -> Vec<f64> {
        (0..self.gamma_fitted.len()).map(|i| self.gamma_fitted[i][i]).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Assigns each fitted class to a generating class minimizing total distance.
///
/// The cost of pairing fitted class `w` with true class `t` is the
/// weight-averaged squared distance from each fitted component mean to the
/// nearest generating component mean of `t`; with one component per class
/// this is the squared distance between class means.
pub fn match_classes(
    params: &GmdaParams,
    scaler: Option<&Scaler>,
    truth_means: &[Vec<Vec<f64>>],
) -> Result<Vec<usize>> {
    let k = params.k();
    if truth_means.len() != k {
        return Err(GmdaError::ShapeMismatch(format!(
            "model has {k} classes, truth has {}",
            truth_means.len()
        )));
    }
    if truth_means.iter().flatten().any(|m| m.len() != params.d()) {
        return Err(GmdaError::ShapeMismatch("truth means have the wrong dimension".into()));
    }
    let mut cost = vec![vec![0.0; k]; k];
    for (w, class) in params.classes().iter().enumerate() {
        let fitted: Vec<Vec<f64>> = class
            .components
            .iter()
            .map(|comp| match scaler {
                Some(s) => s.inverse_row(comp.mean()),
                None => comp.mean().to_vec(),
            })
            .collect();
        for t in 0..k {
            cost[w][t] = class
                .weights
                .iter()
                .zip(&fitted)
                .map(|(wt, mu)| {
                    let nearest = truth_means[t]
                        .iter()
                        .map(|g| sq_dist(mu, g))
                        .fold(f64::INFINITY, f64::min);
                    wt * nearest
                })
                .sum();
        }
    }
    // integer weights for the assignment solver, scaled to keep 12 significant digits
    let top = cost.iter().flatten().cloned().fold(0.0, f64::max);
    let scale = if top > 0.0 && top.is_finite() { 1e12 / top } else { 0.0 };
    let ints: Vec<Vec<i64>> = cost
        .iter()
        .map(|r| r.iter().map(|c| (c * scale).round() as i64).collect())
        .collect();
    let matrix = Matrix::from_rows(ints).expect("square cost matrix");
    Ok(kuhn_munkres_min(&matrix).1)
}

/// Compares fitted Γ and Π with the truth after resolving class labels.
///
/// `scaler` maps fitted means back to raw units when the model was trained on
/// standardized features.
pub fn recovery_report(params: &GmdaParams, scaler: Option<&Scaler>, truth: &RecoveryTruth) -> Result<RecoveryReport> {
    let k = params.k();
    if truth.flip_table.len() != k || truth.flip_table.iter().any(|r| r.len() != k) || truth.priors.len() != k {
        return Err(GmdaError::ShapeMismatch(format!("truth does not describe {k} classes")));
    }
    let permutation = match_classes(params, scaler, &truth.means)?;
    let aligned = params.permute_classes(&permutation)?;
    let gamma_fitted = aligned.gamma().rows();
    let gamma_truth: Vec<Vec<f64>> = (0..k)
        .map(|o| (0..k).map(|t| truth.flip_table[t][o]).collect())
        .collect();
    let gamma_abs_dev: Vec<Vec<f64>> = gamma_fitted
        .iter()
        .zip(&gamma_truth)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect())
        .collect();
    let pi_fitted = aligned.pi().to_vec();
    let pi_abs_dev: Vec<f64> = pi_fitted
        .iter()
        .zip(&truth.priors)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(RecoveryReport {
        permutation,
        max_gamma_dev: gamma_abs_dev.iter().flatten().cloned().fold(0.0, f64::max),
        max_pi_dev: pi_abs_dev.iter().cloned().fold(0.0, f64::max),
        gamma_fitted,
        gamma_truth,
        gamma_abs_dev,
        pi_fitted,
        pi_truth: truth.priors.clone(),
        pi_abs_dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianComponent;
    use crate::model::{ClassMixture, FlipMatrix};
    use nalgebra::DMatrix;

    fn point_params(means: &[f64], gamma_rows: &[Vec<f64>], pi: Vec<f64>) -> GmdaParams {
        let classes = means
            .iter()
            .map(|&m| ClassMixture {
                weights: vec![1.0],
                components: vec![
                    GaussianComponent::with_absolute_ridge(vec![m], DMatrix::identity(1, 1), 0.0).unwrap(),
                ],
            })
            .collect();
        GmdaParams::new(classes, FlipMatrix::from_rows(gamma_rows).unwrap(), pi).unwrap()
    }

    #[test]
    fn swapped_classes_are_matched() {
        // fitted class 0 sits where true class 1 was generated
        let p = point_params(&[10.0, 0.0], &[vec![0.7, 0.1], vec![0.3, 0.9]], vec![0.4, 0.6]);
        let truth = RecoveryTruth {
            flip_table: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            priors: vec![0.6, 0.4],
            means: vec![vec![vec![0.1]], vec![vec![9.8]]],
        };
        let r = recovery_report(&p, None, &truth).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        assert_eq!(r.pi_fitted, vec![0.6, 0.4]);
        assert_eq!(r.gamma_diagonal(), vec![0.9, 0.7]);
        assert!(r.max_gamma_dev < 1e-15 && r.max_pi_dev < 1e-15);
    }

    #[test]
    fn scaler_maps_means_back() {
        let p = point_params(&[1.0, -1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.5, 0.5]);
        let scaler = Scaler {
            mean: vec![50.0],
            scale: vec![10.0],
        };
        let means = vec![vec![vec![60.0]], vec![vec![40.0]]];
        assert_eq!(match_classes(&p, Some(&scaler), &means).unwrap(), vec![0, 1]);
        assert_eq!(
            match_classes(&p, None, &means[..1]).unwrap_err().name(),
            "ShapeMismatch"
        );
    }
}
