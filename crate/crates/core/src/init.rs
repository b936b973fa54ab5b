//! Seeded k-means and the starting point for EM.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{GmdaError, Result};
use crate::gaussian::GaussianComponent;
use crate::model::{ClassMixture, FlipMatrix, GmdaParams};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    /// Index of the nearest center for every point (lowest index on ties).
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centers.
    pub inertia: f64,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// `points` is row-major with `dim` columns. Stops when assignments no longer
/// change or after `max_iters` center updates. A cluster that empties is
/// moved onto the point farthest from its current center.
pub fn kmeans(points: &[f64], dim: usize, clusters: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(GmdaError::DimensionMismatch {
            expected: dim,
            found: points.len(),
        });
    }
    let n = points.len() / dim;
    if clusters == 0 {
        return Err(GmdaError::InvalidConfig("k-means needs at least one cluster".into()));
    }
    if n < clusters {
        return Err(GmdaError::TooFewPoints {
            needed: clusters,
            found: n,
        });
    }
    if max_iters == 0 {
        return Err(GmdaError::InvalidConfig("max_iters must be at least 1".into()));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(clusters);
    centers.push(row(rng.random_range(0..n)).to_vec());
    let mut closest: Vec<f64> = (0..n).map(|i| dist2(row(i), &centers[0])).collect();
    while centers.len() < clusters {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in closest.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in closest.iter_mut().enumerate() {
            *d = d.min(dist2(row(i), &c));
        }
        centers.push(c);
    }

    let assign_all = |centers: &[Vec<f64>]| -> Vec<usize> { (0..n).map(|i| nearest(row(i), centers).0).collect() };
    let mut assignments = assign_all(&centers);
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut counts = vec![0usize; clusters];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        let mut updated = centers.clone();
        for j in 0..clusters {
            if counts[j] > 0 {
                updated[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..clusters {
            if counts[j] == 0 {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .map(|i| (i, dist2(row(i), &centers[assignments[i]])))
                    .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    });
                if let Some((i, _)) = far {
                    taken[i] = true;
                    updated[j] = row(i).to_vec();
                }
            }
        }
        centers = updated;
        let next = assign_all(&centers);
        if next == assignments {
            break;
        }
        assignments = next;
    }

    let inertia = (0..n).map(|i| dist2(row(i), &centers[assignments[i]])).sum();
    Ok(KMeansResult {
        centers,
        assignments,
        inertia,
        iterations,
    })
}

/// Iteration cap for the k-means run inside [`init_params`].
pub const INIT_KMEANS_ITERS: usize = 100;

/// Starting parameters: per-class k-means on the samples carrying each
/// observed label, observed-label frequencies for the priors, and a
/// diagonally dominant flip matrix with `gamma_diag` on the diagonal.
pub fn init_params(dataset: &Dataset, components: usize, seed: u64, gamma_diag: f64, ridge: f64) -> Result<GmdaParams> {
    let k = dataset.class_count();
    if components == 0 {
        return Err(GmdaError::InvalidConfig("need at least one component per class".into()));
    }
    if k > 1 && !(gamma_diag > 1.0 / k as f64 && gamma_diag <= 1.0) {
        return Err(GmdaError::InvalidConfig(format!(
            "gamma_diag {gamma_diag} outside (1/{k}, 1]"
        )));
    }
    let counts = dataset.class_counts();
    for (w, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(GmdaError::ClassMissing(w));
        }
        if c < components {
            return Err(GmdaError::ClassTooSmall {
                class: w,
                needed: components,
                found: c,
            });
        }
    }
    let d = dataset.dim();
    let classes = par::map_indexed(k, |w| -> Result<ClassMixture> {
        let members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.observed_labels()[i] == w)
            .collect();
        let mut points = Vec::with_capacity(members.len() * d);
        for &i in &members {
            points.extend_from_slice(dataset.row(i));
        }
        let km = kmeans(
            &points,
            d,
            components,
            par::derive_seed(seed, w as u64),
            INIT_KMEANS_ITERS,
        )?;
        let all: Vec<usize> = (0..members.len()).collect();
        let class_cov = scatter(&points, d, &all);
        let mut weights = Vec::with_capacity(components);
        let mut comps = Vec::with_capacity(components);
        for (j, center) in km.centers.iter().enumerate() {
            let idx: Vec<usize> = (0..members.len()).filter(|&i| km.assignments[i] == j).collect();
            let cov = if idx.len() >= 2 {
                scatter(&points, d, &idx)
            } else {
                class_cov.clone()
            };
            weights.push(idx.len() as f64 / members.len() as f64);
            comps.push(GaussianComponent::new(center.clone(), cov, ridge)?);
        }
        Ok(ClassMixture {
            weights,
            components: comps,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = dataset.len() as f64;
    let pi = counts.iter().map(|&c| c as f64 / n).collect();
    let params = GmdaParams::new(classes, FlipMatrix::diagonal(k, gamma_diag), pi)?;
    params.validate()?;
    Ok(params)
}

/// Maximum-likelihood (1/n) scatter matrix of the selected rows.
fn scatter(points: &[f64], d: usize, idx: &[usize]) -> DMatrix<f64> {
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for (m, x) in mean.iter_mut().zip(row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(d, d);
    for &i in idx {
        let r = row(i);
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::DEFAULT_RIDGE;

    #[test]
    fn separable_singletons() {
        for seed in 0..10 {
            let r = kmeans(&[0.0, 10.0], 1, 2, seed, 10).unwrap();
            let mut c: Vec<f64> = r.centers.iter().map(|c| c[0]).collect();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![0.0, 10.0]);
            assert_eq!(r.inertia, 0.0);
        }
    }

    #[test]
    fn identical_points_single_cluster() {
        let r = kmeans(&[0.0, 0.0, 0.0], 1, 1, 3, 5).unwrap();
        assert_eq!(r.centers, vec![vec![0.0]]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn identical_points_more_clusters_than_distinct_values() {
        let r = kmeans(&[1.0, 1.0, 1.0, 1.0], 1, 3, 0, 20).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            kmeans(&[1.0, 2.0], 1, 3, 0, 10),
            Err(GmdaError::TooFewPoints { needed: 3, found: 2 })
        ));
    }

    #[test]
    fn assignments_are_nearest_and_inertia_consistent() {
        let pts: Vec<f64> = (0..60).map(|i| ((i * 37) % 23) as f64 * 0.5).collect();
        let r = kmeans(&pts, 2, 4, 8, 3).unwrap();
        let mut inertia = 0.0;
        for i in 0..30 {
            let p = &pts[2 * i..2 * i + 2];
            let (j, d) = nearest(p, &r.centers);
            assert_eq!(j, r.assignments[i]);
            inertia += d;
        }
        assert_eq!(inertia, r.inertia);
    }

    #[test]
    fn gamma_and_priors_at_init() {
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|i| vec![(i % 2) as f64 * 5.0 + (i as f64 * 0.01).sin()])
            .collect();
        let labels = (0..1000).map(|i| i % 2).collect();
        let ds = Dataset::from_rows(&rows, labels, 2).unwrap();
        let p = init_params(&ds, 1, 0, 0.9, DEFAULT_RIDGE).unwrap();
        for (got, want) in p.gamma().as_slice().iter().zip([0.9, 0.1, 0.1, 0.9]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(p.pi(), &[0.5, 0.5]);
    }

    #[test]
    fn single_component_mean_is_exact_class_mean() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.3, (i as f64).cos()]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 3 == 0)).collect();
        let ds = Dataset::from_rows(&rows, labels.clone(), 2).unwrap();
        let p = init_params(&ds, 1, 5, 0.8, DEFAULT_RIDGE).unwrap();
        for w in 0..2 {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == w)
                .map(|(r, _)| r)
                .collect();
            let n = members.len() as f64;
            for j in 0..2 {
                let mean = members.iter().map(|r| r[j]).sum::<f64>() / n;
                assert_eq!(p.class(w).components[0].mean()[j], mean);
            }
        }
    }

    #[test]
    fn init_errors() {
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0, 0, 1], 3).unwrap();
        assert!(matches!(
            init_params(&ds, 1, 0, 0.8, 1e-6),
            Err(GmdaError::ClassMissing(2))
        ));
        let ds = Dataset::from_rows(&[vec![0.0], vec![1.0], vec![2.0]], vec![0, 0, 1], 2).unwrap();
        assert!(matches!(
            init_params(&ds, 2, 0, 0.8, 1e-6),
            Err(GmdaError::ClassTooSmall { class: 1, .. })
        ));
        assert!(init_params(&ds, 1, 0, 0.4, 1e-6).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..90)
            .map(|i| vec![(i as f64 * 1.7).sin() * 3.0, (i as f64 * 0.3).cos()])
            .collect();
        let labels = (0..90).map(|i| i % 3).collect();
        let ds = Dataset::from_rows(&rows, labels, 3).unwrap();
        let a = init_params(&ds, 3, 11, 0.8, 1e-6).unwrap();
        let b = init_params(&ds, 3, 11, 0.8, 1e-6).unwrap();
        assert_eq!(a, b);
        assert!(a.validate().is_ok());
    }
}
