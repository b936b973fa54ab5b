use gmda::em::{evidence_lower_bound, MONOTONE_SLACK};
use gmda::model::SIMPLEX_TOL;
use gmda::{
    e_step, fit, fit_from, fit_single_gaussian, init_params, log_likelihood, m_step, m_step_from, Dataset, FitConfig,
    GmdaParams, NoiseSpec, SynthSpec,
};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    spec: SynthSpec,
    m: usize,
    rate: f64,
    noise_seed: u64,
}

fn instance() -> impl Strategy<Value = Instance> {
    (
        1usize..=4,
        2usize..=3,
        1usize..=3,
        0.0f64..0.5,
        0.5f64..4.0,
        any::<u64>(),
        any::<u64>(),
    )
        .prop_flat_map(|(d, k, m, rate, sep, seed, noise_seed)| {
            (20 * k * m..=400).prop_map(move |n| Instance {
                spec: SynthSpec {
                    n,
                    d,
                    k,
                    components_per_class: m,
                    class_priors: vec![],
                    mean_separation: sep,
                    covariance_scale: 1.0,
                    cross_class_covariance: 0.0,
                    seed,
                },
                m,
                rate,
                noise_seed,
            })
        })
}

fn noisy_data(inst: &Instance) -> Dataset {
    let clean = gmda::data::generate(&inst.spec).unwrap();
    gmda::data::inject_noise(&clean, &NoiseSpec::symmetric(inst.rate, inst.noise_seed)).unwrap()
}

fn start(ds: &Dataset, m: usize, seed: u64) -> Option<GmdaParams> {
    // a class can come out too small after noise; such draws are skipped
    init_params(ds, m, seed, 0.8, 1e-6).ok()
}

fn assert_valid(p: &GmdaParams) {
    p.validate().unwrap();
    for class in p.classes() {
        let s: f64 = class.weights.iter().sum();
        assert!((s - 1.0).abs() < SIMPLEX_TOL);
        for c in &class.components {
            let cov = c.covariance();
            assert_eq!(cov, &cov.transpose());
            assert!(c.is_factorized());
        }
    }
    for s in p.gamma().column_sums() {
        assert!((s - 1.0).abs() < SIMPLEX_TOL);
    }
    assert!((p.pi().iter().sum::<f64>() - 1.0).abs() < SIMPLEX_TOL);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn likelihood_never_decreases_and_params_stay_valid(inst in instance()) {
        let ds = noisy_data(&inst);
        let Some(mut params) = start(&ds, inst.m, 1) else { return Ok(()) };
        let mut resp = e_step(&ds, &params).unwrap();
        for _ in 0..25 {
            let out = m_step_from(&ds, &resp, 1e-6, &params).unwrap();
            assert_valid(&out.params);
            let next = e_step(&ds, &out.params).unwrap();
            next.check_normalized(1e-12).unwrap();
            if out.revived.is_empty() {
                let (a, b) = (resp.loglik(), next.loglik());
                prop_assert!(b >= a - MONOTONE_SLACK * (1.0 + a.abs()), "{a} -> {b}");
            }
            params = out.params;
            resp = next;
        }
    }

    #[test]
    fn responsibilities_factor_the_joint_posterior(inst in instance()) {
        let ds = noisy_data(&inst);
        let Some(params) = start(&ds, inst.m, 2) else { return Ok(()) };
        let resp = e_step(&ds, &params).unwrap();
        let (k, m) = (params.k(), params.m());
        for i in 0..ds.len().min(40) {
            let x = ds.row(i);
            let o = ds.observed_labels()[i];
            let mut terms = Vec::with_capacity(k * m);
            for w in 0..k {
                let class = params.class(w);
                for c in 0..m {
                    terms.push(
                        class.weights[c].ln() + class.components[c].log_pdf(x).unwrap()
                            + params.gamma().get(o, w).ln() + params.pi()[w].ln(),
                    );
                }
            }
            let z = gmda::log_sum_exp(&terms).unwrap();
            for w in 0..k {
                for c in 0..m {
                    let joint = (terms[w * m + c] - z).exp();
                    prop_assert!((joint - resp.q(i, w) * resp.h(i, w, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lower_bound_is_tight_at_the_posterior(inst in instance()) {
        let ds = noisy_data(&inst);
        let Some(params) = start(&ds, inst.m, 3) else { return Ok(()) };
        let resp = e_step(&ds, &params).unwrap();
        let ll = log_likelihood(&ds, &params).unwrap();
        let elbo = evidence_lower_bound(&ds, &params, &resp).unwrap();
        prop_assert!((elbo - ll).abs() <= 1e-9 * (1.0 + ll.abs()), "{elbo} vs {ll}");
        // responsibilities from other parameters give a looser bound
        let moved = m_step(&ds, &resp, 1e-6).unwrap().params;
        let stale = evidence_lower_bound(&ds, &moved, &resp).unwrap();
        let ll_moved = log_likelihood(&ds, &moved).unwrap();
        prop_assert!(stale <= ll_moved + 1e-9 * (1.0 + ll_moved.abs()));
    }

    #[test]
    fn relabeling_classes_permutes_everything(inst in instance()) {
        let ds = noisy_data(&inst);
        let Some(params) = start(&ds, inst.m, 4) else { return Ok(()) };
        let k = params.k();
        let sigma: Vec<usize> = (0..k).map(|w| (w + 1) % k).collect();
        let permuted = params.permute_classes(&sigma).unwrap();
        let relabeled = ds.with_observed_labels(ds.observed_labels().iter().map(|&l| sigma[l]).collect()).unwrap();
        let a = e_step(&ds, &params).unwrap();
        let b = e_step(&relabeled, &permuted).unwrap();
        prop_assert!((a.loglik() - b.loglik()).abs() <= 1e-10 * a.loglik().abs());
        for i in 0..ds.len() {
            for w in 0..k {
                prop_assert!((a.q(i, w) - b.q(i, sigma[w])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_order_does_not_change_the_likelihood(inst in instance()) {
        let ds = noisy_data(&inst);
        let Some(params) = start(&ds, inst.m, 5) else { return Ok(()) };
        let reversed: Vec<usize> = (0..ds.len()).rev().collect();
        let a = log_likelihood(&ds, &params).unwrap();
        let b = log_likelihood(&ds.subset(&reversed).unwrap(), &params).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs());
    }
}

fn small_cases() -> Vec<Instance> {
    (0..6)
        .map(|s| Instance {
            spec: SynthSpec {
                n: 150 + 40 * s as usize,
                d: 1 + s as usize % 3,
                k: 2 + s as usize % 2,
                components_per_class: 1,
                class_priors: vec![],
                mean_separation: 2.0,
                covariance_scale: 1.0,
                cross_class_covariance: 0.0,
                seed: 100 + s,
            },
            m: 1,
            rate: 0.1 * s as f64 / 2.0,
            noise_seed: s,
        })
        .collect()
}

#[test]
fn single_gaussian_mode_is_the_one_component_fit() {
    for inst in small_cases() {
        let ds = noisy_data(&inst);
        let cfg = FitConfig {
            seed: 9,
            ..Default::default()
        };
        let a = fit_single_gaussian(&ds, &cfg).unwrap();
        let b = fit(&ds, 1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.final_params.to_doc(), b.final_params.to_doc());
    }
}

#[test]
fn single_gaussian_m_step_is_the_weighted_estimate() {
    for inst in small_cases() {
        let ds = noisy_data(&inst);
        let params = start(&ds, 1, 0).unwrap();
        let resp = e_step(&ds, &params).unwrap();
        let next = m_step(&ds, &resp, 0.0).unwrap().params;
        let d = ds.dim();
        for w in 0..params.k() {
            let weights: Vec<f64> = (0..ds.len()).map(|i| resp.q(i, w)).collect();
            let total: f64 = weights.iter().sum();
            let mean: Vec<f64> = (0..d)
                .map(|a| weights.iter().zip(ds.rows()).map(|(q, x)| q * x[a]).sum::<f64>() / total)
                .collect();
            let comp = &next.class(w).components[0];
            for a in 0..d {
                assert!((comp.mean()[a] - mean[a]).abs() < 1e-10);
                for b in 0..d {
                    let cov = weights
                        .iter()
                        .zip(ds.rows())
                        .map(|(q, x)| q * (x[a] - mean[a]) * (x[b] - mean[b]))
                        .sum::<f64>()
                        / total;
                    assert!((comp.covariance()[(a, b)] - cov).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn fits_are_reproducible_and_thread_independent() {
    let ds = noisy_data(&Instance {
        spec: SynthSpec {
            n: 3000,
            ..SynthSpec::two_class_plane(3000, 21)
        },
        m: 2,
        rate: 0.3,
        noise_seed: 4,
    });
    let cfg = FitConfig {
        seed: 5,
        max_iters: 40,
        ..Default::default()
    };
    let serial = gmda::par::with_threads(1, || fit(&ds, 2, &cfg)).unwrap();
    let again = gmda::par::with_threads(1, || fit(&ds, 2, &cfg)).unwrap();
    let parallel = gmda::par::with_threads(4, || fit(&ds, 2, &cfg)).unwrap();
    assert_eq!(serial, again);
    assert_eq!(serial, parallel);
}

#[test]
fn fit_from_checks_monotonicity() {
    let ds = noisy_data(&small_cases()[3]);
    let init = start(&ds, 1, 0).unwrap();
    let report = fit_from(&ds, init, &FitConfig::default()).unwrap();
    assert!(report
        .loglik_trace
        .windows(2)
        .all(|w| w[1] >= w[0] - MONOTONE_SLACK * (1.0 + w[0].abs())));
    assert_eq!(report.loglik_trace.len(), report.iterations_run + 1);
}
