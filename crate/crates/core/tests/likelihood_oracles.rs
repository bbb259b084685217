mod common;

use common::*;
use hawkes_core::{KernelFamily, ParamVector};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn closed_form_matches_quadrature() {
    let mut r = rng(11);
    for (case, spec) in [exp_spec(1), exp_spec(2), pwl_spec(2), exp_spec(3)].into_iter().enumerate() {
        let horizon = 20.0 + 10.0 * case as f64;
        let count = r.random_range(5..=50);
        let ev = random_events(&mut r, spec.dim(), count, horizon);
        let prob = problem(&spec, ev.clone(), 0.0);
        for _ in 0..3 {
            let x = interior_point(&mut r, prob.domain());
            let p = prob.index_map().unpack(&x).unwrap();
            let closed = prob.log_likelihood(&p).unwrap();
            let quad = loglik_by_quadrature(&spec, &p, &ev);
            assert!((closed - quad).abs() <= 1e-6, "case {case}: {closed} vs {quad}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(5);
    for spec in [exp_spec(2), pwl_spec(2)] {
        for _ in 0..2 {
            let ev = random_events(&mut r, 2, 60, 40.0);
            let prob = problem(&spec, ev, 0.3);
            let map = prob.index_map();
            for _ in 0..5 {
                let x = interior_point(&mut r, prob.domain());
                let p = map.unpack(&x).unwrap();
                let g = prob.grad_regularized(&p).unwrap();
                let fd = central_difference(|y| prob.regularized_objective(&map.unpack(y).unwrap()).unwrap(), &x, 1e-6);
                for (a, b) in g.as_slice().iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn antiderivatives_match_quadrature() {
    for fam in [KernelFamily::Exponential, KernelFamily::PowerLaw { cutoff: 0.05 }, KernelFamily::PowerLaw { cutoff: 0.7 }] {
        for beta in [1.3, 2.0, 3.7] {
            for u in [0.01, 0.5, 3.0, 25.0] {
                let exact = fam.antiderivative(u, beta).unwrap();
                let quad = integrate(|t| kernel(&fam, t, beta), 0.0, u, 1e-14);
                assert!((exact - quad).abs() <= 1e-8 * quad.abs(), "{fam:?} beta={beta} u={u}");

                let h = 1e-6;
                let fd = (fam.antiderivative(u, beta + h).unwrap() - fam.antiderivative(u, beta - h).unwrap()) / (2.0 * h);
                let d = fam.antiderivative_dbeta(u, beta).unwrap();
                assert!((d - fd).abs() <= 1e-5 * d.abs().max(1e-3), "{fam:?} beta={beta} u={u}: {d} vs {fd}");

                let fdv = (kernel(&fam, u, beta + h) - kernel(&fam, u, beta - h)) / (2.0 * h);
                let dv = fam.value_dbeta(u, beta).unwrap();
                assert!((dv - fdv).abs() <= 1e-5 * dv.abs().max(1e-6));
            }
            let tail = fam.antiderivative(f64::INFINITY, beta).unwrap();
            let expected = match fam {
                KernelFamily::Exponential => 1.0 / beta,
                KernelFamily::PowerLaw { cutoff } => cutoff.powf(1.0 - beta) / (beta - 1.0),
            };
            assert!((tail - expected).abs() <= 1e-12 * expected);
        }
    }
}

#[test]
fn intensity_matches_direct_sum() {
    let mut r = rng(2);
    let spec = pwl_spec(3);
    let ev = random_events(&mut r, 3, 40, 30.0);
    let prob = problem(&spec, ev.clone(), 0.0);
    let x = interior_point(&mut r, prob.domain());
    let p = prob.index_map().unpack(&x).unwrap();
    for t in [0.0, 1.0, 7.3, 15.0, 29.9] {
        for i in 0..3 {
            let a = prob.intensity_at(&p, t, i).unwrap();
            let b = intensity(&spec, &p, &ev, t, i);
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }
}

fn concavity_gap(prob: &hawkes_core::LikelihoodProblem, x: &[f64], y: &[f64], w: f64) -> f64 {
    let map = prob.index_map();
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| w * a + (1.0 - w) * b).collect();
    let f = |v: &[f64]| prob.log_likelihood(&map.unpack(v).unwrap()).unwrap();
    f(&z) - (w * f(x) + (1.0 - w) * f(y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For fixed beta the log-likelihood is concave in (mu, alpha).
    #[test]
    fn concave_in_mu_alpha(seed in 0u64..10_000, w in 0.0f64..1.0) {
        let mut r = rng(seed);
        let spec = exp_spec(2);
        let ev = random_events(&mut r, 2, 30, 20.0);
        let prob = problem(&spec, ev, 0.0);
        let x = interior_point(&mut r, prob.domain());
        let mut y = interior_point(&mut r, prob.domain());
        let beta = prob.index_map().beta();
        y[beta.clone()].copy_from_slice(&x[beta]);
        prop_assert!(concavity_gap(&prob, &x, &y, w) >= -1e-9);
    }

    /// Scaling every parameter except beta by the same factor never breaks
    /// positivity of the intensity.
    #[test]
    fn objective_finite_inside_box(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let spec = if seed % 2 == 0 { exp_spec(2) } else { pwl_spec(2) };
        let ev = random_events(&mut r, 2, 25, 15.0);
        let prob = problem(&spec, ev, 1.0);
        let x = interior_point(&mut r, prob.domain());
        let p: ParamVector = prob.index_map().unpack(&x).unwrap();
        prop_assert!(prob.regularized_objective(&p).unwrap().is_finite());
        prop_assert!(prob.grad_regularized(&p).unwrap().as_slice().iter().all(|g| g.is_finite()));
    }
}
