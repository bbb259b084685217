//! Oracles written independently of the library: direct kernel formulas,
//! adaptive Simpson quadrature, finite differences and a KS statistic.
#![allow(dead_code)]

use hawkes_core::{BoxDomain, EventSequence, KernelFamily, LikelihoodProblem, ModelSpec, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kernel(family: &KernelFamily, t: f64, beta: f64) -> f64 {
    match family {
        KernelFamily::Exponential => (-beta * t).exp(),
        KernelFamily::PowerLaw { cutoff } => (t + cutoff).powf(-beta),
    }
}

/// Intensity of type `i` at `t` from events strictly before `t`.
pub fn intensity(spec: &ModelSpec, p: &ParamVector, ev: &EventSequence, t: f64, i: usize) -> f64 {
    let mut lam = p.mu()[i];
    for (s, j) in ev.iter() {
        if s >= t {
            break;
        }
        for (m, fam) in spec.kernels().iter().enumerate() {
            lam += p.alpha(m, i, j) * kernel(fam, t - s, p.beta()[m]);
        }
    }
    lam
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol.max(4.0 * f64::EPSILON * whole.abs()) {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Intensity at `t` driven by the events at or before `cut` (used inside a
/// gap `(cut, next event]`).
fn intensity_given_history(spec: &ModelSpec, p: &ParamVector, ev: &EventSequence, cut: f64, t: f64, i: usize) -> f64 {
    let mut lam = p.mu()[i];
    for (s, j) in ev.iter().take_while(|(s, _)| *s <= cut) {
        for (m, fam) in spec.kernels().iter().enumerate() {
            lam += p.alpha(m, i, j) * kernel(fam, t - s, p.beta()[m]);
        }
    }
    lam
}

/// Log-likelihood with the compensator integrated numerically between
/// consecutive event times (the intensity is smooth on each gap).
pub fn loglik_by_quadrature(spec: &ModelSpec, p: &ParamVector, ev: &EventSequence) -> f64 {
    let mut knots = vec![0.0];
    knots.extend(ev.times().iter().copied());
    knots.push(ev.horizon());
    let mut compensator = 0.0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in 0..spec.dim() {
            compensator += integrate(|t| intensity_given_history(spec, p, ev, a, t, i), a, b, 1e-10);
        }
    }
    let log_sum: f64 = ev.iter().map(|(t, i)| intensity(spec, p, ev, t, i).ln()).sum();
    log_sum - compensator
}

pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for idx in 0..x.len() {
        y[idx] = x[idx] + h;
        let up = f(&y);
        y[idx] = x[idx] - h;
        let down = f(&y);
        y[idx] = x[idx];
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Kolmogorov-Smirnov distance between a sample and Exp(1).
pub fn ks_exp1(mut sample: Vec<f64>) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(idx, &x)| {
            let cdf = 1.0 - (-x).exp();
            (cdf - idx as f64 / n).abs().max(((idx + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

/// Random sorted events for `dim` types on `[0, horizon]`.
pub fn random_events(rng: &mut ChaCha8Rng, dim: usize, count: usize, horizon: f64) -> EventSequence {
    let mut rows: Vec<(f64, usize)> = (0..count)
        .map(|_| (rng.random_range(0.0..horizon), rng.random_range(0..dim)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    EventSequence::new(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect(), horizon).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn exp_spec(dim: usize) -> ModelSpec {
    ModelSpec::new(dim, vec![KernelFamily::Exponential]).unwrap()
}

pub fn pwl_spec(dim: usize) -> ModelSpec {
    ModelSpec::new(dim, vec![KernelFamily::PowerLaw { cutoff: 0.05 }]).unwrap()
}

/// Box `[0.05, 3]` for mu, `[0, 2]` for alpha and a kernel-appropriate beta
/// range.
pub fn test_box(spec: &ModelSpec) -> BoxDomain {
    let k = spec.dim();
    let m = spec.num_kernels();
    let (blo, bhi) = match spec.kernels()[0] {
        KernelFamily::Exponential => (0.2, 5.0),
        KernelFamily::PowerLaw { .. } => (1.2, 4.0),
    };
    BoxDomain::new(spec, ParamVector::filled(k, m, 0.05, 0.0, blo), ParamVector::filled(k, m, 3.0, 2.0, bhi)).unwrap()
}

/// Uniform point strictly inside the box.
pub fn interior_point(rng: &mut ChaCha8Rng, domain: &BoxDomain) -> Vec<f64> {
    domain
        .lower_flat()
        .iter()
        .zip(domain.upper_flat())
        .map(|(l, h)| l + (h - l) * rng.random_range(0.05..0.95))
        .collect()
}

pub fn problem(spec: &ModelSpec, events: EventSequence, reg_c: f64) -> LikelihoodProblem {
    let domain = test_box(spec);
    LikelihoodProblem::new(spec.clone(), events, domain, reg_c).unwrap()
}
