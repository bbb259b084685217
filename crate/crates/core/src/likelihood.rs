//! Log-likelihood of an observed event stream on `[0, T]` and its gradient.
//!
//! ```text
//! L(theta) = -T sum_i mu_i
//!            - sum_{i,j,m} alpha[m][i][j] sum_{s of type j} Phi_m(T - s)
//!            + sum_i sum_{t of type i} log lambda_i(t)
//! lambda_i(t) = mu_i + sum_{j,m} alpha[m][i][j] sum_{s < t, type j} phi_m(t - s)
//! ```
//!
//! The inner sums run over events strictly before `t`, so events sharing a
//! timestamp do not excite each other. Evaluation is a direct pairwise sweep;
//! the per-event kernel sums depend only on `beta` and are cached in
//! [`KernelSums`] so that repeated evaluations at a fixed `beta` (as in the
//! `(mu, alpha)` and `beta` half-steps of one iPALM sweep) cost `O(n K M)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BoxDomain, FlatIndexMap, ModelSpec, ParamVector};
use crate::simulate::EventSequence;

/// Rows above this count are computed on the rayon pool.
const PARALLEL_ROWS: usize = 256;

/// Regularized maximum-likelihood problem:
/// maximize `L(theta) - C ||theta||^2` over the box.
#[derive(Debug, Clone)]
pub struct LikelihoodProblem {
    spec: ModelSpec,
    events: EventSequence,
    domain: BoxDomain,
    reg_c: f64,
    truncation: Option<f64>,
}

impl LikelihoodProblem {
    pub fn new(spec: ModelSpec, events: EventSequence, domain: BoxDomain, reg_c: f64) -> Result<Self> {
        if !(events.horizon() > 0.0) {
            return Err(Error::Config(format!(
                "observation horizon must be > 0, got {}",
                events.horizon()
            )));
        }
        if !(reg_c >= 0.0 && reg_c.is_finite()) {
            return Err(Error::Config(format!("regularization C must be >= 0, got {reg_c}")));
        }
        events.check_types(spec.dim())?;
        if domain.index_map() != spec.index_map() {
            return Err(Error::Dimension {
                expected: spec.index_map().len(),
                got: domain.index_map().len(),
            });
        }
        Ok(Self {
            spec,
            events,
            domain,
            reg_c,
            truncation: None,
        })
    }

    /// Drops pair contributions with `t - s > horizon` from the intensity
    /// sums. The compensator stays exact.
    pub fn with_truncation(mut self, horizon: Option<f64>) -> Result<Self> {
        if let Some(h) = horizon {
            if !(h > 0.0) {
                return Err(Error::Config(format!("truncation horizon must be > 0, got {h}")));
            }
        }
        self.truncation = horizon;
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn events(&self) -> &EventSequence {
        &self.events
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn reg_c(&self) -> f64 {
        self.reg_c
    }

    pub fn horizon(&self) -> f64 {
        self.events.horizon()
    }

    pub fn index_map(&self) -> FlatIndexMap {
        self.spec.index_map()
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let map = self.index_map();
        if params.index_map() != map {
            return Err(Error::Dimension {
                expected: map.len(),
                got: params.index_map().len(),
            });
        }
        for (kernel, &b) in self.spec.kernels().iter().zip(params.beta()) {
            kernel.check_beta(b)?;
        }
        Ok(())
    }

    /// `lambda_i(t)` using events strictly before `t`.
    pub fn intensity_at(&self, params: &ParamVector, t: f64, i: usize) -> Result<f64> {
        self.check_params(params)?;
        if !(t >= 0.0 && t <= self.horizon()) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon())));
        }
        if i >= self.spec.dim() {
            return Err(Error::Domain(format!("type index {i} >= K = {}", self.spec.dim())));
        }
        let mut lam = params.mu()[i];
        for (s, j) in self.events.iter().take_while(|(s, _)| *s < t) {
            let dt = t - s;
            if self.truncation.is_some_and(|h| dt > h) {
                continue;
            }
            for (m, kernel) in self.spec.kernels().iter().enumerate() {
                lam += params.alpha(m, i, j) * kernel.value_unchecked(dt, params.beta()[m]);
            }
        }
        Ok(lam)
    }

    pub fn log_likelihood(&self, params: &ParamVector) -> Result<f64> {
        self.check_params(params)?;
        let sums = KernelSums::new(self, params.beta());
        Ok(sums.evaluate(self, &params.to_flat(), false)?.0)
    }

    pub fn grad_log_likelihood(&self, params: &ParamVector) -> Result<Gradient> {
        self.check_params(params)?;
        let sums = KernelSums::new(self, params.beta());
        let (_, grad) = sums.evaluate(self, &params.to_flat(), true)?;
        Ok(Gradient::new(grad, self.index_map()))
    }

    /// `L(theta) - C ||theta||_2^2` over all flat coordinates.
    pub fn regularized_objective(&self, params: &ParamVector) -> Result<f64> {
        let ll = self.log_likelihood(params)?;
        Ok(ll - self.penalty(&params.to_flat()))
    }

    pub fn grad_regularized(&self, params: &ParamVector) -> Result<Gradient> {
        let mut grad = self.grad_log_likelihood(params)?;
        self.penalize_grad(&params.to_flat(), &mut grad.flat);
        Ok(grad)
    }

    pub(crate) fn penalty(&self, flat: &[f64]) -> f64 {
        self.reg_c * flat.iter().map(|x| x * x).sum::<f64>()
    }

    pub(crate) fn penalize_grad(&self, flat: &[f64], grad: &mut [f64]) {
        for (g, x) in grad.iter_mut().zip(flat) {
            *g -= 2.0 * self.reg_c * x;
        }
    }
}

/// Flat gradient with block views following [`FlatIndexMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    flat: Vec<f64>,
    map: FlatIndexMap,
}

impl Gradient {
    pub fn new(flat: Vec<f64>, map: FlatIndexMap) -> Self {
        debug_assert_eq!(flat.len(), map.len());
        Self { flat, map }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.flat
    }

    pub fn mu(&self) -> &[f64] {
        &self.flat[self.map.mu()]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.flat[self.map.alpha()]
    }

    pub fn beta(&self) -> &[f64] {
        &self.flat[self.map.beta()]
    }

    pub fn norm(&self) -> f64 {
        self.flat.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Kernel sums that depend on `beta` only.
#[derive(Debug, Clone)]
pub(crate) struct KernelSums {
    beta: Vec<f64>,
    /// Row `e`, column `j * M + m`: `sum_{s < t_e, type j} phi_m(t_e - s)`.
    excitation: Vec<f64>,
    excitation_dbeta: Vec<f64>,
    /// Index `j * M + m`: `sum_{s of type j} Phi_m(T - s)`.
    compensator: Vec<f64>,
    compensator_dbeta: Vec<f64>,
}

impl KernelSums {
    pub(crate) fn new(problem: &LikelihoodProblem, beta: &[f64]) -> Self {
        let k = problem.spec.dim();
        let kernels = problem.spec.kernels();
        let m_count = kernels.len();
        let width = k * m_count;
        let times = problem.events.times();
        let types = problem.events.types();
        let horizon = problem.horizon();
        let n = times.len();

        let fill_row = |e: usize, row: &mut [f64], row_d: &mut [f64]| {
            let t = times[e];
            for p in (0..e).rev() {
                let s = times[p];
                if s >= t {
                    continue;
                }
                let dt = t - s;
                if problem.truncation.is_some_and(|h| dt > h) {
                    break;
                }
                let base = types[p] * m_count;
                for (m, kernel) in kernels.iter().enumerate() {
                    let (v, d) = kernel.value_and_dbeta_unchecked(dt, beta[m]);
                    row[base + m] += v;
                    row_d[base + m] += d;
                }
            }
        };

        let mut excitation = vec![0.0; n * width];
        let mut excitation_dbeta = vec![0.0; n * width];
        if width > 0 {
            if n >= PARALLEL_ROWS {
                excitation
                    .par_chunks_mut(width)
                    .zip(excitation_dbeta.par_chunks_mut(width))
                    .enumerate()
                    .for_each(|(e, (row, row_d))| fill_row(e, row, row_d));
            } else {
                excitation
                    .chunks_mut(width)
                    .zip(excitation_dbeta.chunks_mut(width))
                    .enumerate()
                    .for_each(|(e, (row, row_d))| fill_row(e, row, row_d));
            }
        }

        let mut compensator = vec![0.0; width];
        let mut compensator_dbeta = vec![0.0; width];
        for (&s, &j) in times.iter().zip(types) {
            let u = horizon - s;
            for (m, kernel) in kernels.iter().enumerate() {
                compensator[j * m_count + m] += kernel.antiderivative_unchecked(u, beta[m]);
                compensator_dbeta[j * m_count + m] += kernel.antiderivative_dbeta_unchecked(u, beta[m]);
            }
        }

        Self {
            beta: beta.to_vec(),
            excitation,
            excitation_dbeta,
            compensator,
            compensator_dbeta,
        }
    }

    pub(crate) fn matches(&self, beta: &[f64]) -> bool {
        self.beta.len() == beta.len()
            && self.beta.iter().zip(beta).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Unregularized log-likelihood (and gradient) at `flat`, whose beta
    /// block must equal the cached beta.
    pub(crate) fn evaluate(
        &self,
        problem: &LikelihoodProblem,
        flat: &[f64],
        want_grad: bool,
    ) -> Result<(f64, Vec<f64>)> {
        let map = problem.index_map();
        debug_assert!(self.matches(&flat[map.beta()]));
        let k = map.dim;
        let m_count = map.num_kernels;
        let width = k * m_count;
        let mu = &flat[map.mu()];
        let alpha = &flat[map.alpha()];
        let a_off = map.alpha().start;
        let b_off = map.beta().start;
        let horizon = problem.horizon();

        let mut grad = if want_grad { vec![0.0; map.len()] } else { Vec::new() };
        let mut value = -horizon * mu.iter().sum::<f64>();
        for m in 0..m_count {
            for i in 0..k {
                for j in 0..k {
                    let a = alpha[map.alpha_offset(m, i, j)];
                    value -= a * self.compensator[j * m_count + m];
                    if want_grad {
                        grad[a_off + map.alpha_offset(m, i, j)] = -self.compensator[j * m_count + m];
                        grad[b_off + m] -= a * self.compensator_dbeta[j * m_count + m];
                    }
                }
            }
        }
        if want_grad {
            for g in &mut grad[map.mu()] {
                *g = -horizon;
            }
        }

        for (e, &i) in problem.events.types().iter().enumerate() {
            let row = &self.excitation[e * width..(e + 1) * width];
            let mut lam = mu[i];
            for m in 0..m_count {
                for j in 0..k {
                    lam += alpha[map.alpha_offset(m, i, j)] * row[j * m_count + m];
                }
            }
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::InvariantViolation(format!(
                    "intensity of type {i} at event {e} is {lam}; parameters left the admissible set"
                )));
            }
            value += lam.ln();
            if want_grad {
                let inv = 1.0 / lam;
                grad[i] += inv;
                let row_d = &self.excitation_dbeta[e * width..(e + 1) * width];
                for m in 0..m_count {
                    let mut db = 0.0;
                    for j in 0..k {
                        let off = map.alpha_offset(m, i, j);
                        grad[a_off + off] += row[j * m_count + m] * inv;
                        db += alpha[off] * row_d[j * m_count + m];
                    }
                    grad[b_off + m] += db * inv;
                }
            }
        }
        Ok((value, grad))
    }
}

/// Regularized objective evaluator with a one-entry `beta` cache, owned by a
/// single optimizer run.
#[derive(Debug)]
pub(crate) struct Evaluator<'a> {
    problem: &'a LikelihoodProblem,
    cache: Option<KernelSums>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(problem: &'a LikelihoodProblem) -> Self {
        Self { problem, cache: None }
    }

    fn sums(&mut self, flat: &[f64]) -> &KernelSums {
        let beta = &flat[self.problem.index_map().beta()];
        if !self.cache.as_ref().is_some_and(|c| c.matches(beta)) {
            self.cache = Some(KernelSums::new(self.problem, beta));
        }
        self.cache.as_ref().expect("cache filled above")
    }

    pub(crate) fn objective(&mut self, flat: &[f64]) -> Result<f64> {
        let problem = self.problem;
        let (ll, _) = self.sums(flat).evaluate(problem, flat, false)?;
        Ok(ll - problem.penalty(flat))
    }

    pub(crate) fn objective_and_grad(&mut self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let problem = self.problem;
        let (ll, mut grad) = self.sums(flat).evaluate(problem, flat, true)?;
        problem.penalize_grad(flat, &mut grad);
        Ok((ll - problem.penalty(flat), grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KernelFamily;

    fn one_dim(events: Vec<f64>, horizon: f64, reg_c: f64) -> LikelihoodProblem {
        let spec = ModelSpec::new(1, vec![KernelFamily::Exponential]).unwrap();
        let n = events.len();
        let ev = EventSequence::new(events, vec![0; n], horizon).unwrap();
        let lower = ParamVector::new(vec![1e-3], vec![0.0], vec![1e-2]).unwrap();
        let upper = ParamVector::new(vec![10.0], vec![10.0], vec![10.0]).unwrap();
        let dom = BoxDomain::new(&spec, lower, upper).unwrap();
        LikelihoodProblem::new(spec, ev, dom, reg_c).unwrap()
    }

    fn p1(mu: f64, alpha: f64, beta: f64) -> ParamVector {
        ParamVector::new(vec![mu], vec![alpha], vec![beta]).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let prob = one_dim(vec![1.0], 3.0, 0.0);
        assert_eq!(prob.intensity_at(&p1(1.0, 0.5, 1.0), 0.5, 0).unwrap(), 1.0);
        let lam = prob.intensity_at(&p1(1.0, 0.5, 1.0), 2.0, 0).unwrap();
        assert!((lam - 1.183_939_720_585_721).abs() < 1e-14);
        // strictly before: the event at t = 1 does not count at t = 1
        assert_eq!(prob.intensity_at(&p1(1.0, 0.5, 1.0), 1.0, 0).unwrap(), 1.0);
        assert_eq!(prob.intensity_at(&p1(0.7, 0.0, 1.0), 2.5, 0).unwrap(), 0.7);
        assert!(prob.intensity_at(&p1(1.0, 0.5, 1.0), 4.0, 0).is_err());
    }

    #[test]
    fn log_likelihood_examples() {
        let empty = one_dim(vec![], 10.0, 0.0);
        assert!((empty.log_likelihood(&p1(0.3, 0.2, 0.5)).unwrap() + 3.0).abs() < 1e-14);

        let poisson = one_dim(vec![1.0, 2.0, 3.0], 10.0, 0.0);
        let ll = poisson.log_likelihood(&p1(0.5, 0.0, 1.0)).unwrap();
        assert!((ll - (-5.0 + 3.0 * 0.5f64.ln())).abs() < 1e-12);
        assert!((ll + 7.079_441_541_679_836).abs() < 1e-12);

        let hawkes = one_dim(vec![1.0, 2.0], 3.0, 0.0);
        let ll = hawkes.log_likelihood(&p1(1.0, 0.5, 1.0)).unwrap();
        assert!((ll + 3.579_545_014_297_666).abs() < 1e-12, "{ll}");
    }

    #[test]
    fn gradient_examples() {
        let poisson = one_dim(vec![1.0, 2.0, 3.0, 7.5], 10.0, 0.0);
        let g = poisson.grad_log_likelihood(&p1(0.4, 0.0, 1.0)).unwrap();
        assert!(g.mu()[0].abs() < 1e-12, "score vanishes at n / T");
        let g = poisson.grad_log_likelihood(&p1(0.8, 0.0, 1.0)).unwrap();
        assert!((g.mu()[0] - (-10.0 + 4.0 / 0.8)).abs() < 1e-12);

        let empty = one_dim(vec![], 10.0, 0.0);
        let g = empty.grad_log_likelihood(&p1(0.3, 0.4, 0.5)).unwrap();
        assert_eq!(g.as_slice(), &[-10.0, 0.0, 0.0]);
    }

    #[test]
    fn regularized_examples() {
        let prob = one_dim(vec![1.0, 2.5], 4.0, 0.0);
        let p = p1(0.6, 0.3, 1.3);
        assert_eq!(
            prob.regularized_objective(&p).unwrap(),
            prob.log_likelihood(&p).unwrap()
        );
        let empty = one_dim(vec![], 10.0, 1.0);
        let v = empty.regularized_objective(&p1(0.3, 0.0, 0.5)).unwrap();
        assert!((v + 3.34).abs() < 1e-12);
        let g = empty.grad_regularized(&p1(0.3, 0.0, 0.5)).unwrap();
        assert!((g.mu()[0] + 10.6).abs() < 1e-12 && (g.beta()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_events_do_not_excite_each_other() {
        let spec = ModelSpec::new(2, vec![KernelFamily::Exponential]).unwrap();
        let ev = EventSequence::new(vec![1.0, 1.0], vec![0, 1], 2.0).unwrap();
        let lower = ParamVector::new(vec![0.1; 2], vec![0.0; 4], vec![0.1]).unwrap();
        let upper = ParamVector::new(vec![5.0; 2], vec![5.0; 4], vec![5.0]).unwrap();
        let dom = BoxDomain::new(&spec, lower, upper).unwrap();
        let prob = LikelihoodProblem::new(spec, ev, dom, 0.0).unwrap();
        let p = ParamVector::new(vec![0.5, 0.25], vec![1.0; 4], vec![1.0]).unwrap();
        let sum_mu = 0.75 * 2.0;
        let comp = 4.0 * (1.0 - (-1.0f64).exp()) / 1.0 * 1.0; // 2 events x 2 targets
        let expected = -sum_mu - comp + 0.5f64.ln() + 0.25f64.ln();
        assert!((prob.log_likelihood(&p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn truncation_only_drops_far_pairs() {
        let prob = one_dim(vec![1.0, 2.0, 9.0], 10.0, 0.0);
        let p = p1(0.5, 0.4, 2.0);
        let full = prob.log_likelihood(&p).unwrap();
        let near = prob.clone().with_truncation(Some(5.0)).unwrap().log_likelihood(&p).unwrap();
        let lam3_full = 0.5 + 0.4 * ((-16.0f64).exp() + (-14.0f64).exp());
        assert!((full - near - (lam3_full.ln() - 0.5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn evaluator_cache_agrees_with_direct_calls() {
        let prob = one_dim(vec![0.3, 1.1, 1.2, 2.9], 4.0, 0.5);
        let p = p1(0.6, 0.3, 1.3);
        let mut ev = Evaluator::new(&prob);
        let (v, g) = ev.objective_and_grad(&p.to_flat()).unwrap();
        assert_eq!(v, prob.regularized_objective(&p).unwrap());
        assert_eq!(g, prob.grad_regularized(&p).unwrap().into_vec());
        assert_eq!(ev.objective(&p.to_flat()).unwrap(), v);
    }
}
