//! Sample paths of a multivariate Hawkes process on `[0, T]`.
//!
//! [`simulate_cluster`] uses the branching (immigrant/offspring) construction
//! and is the production path. [`simulate_thinning`] is Ogata's thinning
//! algorithm and exists as an independent cross-check.
//!
//! Randomness comes from ChaCha20 seeded with `SimConfig::seed`. Each stage
//! draws from its own ChaCha stream: stream 0 for immigrants, stream 1 for
//! offspring, stream 2 for thinning. The two simulators can therefore share a
//! seed without sharing random numbers.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::model::{branching_matrix, spectral_radius, KernelFamily, ModelSpec, ParamVector};

const STREAM_IMMIGRANTS: u64 = 0;
const STREAM_OFFSPRING: u64 = 1;
const STREAM_THINNING: u64 = 2;

/// Sorted, typed arrival times on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    types: Vec<usize>,
    horizon: f64,
}

impl EventSequence {
    pub fn new(times: Vec<f64>, types: Vec<usize>, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        if times.len() != types.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: types.len(),
            });
        }
        for (row, t) in times.iter().enumerate() {
            if !(*t >= 0.0 && *t <= horizon) {
                return Err(Error::Data {
                    row,
                    message: format!("time {t} outside [0, {horizon}]"),
                });
            }
            if row > 0 && times[row - 1] > *t {
                return Err(Error::Data {
                    row,
                    message: format!("times not sorted: {} > {t}", times[row - 1]),
                });
            }
        }
        Ok(Self { times, types, horizon })
    }

    pub fn empty(horizon: f64) -> Self {
        Self {
            times: Vec::new(),
            types: Vec::new(),
            horizon,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.times.iter().copied().zip(self.types.iter().copied())
    }

    /// `N_i(0, T]` for each type `i < dim`.
    pub fn counts(&self, dim: usize) -> Vec<usize> {
        let mut counts = vec![0; dim];
        for &ty in &self.types {
            if ty < dim {
                counts[ty] += 1;
            }
        }
        counts
    }

    pub fn check_types(&self, dim: usize) -> Result<()> {
        match self.types.iter().position(|ty| *ty >= dim) {
            Some(row) => Err(Error::Data {
                row,
                message: format!("event type {} outside [0, {dim})", self.types[row]),
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub max_events: usize,
}

impl SimConfig {
    pub const DEFAULT_MAX_EVENTS: usize = 10_000_000;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            max_events: Self::DEFAULT_MAX_EVENTS,
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng);
    draw as u64
}

/// Offsets of the children spawned through one kernel by a single parent
/// whose remaining window is `window`.
///
/// The count is Poisson with mean `alpha_total * Phi(window)`; each offset is
/// drawn from the kernel density restricted to `[0, window]` by inverting its
/// closed-form CDF.
pub fn offspring_offsets<R: Rng + ?Sized>(
    family: KernelFamily,
    alpha_total: f64,
    beta: f64,
    window: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    family.check_beta(beta)?;
    if !(window > 0.0) {
        return Err(Error::Domain(format!("offspring window must be > 0, got {window}")));
    }
    if !(alpha_total >= 0.0) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha_total}")));
    }
    let mass = alpha_total * family.antiderivative_unchecked(window, beta);
    let n = poisson_count(mass, rng);
    Ok((0..n)
        .map(|_| {
            let p: f64 = rng.random();
            family.truncated_inverse_cdf(p, beta, window).min(window)
        })
        .collect())
}

fn check_inputs(spec: &ModelSpec, params: &ParamVector, horizon: f64, config: &SimConfig) -> Result<()> {
    params.validate(spec)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    if config.max_events == 0 {
        return Err(Error::Config("max_events must be > 0".into()));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Pending {
    time: f64,
    generation: u32,
    ty: usize,
}

/// Branching-structure simulation started empty at time 0.
///
/// Immigrants of each type arrive as a homogeneous Poisson process with rate
/// `mu_k`; every event of type `j` at time `s` then spawns, per target type
/// `i` and kernel `m`, a Poisson number of children located by
/// [`offspring_offsets`] within `[s, T]`. Generations are expanded breadth
/// first. Output is sorted by `(time, generation, type)`.
pub fn simulate_cluster(
    spec: &ModelSpec,
    params: &ParamVector,
    horizon: f64,
    config: &SimConfig,
) -> Result<EventSequence> {
    check_inputs(spec, params, horizon, config)?;
    let radius = spectral_radius(&branching_matrix(spec, params)?);
    if radius >= 1.0 {
        return Err(Error::NonStationary { radius });
    }
    if horizon == 0.0 {
        return Ok(EventSequence::empty(horizon));
    }
    let k = spec.dim();
    let mut imm_rng = stream_rng(config.seed, STREAM_IMMIGRANTS);
    let mut off_rng = stream_rng(config.seed, STREAM_OFFSPRING);

    let mut queue = VecDeque::new();
    let mut done: Vec<Pending> = Vec::new();
    let over_limit = |count: usize| Error::MaxEventsExceeded {
        limit: config.max_events,
        count,
    };

    for ty in 0..k {
        let n = poisson_count(params.mu()[ty] * horizon, &mut imm_rng);
        for _ in 0..n {
            let u: f64 = imm_rng.random();
            queue.push_back(Pending {
                time: u * horizon,
                generation: 0,
                ty,
            });
            if queue.len() > config.max_events {
                return Err(over_limit(queue.len()));
            }
        }
    }

    while let Some(parent) = queue.pop_front() {
        done.push(parent);
        let window = horizon - parent.time;
        if window > 0.0 {
            for target in 0..k {
                for (m, kernel) in spec.kernels().iter().enumerate() {
                    let a = params.alpha(m, target, parent.ty);
                    if a == 0.0 {
                        continue;
                    }
                    let offsets = offspring_offsets(*kernel, a, params.beta()[m], window, &mut off_rng)?;
                    for off in offsets {
                        let time = parent.time + off;
                        if time <= horizon {
                            queue.push_back(Pending {
                                time,
                                generation: parent.generation + 1,
                                ty: target,
                            });
                        }
                    }
                }
            }
        }
        if done.len() + queue.len() > config.max_events {
            return Err(over_limit(done.len() + queue.len()));
        }
    }

    done.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.generation.cmp(&b.generation))
            .then(a.ty.cmp(&b.ty))
    });
    let times = done.iter().map(|e| e.time).collect();
    let types = done.iter().map(|e| e.ty).collect();
    EventSequence::new(times, types, horizon)
}

/// Per-type intensity at `t` from every event in `history` (all of which are
/// at or before `t`).
fn intensities_after(
    spec: &ModelSpec,
    params: &ParamVector,
    history: &[(f64, usize)],
    t: f64,
    out: &mut [f64],
) {
    out.copy_from_slice(params.mu());
    for &(s, j) in history {
        let dt = t - s;
        for (m, kernel) in spec.kernels().iter().enumerate() {
            let phi = kernel.value_unchecked(dt, params.beta()[m]);
            if phi == 0.0 {
                continue;
            }
            for (i, lam) in out.iter_mut().enumerate() {
                *lam += params.alpha(m, i, j) * phi;
            }
        }
    }
}

/// Ogata thinning. Both shipped kernels are nonincreasing, so the total
/// intensity just after the latest candidate dominates the intensity until
/// the next event.
pub fn simulate_thinning(
    spec: &ModelSpec,
    params: &ParamVector,
    horizon: f64,
    config: &SimConfig,
) -> Result<EventSequence> {
    check_inputs(spec, params, horizon, config)?;
    if horizon == 0.0 {
        return Ok(EventSequence::empty(horizon));
    }
    let k = spec.dim();
    let mut rng = stream_rng(config.seed, STREAM_THINNING);
    let mut history: Vec<(f64, usize)> = Vec::new();
    let mut lam = vec![0.0; k];
    let mut t = 0.0;
    loop {
        intensities_after(spec, params, &history, t, &mut lam);
        let bound: f64 = lam.iter().sum();
        let wait: f64 = Exp::new(bound)
            .map_err(|_| Error::InvariantViolation(format!("bad dominating rate {bound}")))?
            .sample(&mut rng);
        t += wait;
        if t > horizon {
            break;
        }
        intensities_after(spec, params, &history, t, &mut lam);
        let total: f64 = lam.iter().sum();
        let u: f64 = rng.random::<f64>() * bound;
        if u < total {
            let mut acc = 0.0;
            let mut chosen = k - 1;
            for (i, l) in lam.iter().enumerate() {
                acc += l;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            history.push((t, chosen));
            if history.len() > config.max_events {
                return Err(Error::MaxEventsExceeded {
                    limit: config.max_events,
                    count: history.len(),
                });
            }
        }
    }
    let (times, types) = history.into_iter().unzip();
    EventSequence::new(times, types, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_spec(mu: f64) -> (ModelSpec, ParamVector) {
        let spec = ModelSpec::new(1, vec![KernelFamily::Exponential]).unwrap();
        let p = ParamVector::new(vec![mu], vec![0.0], vec![1.0]).unwrap();
        (spec, p)
    }

    #[test]
    fn zero_horizon_is_empty() {
        let (spec, p) = poisson_spec(0.5);
        assert!(simulate_cluster(&spec, &p, 0.0, &SimConfig::new(1)).unwrap().is_empty());
        assert!(simulate_thinning(&spec, &p, 0.0, &SimConfig::new(1)).unwrap().is_empty());
    }

    #[test]
    fn zero_alpha_yields_no_offspring() {
        let mut rng = stream_rng(3, 0);
        let offs = offspring_offsets(KernelFamily::Exponential, 0.0, 1.0, 10.0, &mut rng).unwrap();
        assert!(offs.is_empty());
    }

    #[test]
    fn poisson_rate_cluster() {
        let (spec, p) = poisson_spec(0.5);
        let reps = 100;
        let mean: f64 = (0..reps)
            .map(|s| simulate_cluster(&spec, &p, 1000.0, &SimConfig::new(s)).unwrap().len() as f64 / 1000.0)
            .sum::<f64>()
            / reps as f64;
        // sd of count/T per rep is sqrt(0.5/1000); 3 standard errors over 100 reps
        assert!((mean - 0.5).abs() < 3.0 * (0.5f64 / 1000.0).sqrt() / 10.0);
    }

    #[test]
    fn lower_bound_mu_thinning_count() {
        let (spec, p) = poisson_spec(0.01);
        let reps = 400;
        let mean: f64 = (0..reps)
            .map(|s| simulate_thinning(&spec, &p, 10.0, &SimConfig::new(s)).unwrap().len() as f64)
            .sum::<f64>()
            / reps as f64;
        assert!((mean - 0.1).abs() < 3.0 * (0.1f64 / reps as f64).sqrt());
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = ModelSpec::new(2, vec![KernelFamily::Exponential]).unwrap();
        let p = ParamVector::new(vec![0.3, 0.2], vec![0.3, 0.1, 0.1, 0.2], vec![1.2]).unwrap();
        let cfg = SimConfig::new(42);
        assert_eq!(
            simulate_cluster(&spec, &p, 200.0, &cfg).unwrap(),
            simulate_cluster(&spec, &p, 200.0, &cfg).unwrap()
        );
        assert_eq!(
            simulate_thinning(&spec, &p, 200.0, &cfg).unwrap(),
            simulate_thinning(&spec, &p, 200.0, &cfg).unwrap()
        );
    }

    #[test]
    fn errors() {
        let spec = ModelSpec::new(1, vec![KernelFamily::Exponential]).unwrap();
        let critical = ParamVector::new(vec![1.0], vec![1.2], vec![1.0]).unwrap();
        assert!(matches!(
            simulate_cluster(&spec, &critical, 10.0, &SimConfig::new(0)),
            Err(Error::NonStationary { .. })
        ));
        let busy = ParamVector::new(vec![5.0], vec![0.5], vec![1.0]).unwrap();
        let cfg = SimConfig { seed: 0, max_events: 10 };
        assert!(matches!(
            simulate_cluster(&spec, &busy, 100.0, &cfg),
            Err(Error::MaxEventsExceeded { limit: 10, .. })
        ));
        assert!(matches!(
            simulate_thinning(&spec, &busy, 100.0, &cfg),
            Err(Error::MaxEventsExceeded { limit: 10, .. })
        ));
    }

    #[test]
    fn event_sequence_validation() {
        assert!(EventSequence::new(vec![1.0, 0.5], vec![0, 0], 2.0).is_err());
        assert!(EventSequence::new(vec![1.0, 3.0], vec![0, 0], 2.0).is_err());
        assert!(EventSequence::new(vec![1.0], vec![0, 1], 2.0).is_err());
        let ev = EventSequence::new(vec![0.5, 0.5, 1.0], vec![1, 0, 1], 2.0).unwrap();
        assert_eq!(ev.counts(2), vec![1, 2]);
        assert!(ev.check_types(1).is_err());
    }

    #[test]
    fn outputs_sorted_within_horizon() {
        let spec = ModelSpec::new(2, vec![KernelFamily::PowerLaw { cutoff: 0.05 }]).unwrap();
        let p = ParamVector::new(vec![0.4, 0.2], vec![0.02, 0.01, 0.01, 0.03], vec![1.5]).unwrap();
        for seed in 0..5 {
            for ev in [
                simulate_cluster(&spec, &p, 300.0, &SimConfig::new(seed)).unwrap(),
                simulate_thinning(&spec, &p, 300.0, &SimConfig::new(seed)).unwrap(),
            ] {
                assert!(ev.times().windows(2).all(|w| w[0] <= w[1]));
                assert!(ev.times().iter().all(|t| (0.0..=300.0).contains(t)));
            }
        }
    }
}
