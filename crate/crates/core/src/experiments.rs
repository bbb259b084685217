//! Synthetic instances, the log-regret benchmark and the consistency study.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodProblem;
use crate::model::{branching_matrix, spectral_radius, BoxDomain, KernelFamily, ModelSpec, ParamVector};
use crate::optim::{estimate_lipschitz, run_aa_ipalm, Algorithm, HyperParams, RunStats, TraceRecord};
use crate::simulate::{simulate_cluster, EventSequence, SimConfig};

/// Added to the best observed objective so the regret of the best iterate is
/// `ln(REGRET_FLOOR)` instead of `-inf`.
pub const REGRET_FLOOR: f64 = 1e-12;

/// Redraws allowed before a recipe is declared nonstationary.
pub const MAX_REGENERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Exponential,
    PowerLaw,
}

/// Random-instance recipe: `alpha ~ U[alpha_range] / alpha_divisor`,
/// `mu ~ U[mu_range] / mu_divisor`, a single kernel with shape `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticRecipe {
    pub name: String,
    pub kind: RecipeKind,
    pub dim: usize,
    pub cutoff: f64,
    pub alpha_range: (f64, f64),
    pub alpha_divisor: f64,
    pub mu_range: (f64, f64),
    pub mu_divisor: f64,
    pub beta: f64,
    /// Floor on the lower `beta` bound (power law needs `beta > 1`).
    pub beta_lower_floor: f64,
    pub reg_c: f64,
    pub horizon: f64,
    pub seed: u64,
}

impl SyntheticRecipe {
    pub fn exponential(dim: usize) -> Self {
        Self {
            name: format!("exp-k{dim}"),
            kind: RecipeKind::Exponential,
            dim,
            cutoff: 0.0,
            alpha_range: (0.001, 1.0),
            alpha_divisor: 11.0,
            mu_range: (0.001, 0.1),
            mu_divisor: 2.0,
            beta: 0.5,
            beta_lower_floor: 0.0,
            reg_c: 1.0,
            horizon: 1000.0,
            seed: 0,
        }
    }

    /// Same sampling as [`exponential`](Self::exponential) with a power-law
    /// kernel `(t + 0.05)^(-beta)`, alpha divisor 200 and `beta = 1.5`
    /// (the kernel is not integrable for `beta <= 1`).
    pub fn power_law(dim: usize) -> Self {
        Self {
            name: format!("pwl-k{dim}"),
            kind: RecipeKind::PowerLaw,
            cutoff: 0.05,
            alpha_divisor: 200.0,
            beta: 1.5,
            beta_lower_floor: 1.2,
            ..Self::exponential(dim)
        }
    }

    /// Built-in recipes `exp-k<K>` and `pwl-k<K>` (e.g. `exp-k10`).
    pub fn by_name(name: &str) -> Result<Self> {
        let parse = |rest: &str| rest.parse::<usize>().ok().filter(|k| *k > 0);
        if let Some(k) = name.strip_prefix("exp-k").and_then(parse) {
            return Ok(Self::exponential(k));
        }
        if let Some(k) = name.strip_prefix("pwl-k").and_then(parse) {
            return Ok(Self::power_law(k));
        }
        Err(Error::Config(format!(
            "unknown recipe '{name}' (expected exp-k<K> or pwl-k<K>)"
        )))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn kernel(&self) -> Result<KernelFamily> {
        match self.kind {
            RecipeKind::Exponential => Ok(KernelFamily::Exponential),
            RecipeKind::PowerLaw => KernelFamily::power_law(self.cutoff),
        }
    }

    /// Samples a stationary instance, redrawing up to
    /// [`MAX_REGENERATIONS`] times.
    pub fn generate(&self) -> Result<SyntheticInstance> {
        if self.dim == 0 {
            return Err(Error::Config("recipe dimension must be >= 1".into()));
        }
        let spec = ModelSpec::new(self.dim, vec![self.kernel()?])?;
        let k = self.dim;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let mut last_radius = f64::NAN;
        for _ in 0..MAX_REGENERATIONS {
            let mu: Vec<f64> = (0..k)
                .map(|_| rng.random_range(self.mu_range.0..=self.mu_range.1) / self.mu_divisor)
                .collect();
            let alpha: Vec<f64> = (0..k * k)
                .map(|_| rng.random_range(self.alpha_range.0..=self.alpha_range.1) / self.alpha_divisor)
                .collect();
            let truth = ParamVector::new(mu, alpha, vec![self.beta])?;
            truth.validate(&spec)?;
            let radius = spectral_radius(&branching_matrix(&spec, &truth)?);
            if radius < 1.0 {
                return self.assemble(spec, truth, radius);
            }
            last_radius = radius;
        }
        Err(Error::NonStationary { radius: last_radius })
    }

    fn assemble(&self, spec: ModelSpec, truth: ParamVector, radius: f64) -> Result<SyntheticInstance> {
        let k = self.dim;
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let beta_lb = (self.beta / 100.0).max(self.beta_lower_floor);
        let lower = ParamVector::filled(k, 1, min(truth.mu()) / 100.0, 0.0, beta_lb);
        let upper = ParamVector::filled(k, 1, 100.0 * max(truth.mu()), 100.0 * max(truth.alpha_flat()), 100.0 * self.beta);
        let domain = BoxDomain::new(&spec, lower, upper)?;
        // mu = alpha = 1, beta = 3, clamped when the box is tighter
        let init = domain.index_map().unpack(&domain.project(&ParamVector::filled(k, 1, 1.0, 1.0, 3.0).to_flat())?)?;
        Ok(SyntheticInstance {
            recipe: self.clone(),
            spec,
            truth,
            radius,
            domain,
            init,
            hyper: HyperParams::default(),
        })
    }
}

/// Generated instance: true parameters, box, starting point and the
/// benchmark hyperparameters.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub recipe: SyntheticRecipe,
    pub spec: ModelSpec,
    pub truth: ParamVector,
    pub radius: f64,
    pub domain: BoxDomain,
    pub init: ParamVector,
    pub hyper: HyperParams,
}

impl SyntheticInstance {
    pub fn simulate(&self, seed: u64) -> Result<EventSequence> {
        simulate_cluster(&self.spec, &self.truth, self.recipe.horizon, &SimConfig::new(seed))
    }

    pub fn problem(&self, events: EventSequence) -> Result<LikelihoodProblem> {
        LikelihoodProblem::new(self.spec.clone(), events, self.domain.clone(), self.recipe.reg_c)
    }
}

/// Ten-dimensional exponential instance.
pub fn gen_synthetic_exponential(seed: u64) -> Result<SyntheticInstance> {
    SyntheticRecipe::exponential(10).with_seed(seed).generate()
}

/// Ten-dimensional power-law instance.
pub fn gen_synthetic_powerlaw(seed: u64) -> Result<SyntheticInstance> {
    SyntheticRecipe::power_law(10).with_seed(seed).generate()
}

/// `ln(best + REGRET_FLOOR - objective_k)` for each record.
pub fn log_regret(trace: &[TraceRecord], best: f64) -> Vec<f64> {
    trace.iter().map(|r| (best + REGRET_FLOOR - r.objective).ln()).collect()
}

// ---------------------------------------------------------------- benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub recipe: SyntheticRecipe,
    pub algorithms: Vec<Algorithm>,
    pub iters: usize,
    /// Simulation seeds, one event stream each.
    pub seeds: Vec<u64>,
    /// Overrides the recipe hyperparameters when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyper: Option<HyperParams>,
}

impl BenchmarkConfig {
    pub fn new(recipe: SyntheticRecipe, iters: usize, seeds: Vec<u64>) -> Self {
        Self {
            recipe,
            algorithms: Algorithm::ALL.to_vec(),
            iters,
            seeds,
            hyper: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub algorithm: Algorithm,
    pub final_objective: f64,
    pub trace: Vec<TraceRecord>,
    pub stats: RunStats,
}

#[derive(Debug, Clone)]
pub struct SeedReport {
    pub seed: u64,
    pub num_events: usize,
    /// Largest objective seen across all runs and iterations.
    pub best: f64,
    pub runs: Vec<BenchmarkRun>,
}

impl SeedReport {
    pub fn run(&self, algorithm: Algorithm) -> Option<&BenchmarkRun> {
        self.runs.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn log_regret(&self, algorithm: Algorithm) -> Option<Vec<f64>> {
        self.run(algorithm).map(|r| log_regret(&r.trace, self.best))
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub instance: SyntheticInstance,
    pub hyper: HyperParams,
    pub seeds: Vec<SeedReport>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl BenchmarkReport {
    pub fn median_final_objective(&self, algorithm: Algorithm) -> f64 {
        let mut v: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.run(algorithm).map(|r| r.final_objective))
            .collect();
        median(&mut v)
    }

    /// Writes `regret_iter.csv`, `regret_time.csv` and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut by_iter = csv::Writer::from_path(dir.join("regret_iter.csv"))?;
        let mut by_time = csv::Writer::from_path(dir.join("regret_time.csv"))?;
        by_iter.write_record(["seed", "algorithm", "iter", "log_regret"])?;
        by_time.write_record(["seed", "algorithm", "seconds", "log_regret"])?;
        for seed in &self.seeds {
            for run in &seed.runs {
                for (rec, lr) in run.trace.iter().zip(log_regret(&run.trace, seed.best)) {
                    let (s, a, l) = (seed.seed.to_string(), run.algorithm.name(), lr.to_string());
                    by_iter.write_record([s.as_str(), a, &rec.iter.to_string(), &l])?;
                    by_time.write_record([s.as_str(), a, &rec.seconds.to_string(), &l])?;
                }
            }
        }
        by_iter.flush()?;
        by_time.flush()?;

        let seeds: Vec<_> = self
            .seeds
            .iter()
            .map(|s| {
                serde_json::json!({
                    "seed": s.seed,
                    "num_events": s.num_events,
                    "best_objective": s.best,
                    "runs": s.runs.iter().map(|r| serde_json::json!({
                        "algorithm": r.algorithm.name(),
                        "final_objective": r.final_objective,
                        "aa_accepted": r.stats.aa_accepted,
                        "aa_rejected": r.stats.aa_rejected,
                        "restarts": r.stats.restarts,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        let manifest = serde_json::json!({
            "kind": "benchmark",
            "recipe": self.config.recipe,
            "algorithms": self.config.algorithms,
            "iters": self.config.iters,
            "seeds": self.config.seeds,
            "hyper": self.hyper,
            "regret_floor": REGRET_FLOOR,
            "instance": {
                "kernels": self.instance.spec.kernels(),
                "truth": self.instance.truth,
                "spectral_radius": self.instance.radius,
                "domain": self.instance.domain,
                "init": self.instance.init,
            },
            "results": seeds,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

/// Simulates one stream per seed from the recipe's instance and runs every
/// algorithm from the shared starting point. Seeds run in parallel; the
/// report keeps the configured seed and algorithm order.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if config.iters == 0 || config.algorithms.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config(
            "benchmark needs iters >= 1, at least one algorithm and one seed".into(),
        ));
    }
    let instance = config.recipe.generate()?;
    let mut hyper = config.hyper.clone().unwrap_or_else(|| instance.hyper.clone());
    hyper.max_iters = config.iters;
    hyper.validate()?;

    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedReport> {
            let events = instance.simulate(seed)?;
            let num_events = events.len();
            let problem = instance.problem(events)?;
            let runs = config
                .algorithms
                .iter()
                .map(|alg| {
                    let fit = alg.run(&problem, &hyper, &instance.init)?;
                    Ok(BenchmarkRun {
                        algorithm: *alg,
                        final_objective: fit.objective,
                        trace: fit.trace,
                        stats: fit.stats,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let best = runs
                .iter()
                .flat_map(|r| r.trace.iter().map(|t| t.objective))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(SeedReport {
                seed,
                num_events,
                best,
                runs,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(BenchmarkReport {
        config: config.clone(),
        instance,
        hyper,
        seeds,
    })
}

// ---------------------------------------------------------------- consistency

/// Known-truth study: simulate at each horizon, fit with AA-iPALM from
/// `init` (the truth when absent), record `||theta_hat - theta*|| / ||theta*||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub kernels: Vec<KernelFamily>,
    pub truth: ParamVector,
    pub domain: BoxDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<ParamVector>,
    pub horizons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub iters: usize,
    pub reg_c: f64,
    /// Momentum used for both blocks; step sizes come from curvature
    /// estimates at the starting point.
    pub gamma: f64,
    /// Kernel sums ignore lags beyond this horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
}

impl ConsistencyConfig {
    /// Two-dimensional exponential instance with spectral radius about 0.4.
    pub fn default_k2() -> Self {
        let truth = ParamVector::from_nested(vec![0.3, 0.2], vec![vec![vec![0.3, 0.1], vec![0.15, 0.25]]], vec![1.0])
            .expect("static parameters");
        let lower = ParamVector::new(vec![0.01, 0.01], vec![0.0; 4], vec![0.1]).expect("static parameters");
        let upper = ParamVector::new(vec![5.0, 5.0], vec![2.0; 4], vec![10.0]).expect("static parameters");
        let spec = ModelSpec::new(2, vec![KernelFamily::Exponential]).expect("static spec");
        Self {
            kernels: spec.kernels().to_vec(),
            domain: BoxDomain::new(&spec, lower, upper).expect("static box"),
            truth,
            init: None,
            horizons: vec![200.0, 2000.0],
            seeds: (0..10).collect(),
            iters: 300,
            reg_c: 0.01,
            gamma: 0.5,
            truncation: Some(400.0),
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.truth.dim(), self.kernels.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyCell {
    pub horizon: f64,
    pub seed: u64,
    pub num_events: usize,
    pub relative_error: f64,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub config: ConsistencyConfig,
    pub cells: Vec<ConsistencyCell>,
}

impl ConsistencyReport {
    /// `(T, median relative error)` in horizon order.
    pub fn medians(&self) -> Vec<(f64, f64)> {
        self.config
            .horizons
            .iter()
            .map(|&t| {
                let mut errs: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.horizon == t)
                    .map(|c| c.relative_error)
                    .collect();
                (t, median(&mut errs))
            })
            .collect()
    }

    /// Writes `consistency.csv` and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("consistency.csv"))?;
        w.write_record(["horizon", "seed", "num_events", "relative_error", "objective", "feasible"])?;
        for c in &self.cells {
            w.write_record([
                c.horizon.to_string(),
                c.seed.to_string(),
                c.num_events.to_string(),
                c.relative_error.to_string(),
                c.objective.to_string(),
                c.feasible.to_string(),
            ])?;
        }
        w.flush()?;
        let medians: Vec<_> = self
            .medians()
            .into_iter()
            .map(|(t, m)| serde_json::json!({"horizon": t, "median_relative_error": m}))
            .collect();
        let manifest = serde_json::json!({
            "kind": "consistency",
            "config": self.config,
            "medians": medians,
        });
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn relative_error(estimate: &ParamVector, truth: &ParamVector) -> f64 {
    let (a, b) = (estimate.to_flat(), truth.to_flat());
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (diff / norm).sqrt()
}

/// Step sizes for the consistency fits: curvature estimated at the starting
/// point and at a point with halved `mu`, with a safety factor of 4.
fn consistency_hyper(problem: &LikelihoodProblem, start: &ParamVector, config: &ConsistencyConfig) -> Result<HyperParams> {
    let mut shrunk = start.clone();
    for m in shrunk.mu_mut() {
        *m *= 0.5;
    }
    let map = problem.index_map();
    let shrunk = map.unpack(&problem.domain().project(&shrunk.to_flat())?)?;
    let (l1, l2) = estimate_lipschitz(problem, &[start.clone(), shrunk], 4.0)?;
    Ok(HyperParams::theory_compliant(
        l1.max(1e-8),
        l2.max(1e-8),
        config.gamma,
        config.iters,
    ))
}

pub fn run_consistency_study(config: &ConsistencyConfig) -> Result<ConsistencyReport> {
    let spec = config.spec()?;
    config.truth.validate(&spec)?;
    let radius = spectral_radius(&branching_matrix(&spec, &config.truth)?);
    if radius >= 1.0 {
        return Err(Error::NonStationary { radius });
    }
    if config.horizons.is_empty() || config.seeds.is_empty() || config.iters == 0 {
        return Err(Error::Config(
            "consistency study needs horizons, seeds and iters >= 1".into(),
        ));
    }
    let start = config.init.clone().unwrap_or_else(|| config.truth.clone());
    if !config.domain.contains_params(&start) {
        return Err(Error::Infeasible("consistency starting point lies outside the box".into()));
    }
    let grid: Vec<(f64, u64)> = config
        .horizons
        .iter()
        .flat_map(|&t| config.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(horizon, seed)| -> Result<ConsistencyCell> {
            // decorrelate streams across horizons
            let stream_seed = seed ^ horizon.to_bits().rotate_left(17);
            let events = simulate_cluster(&spec, &config.truth, horizon, &SimConfig::new(stream_seed))?;
            let num_events = events.len();
            let problem = LikelihoodProblem::new(spec.clone(), events, config.domain.clone(), config.reg_c)?
                .with_truncation(config.truncation)?;
            let hyper = consistency_hyper(&problem, &start, config)?;
            let fit = run_aa_ipalm(&problem, &hyper, &start)?;
            Ok(ConsistencyCell {
                horizon,
                seed,
                num_events,
                relative_error: relative_error(&fit.params, &config.truth),
                objective: fit.objective,
                feasible: config.domain.contains_params(&fit.params),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConsistencyReport {
        config: config.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_recipe_shape() {
        let inst = gen_synthetic_exponential(7).unwrap();
        assert_eq!(inst.spec.dim(), 10);
        assert!(inst.radius < 1.0);
        for a in inst.truth.alpha_flat() {
            assert!(*a >= 0.001 / 11.0 && *a <= 1.0 / 11.0);
        }
        for m in inst.truth.mu() {
            assert!(*m >= 0.0005 && *m <= 0.05);
        }
        let lo = inst.domain.lower();
        let hi = inst.domain.upper();
        assert!(lo.beta()[0] < 3.0 && 3.0 < hi.beta()[0]);
        assert!(lo.mu()[0] < 1.0 && 1.0 < hi.mu()[0]);
        assert_eq!(inst.init.beta(), &[3.0]);
        assert_eq!(inst.init.mu(), &[1.0; 10]);
        assert!((inst.hyper.tau1() - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn power_law_recipe_shape() {
        let inst = gen_synthetic_powerlaw(3).unwrap();
        assert_eq!(inst.spec.kernels()[0], KernelFamily::PowerLaw { cutoff: 0.05 });
        assert_eq!(inst.domain.lower().beta()[0], 1.2);
        assert!(inst.radius < 1.0);
        for a in inst.truth.alpha_flat() {
            assert!(*a >= 0.001 / 200.0 && *a <= 1.0 / 200.0);
        }
        assert!(inst.domain.contains_params(&inst.init));
    }

    #[test]
    fn recipe_names() {
        assert_eq!(SyntheticRecipe::by_name("exp-k10").unwrap(), SyntheticRecipe::exponential(10));
        assert_eq!(SyntheticRecipe::by_name("pwl-k10").unwrap().cutoff, 0.05);
        assert!(SyntheticRecipe::by_name("exp-k").is_err());
        assert!(SyntheticRecipe::by_name("gauss-k3").is_err());
    }

    #[test]
    fn impossible_recipe_fails() {
        let mut r = SyntheticRecipe::exponential(3);
        r.alpha_divisor = 0.1;
        assert!(matches!(r.generate(), Err(Error::NonStationary { .. })));
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn regret_floor_at_best() {
        let rec = |objective| TraceRecord {
            iter: 0,
            objective,
            residual: 0.0,
            step_kind: crate::optim::StepKind::Initial,
            lyapunov: 0.0,
            seconds: 0.0,
        };
        let r = log_regret(&[rec(-5.0), rec(-1.0)], -1.0);
        assert!((r[1] - REGRET_FLOOR.ln()).abs() < 1e-3);
        assert!((r[0] - (4.0f64 + REGRET_FLOOR).ln()).abs() < 1e-15);
    }
}
