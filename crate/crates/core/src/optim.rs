//! Block-alternating solvers for the box-constrained regularized MLE.
//!
//! The coordinates split into the `(mu, alpha)` block and the `beta` block.
//! One iPALM sweep takes a projected gradient-ascent step with inertia on the
//! first block, then on `beta` using the gradient at the freshly updated
//! `(mu, alpha)`. Viewed on the doubled state `u = (theta_current,
//! theta_previous)` this sweep is a fixed-point map whose fixed points are the
//! stationary points of the constrained problem.
//!
//! [`run_aa_ipalm`] accelerates that map with type-I Anderson acceleration:
//! a rank-one updated approximate inverse Jacobian `H`, Gram-Schmidt based
//! restarts, Powell-style damping of the secant pair, and a four-condition
//! safeguard that falls back to the plain iPALM candidate.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Evaluator, LikelihoodProblem};
use crate::model::ParamVector;

/// Rank-one denominators below this magnitude force a restart.
pub const SINGULAR_DENOMINATOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "palm")]
    Palm,
    #[serde(rename = "ipalm")]
    Ipalm,
    #[serde(rename = "aa-ipalm")]
    AaIpalm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Palm, Algorithm::Ipalm, Algorithm::AaIpalm];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Palm => "palm",
            Algorithm::Ipalm => "ipalm",
            Algorithm::AaIpalm => "aa-ipalm",
        }
    }

    pub fn run(&self, problem: &LikelihoodProblem, hp: &HyperParams, theta0: &ParamVector) -> Result<FitResult> {
        match self {
            Algorithm::Palm => run_palm(problem, hp, theta0),
            Algorithm::Ipalm => run_ipalm(problem, hp, theta0),
            Algorithm::AaIpalm => run_aa_ipalm(problem, hp, theta0),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "palm" => Ok(Algorithm::Palm),
            "ipalm" => Ok(Algorithm::Ipalm),
            "aa-ipalm" => Ok(Algorithm::AaIpalm),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected palm, ipalm or aa-ipalm)"
            ))),
        }
    }
}

/// Solver hyperparameters.
///
/// The defaults are the synthetic-benchmark settings: `tau = 1e-7`,
/// `gamma = 0.9`, `omega_bar = nu = 0.1`, `delta = 0.02`, `C1 = C2 = 1e8`,
/// memory 20, 500 iterations. `lbar1`/`lbar2` default to the value for which
/// the step-size formula reproduces `tau = 1e-7`. Those settings do not
/// satisfy `delta >= max(delta1, delta2)`; see [`HyperParams::compliance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub epsilon: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lbar1: f64,
    pub lbar2: f64,
    /// Explicit step sizes; `None` uses `2(1 - gamma)/((1 + gamma) lbar)`.
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub omega_bar: f64,
    pub nu: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub memory: usize,
    pub max_iters: usize,
    /// When false every AA candidate is rejected and AA-iPALM reduces to
    /// iPALM.
    pub accept_aa: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        let gamma = 0.9;
        let tau = 1e-7;
        let lbar = 2.0 * (1.0 - gamma) / ((1.0 + gamma) * tau);
        Self {
            epsilon: 0.05,
            gamma1: gamma,
            gamma2: gamma,
            lbar1: lbar,
            lbar2: lbar,
            tau1: Some(tau),
            tau2: Some(tau),
            omega_bar: 0.1,
            nu: 0.1,
            delta: 0.02,
            c1: 1e8,
            c2: 1e8,
            memory: 20,
            max_iters: 500,
            accept_aa: true,
        }
    }
}

impl HyperParams {
    /// Step sizes from the formula and `delta = max(delta1, delta2)`, which
    /// satisfies every compliance condition for the given Lipschitz bounds.
    pub fn theory_compliant(lbar1: f64, lbar2: f64, gamma: f64, max_iters: usize) -> Self {
        let mut hp = Self {
            gamma1: gamma,
            gamma2: gamma,
            lbar1,
            lbar2,
            tau1: None,
            tau2: None,
            max_iters,
            ..Self::default()
        };
        hp.delta = hp.delta1().max(hp.delta2()).max(f64::MIN_POSITIVE);
        hp
    }

    pub fn formula_tau1(&self) -> f64 {
        2.0 * (1.0 - self.gamma1) / ((1.0 + self.gamma1) * self.lbar1)
    }

    pub fn formula_tau2(&self) -> f64 {
        2.0 * (1.0 - self.gamma2) / ((1.0 + self.gamma2) * self.lbar2)
    }

    pub fn tau1(&self) -> f64 {
        self.tau1.unwrap_or_else(|| self.formula_tau1())
    }

    pub fn tau2(&self) -> f64 {
        self.tau2.unwrap_or_else(|| self.formula_tau2())
    }

    pub fn delta1(&self) -> f64 {
        self.gamma1 * self.lbar1 / (2.0 * (1.0 - self.epsilon - self.gamma1))
    }

    pub fn delta2(&self) -> f64 {
        self.gamma2 * self.lbar2 / (2.0 * (1.0 - self.epsilon - self.gamma2))
    }

    /// Copy with both momentum coefficients zeroed (PALM).
    pub fn without_inertia(&self) -> Self {
        Self {
            gamma1: 0.0,
            gamma2: 0.0,
            ..self.clone()
        }
    }

    /// Structural checks that must always hold.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return bad(format!("epsilon must lie in (0, 1/2), got {}", self.epsilon));
        }
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if !(0.0..1.0).contains(&g) {
                return bad(format!("{name} must lie in [0, 1), got {g}"));
            }
        }
        for (name, v) in [("lbar1", self.lbar1), ("lbar2", self.lbar2)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("tau1", self.tau1()), ("tau2", self.tau2())] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("omega_bar", self.omega_bar), ("nu", self.nu)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2)] {
            if !(v >= 1.0) {
                return bad(format!("{name} must be >= 1, got {v}"));
            }
        }
        if self.memory == 0 {
            return bad("memory must be >= 1".into());
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1".into());
        }
        Ok(())
    }

    /// Conditions under which the convergence guarantees apply. Each
    /// violated condition is returned as a message; an empty list means the
    /// settings are compliant.
    pub fn compliance(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let cap = 1.0 - 2.0 * self.epsilon;
        for (name, g) in [("gamma1", self.gamma1), ("gamma2", self.gamma2)] {
            if g > cap {
                issues.push(format!("{name} = {g} exceeds 1 - 2 epsilon = {cap}"));
            }
        }
        for (name, tau, formula) in [
            ("tau1", self.tau1(), self.formula_tau1()),
            ("tau2", self.tau2(), self.formula_tau2()),
        ] {
            if tau > formula * (1.0 + 1e-12) {
                issues.push(format!(
                    "{name} = {tau:e} exceeds the step-size formula value {formula:e} for the given lbar"
                ));
            }
        }
        let need = self.delta1().max(self.delta2());
        if self.delta < need {
            issues.push(format!(
                "delta = {} is below max(delta1, delta2) = {need:e}",
                self.delta
            ));
        }
        issues
    }
}

/// Damping factor applied to the secant pair.
///
/// Returns 1 when `|eta| >= omega_bar`, else
/// `(1 - sign(eta) omega_bar) / (1 - eta)` with `sign(0) = 1`.
pub fn powell_phi(eta: f64, omega_bar: f64) -> f64 {
    if eta.abs() >= omega_bar {
        1.0
    } else {
        let sign = if eta >= 0.0 { 1.0 } else { -1.0 };
        (1.0 - sign * omega_bar) / (1.0 - eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    /// Record of the starting point.
    #[serde(rename = "init")]
    Initial,
    #[serde(rename = "palm")]
    Palm,
    #[serde(rename = "ipalm")]
    Ipalm,
    #[serde(rename = "aa-accepted")]
    AaAccepted,
    #[serde(rename = "aa-rejected")]
    AaRejected,
}

impl StepKind {
    pub fn name(&self) -> &'static str {
        match self {
            StepKind::Initial => "init",
            StepKind::Palm => "palm",
            StepKind::Ipalm => "ipalm",
            StepKind::AaAccepted => "aa-accepted",
            StepKind::AaRejected => "aa-rejected",
        }
    }
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "init" => StepKind::Initial,
            "palm" => StepKind::Palm,
            "ipalm" => StepKind::Ipalm,
            "aa-accepted" => StepKind::AaAccepted,
            "aa-rejected" => StepKind::AaRejected,
            other => return Err(Error::Config(format!("unknown step kind '{other}'"))),
        })
    }
}

/// State of iterate `k`: objective at `theta^k`, fixed-point residual
/// `||H_iPALM(u^k) - u^k||`, how `u^k` was produced, and the Lyapunov value
/// built from `(theta^k, theta^{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual: f64,
    pub step_kind: StepKind,
    pub lyapunov: f64,
    pub seconds: f64,
}

impl TraceRecord {
    /// Equality ignoring wall-clock time and the step label.
    pub fn same_numbers(&self, other: &TraceRecord) -> bool {
        self.iter == other.iter
            && self.objective.to_bits() == other.objective.to_bits()
            && self.residual.to_bits() == other.residual.to_bits()
            && self.lyapunov.to_bits() == other.lyapunov.to_bits()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub iterations: usize,
    pub aa_accepted: usize,
    pub aa_rejected: usize,
    pub restarts: usize,
}

/// Spectral norms of the approximate inverse Jacobian after an update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HNorms {
    pub iter: usize,
    pub norm: f64,
    pub inverse_norm: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub algorithm: Algorithm,
    pub params: ParamVector,
    pub objective: f64,
    pub trace: Vec<TraceRecord>,
    pub stats: RunStats,
    /// Filled only when requested through [`AaOptions`].
    pub h_norms: Vec<HNorms>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AaOptions {
    /// Record `||H_k||_2` and `||H_k^{-1}||_2` (SVD per iteration, small
    /// problems only).
    pub track_h_norms: bool,
}

struct MapEval {
    image: Vec<f64>,
    objective: f64,
    grad: Vec<f64>,
}

struct Sweep<'p> {
    problem: &'p LikelihoodProblem,
    eval: Evaluator<'p>,
    tau1: f64,
    tau2: f64,
    gamma1: f64,
    gamma2: f64,
    p: usize,
}

impl<'p> Sweep<'p> {
    fn new(problem: &'p LikelihoodProblem, hp: &HyperParams) -> Self {
        Self {
            problem,
            eval: Evaluator::new(problem),
            tau1: hp.tau1(),
            tau2: hp.tau2(),
            gamma1: hp.gamma1,
            gamma2: hp.gamma2,
            p: problem.index_map().len(),
        }
    }

    /// One iPALM sweep from `u = (theta', theta)`; also returns the
    /// objective and full gradient at `theta'`.
    fn map(&mut self, u: &[f64]) -> Result<MapEval> {
        let p = self.p;
        let map = self.problem.index_map();
        let (current, previous) = u.split_at(p);
        let (objective, grad) = self.eval.objective_and_grad(current)?;

        let mut next = current.to_vec();
        for idx in map.mu_alpha() {
            next[idx] = current[idx] + self.tau1 * grad[idx] + self.gamma1 * (current[idx] - previous[idx]);
        }
        self.problem.domain().project_block(&mut next, map.mu_alpha());

        // beta gradient at the updated (mu, alpha) and the old beta
        let (_, grad_mid) = self.eval.objective_and_grad(&next)?;
        for idx in map.beta() {
            next[idx] = current[idx] + self.tau2 * grad_mid[idx] + self.gamma2 * (current[idx] - previous[idx]);
        }
        self.problem.domain().project_block(&mut next, map.beta());

        let mut image = next;
        image.extend_from_slice(current);
        Ok(MapEval { image, objective, grad })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_start(problem: &LikelihoodProblem, hp: &HyperParams, theta0: &ParamVector) -> Result<Vec<f64>> {
    hp.validate()?;
    let flat = problem.index_map().pack(theta0)?;
    if !problem.domain().contains(&flat) {
        return Err(Error::Infeasible("initial point lies outside the box".into()));
    }
    Ok(flat)
}

/// The iPALM fixed-point map on the doubled state `u = (theta', theta)`.
pub fn ipalm_map(problem: &LikelihoodProblem, hp: &HyperParams, u: &[f64]) -> Result<Vec<f64>> {
    let p = problem.index_map().len();
    if u.len() != 2 * p {
        return Err(Error::Dimension {
            expected: 2 * p,
            got: u.len(),
        });
    }
    Ok(Sweep::new(problem, hp).map(u)?.image)
}

fn lyapunov_from(hp: &HyperParams, problem: &LikelihoodProblem, objective: f64, current: &[f64], previous: &[f64]) -> f64 {
    let map = problem.index_map();
    let block = |r: std::ops::Range<usize>| {
        current[r.clone()]
            .iter()
            .zip(&previous[r])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    };
    -objective + 0.5 * hp.delta1() * block(map.mu_alpha()) + 0.5 * hp.delta2() * block(map.beta())
}

/// `-F(theta_k) + delta1/2 ||d(mu, alpha)||^2 + delta2/2 ||d beta||^2` where
/// `F` is the regularized objective and `d` is the step from `theta_prev`.
pub fn lyapunov_value(
    problem: &LikelihoodProblem,
    hp: &HyperParams,
    theta_k: &ParamVector,
    theta_prev: &ParamVector,
) -> Result<f64> {
    let objective = problem.regularized_objective(theta_k)?;
    Ok(lyapunov_from(hp, problem, objective, &theta_k.to_flat(), &theta_prev.to_flat()))
}

fn run_inertial(
    problem: &LikelihoodProblem,
    hp: &HyperParams,
    theta0: &ParamVector,
    kind: StepKind,
    algorithm: Algorithm,
) -> Result<FitResult> {
    let flat0 = check_start(problem, hp, theta0)?;
    let p = flat0.len();
    let started = Instant::now();
    let mut sweep = Sweep::new(problem, hp);
    let mut u = flat0.clone();
    u.extend_from_slice(&flat0);
    let mut trace = Vec::with_capacity(hp.max_iters + 1);

    for k in 0..=hp.max_iters {
        let ev = sweep.map(&u)?;
        let (current, previous) = u.split_at(p);
        trace.push(TraceRecord {
            iter: k,
            objective: ev.objective,
            residual: dist(&ev.image, &u),
            step_kind: if k == 0 { StepKind::Initial } else { kind },
            lyapunov: lyapunov_from(hp, problem, ev.objective, current, previous),
            seconds: started.elapsed().as_secs_f64(),
        });
        if k == hp.max_iters {
            break;
        }
        u = ev.image;
    }

    let params = problem.index_map().unpack(&u[..p])?;
    Ok(FitResult {
        algorithm,
        objective: trace.last().map_or(f64::NAN, |r| r.objective),
        params,
        trace,
        stats: RunStats {
            iterations: hp.max_iters,
            ..RunStats::default()
        },
        h_norms: Vec::new(),
    })
}

/// Inertial PALM: repeated application of [`ipalm_map`] from
/// `u^0 = (theta^0, theta^0)`.
pub fn run_ipalm(problem: &LikelihoodProblem, hp: &HyperParams, theta0: &ParamVector) -> Result<FitResult> {
    run_inertial(problem, hp, theta0, StepKind::Ipalm, Algorithm::Ipalm)
}

/// PALM: iPALM with both momentum coefficients set to zero.
pub fn run_palm(problem: &LikelihoodProblem, hp: &HyperParams, theta0: &ParamVector) -> Result<FitResult> {
    run_inertial(problem, &hp.without_inertia(), theta0, StepKind::Palm, Algorithm::Palm)
}

pub fn run_aa_ipalm(problem: &LikelihoodProblem, hp: &HyperParams, theta0: &ParamVector) -> Result<FitResult> {
    run_aa_ipalm_with(problem, hp, theta0, AaOptions::default())
}

/// Approximate inverse Jacobian with its Gram-Schmidt memory window.
struct InverseJacobian {
    h: DMatrix<f64>,
    window: Vec<DVector<f64>>,
    /// Secant pairs absorbed since the last reset.
    used: usize,
}

impl InverseJacobian {
    fn new(n: usize) -> Self {
        Self {
            h: DMatrix::identity(n, n),
            window: Vec::new(),
            used: 0,
        }
    }

    fn reset(&mut self) {
        self.h.fill_with_identity();
        self.window.clear();
        self.used = 0;
    }

    /// Absorbs the secant pair `(s, y)`; `g_prev` is the residual
    /// `u^{k-1} - H_iPALM(u^{k-1})`. Returns whether a restart happened.
    fn update(
        &mut self,
        s: DVector<f64>,
        y: DVector<f64>,
        g_prev: &DVector<f64>,
        hp: &HyperParams,
    ) -> bool {
        let mut s_hat = s.clone();
        for prev in &self.window {
            s_hat -= prev * (prev.dot(&s) / prev.dot(prev));
        }
        let mut restarted = false;
        if self.used + 1 > hp.memory || s_hat.norm() < hp.nu * s.norm() {
            self.reset();
            s_hat = s.clone();
            restarted = true;
        }

        let mut absorbed = self.rank_one(&s, &y, &s_hat, g_prev, hp);
        if !absorbed && !restarted {
            self.reset();
            s_hat = s.clone();
            restarted = true;
            absorbed = self.rank_one(&s, &y, &s_hat, g_prev, hp);
        }
        if absorbed {
            self.window.push(s_hat);
            self.used += 1;
        }
        restarted
    }

    fn rank_one(
        &mut self,
        s: &DVector<f64>,
        y: &DVector<f64>,
        s_hat: &DVector<f64>,
        g_prev: &DVector<f64>,
        hp: &HyperParams,
    ) -> bool {
        let ss = s_hat.norm_squared();
        if !(ss > 0.0) {
            return false;
        }
        // s_hat^T H as a row vector, shared by the damping ratio and the update
        let s_hat_h = self.h.tr_mul(s_hat);
        let eta = s_hat_h.dot(y) / ss;
        let omega = powell_phi(eta, hp.omega_bar);
        let y_tilde = y * omega - g_prev * (1.0 - omega);
        let h_y = &self.h * &y_tilde;
        let denom = s_hat_h.dot(&y_tilde);
        if !(denom.abs() >= SINGULAR_DENOMINATOR) {
            return false;
        }
        let left = (s - h_y) / denom;
        self.h.ger(1.0, &left, &s_hat_h, 1.0);
        true
    }

    fn norms(&self, iter: usize) -> HNorms {
        let sv = self.h.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        HNorms {
            iter,
            norm: max,
            inverse_norm: if min > 0.0 { 1.0 / min } else { f64::INFINITY },
        }
    }
}

/// iPALM with safeguarded Anderson acceleration.
///
/// Each iteration forms the secant pair from the last AA candidate, updates
/// `H`, and proposes `u^k - H (u^k - H_iPALM(u^k))`. The proposal replaces the
/// iPALM candidate only if (i) the gradient norm at `theta^k` is within `C1`
/// times the iPALM residual, (ii) its `theta` half lies in the box, (iii) its
/// second half moved at most `C2` times as far as the iPALM one, and (iv) it
/// improves the objective by at least `(1 + epsilon) delta / 2` times the
/// squared step.
pub fn run_aa_ipalm_with(
    problem: &LikelihoodProblem,
    hp: &HyperParams,
    theta0: &ParamVector,
    options: AaOptions,
) -> Result<FitResult> {
    let flat0 = check_start(problem, hp, theta0)?;
    let p = flat0.len();
    let domain = problem.domain();
    let started = Instant::now();
    let mut sweep = Sweep::new(problem, hp);
    let mut stats = RunStats {
        iterations: hp.max_iters,
        ..RunStats::default()
    };
    let mut trace = Vec::with_capacity(hp.max_iters + 1);
    let mut h_norms = Vec::new();
    let mut jac = InverseJacobian::new(2 * p);

    let mut u: Vec<f64> = flat0.iter().chain(&flat0).copied().collect();
    let mut u_prev = u.clone();
    let mut u_tilde = u.clone();
    let mut image_prev: Vec<f64> = Vec::new();
    let mut kind = StepKind::Initial;

    for k in 0..=hp.max_iters {
        let ev = sweep.map(&u)?;
        let residual = dist(&ev.image, &u);
        trace.push(TraceRecord {
            iter: k,
            objective: ev.objective,
            residual,
            step_kind: kind,
            // previous accepted iterate, which differs from u[p..] after an
            // accepted AA step
            lyapunov: lyapunov_from(hp, problem, ev.objective, &u[..p], &u_prev[..p]),
            seconds: started.elapsed().as_secs_f64(),
        });
        if k == hp.max_iters {
            break;
        }
        if k == 0 {
            // u^1 = u~^1 = H_iPALM(u^0)
            u_prev = std::mem::replace(&mut u, ev.image.clone());
            u_tilde = u.clone();
            image_prev = ev.image;
            kind = StepKind::Ipalm;
            continue;
        }

        // Secant pair from the previous AA candidate. Its theta half is
        // projected first so the map is evaluated where the likelihood is
        // defined.
        let mut probe = u_tilde.clone();
        domain.project_block(&mut probe[..p], 0..p);
        let image_probe = if probe == u {
            ev.image.clone()
        } else {
            sweep.map(&probe)?.image
        };
        let s = DVector::from_iterator(2 * p, probe.iter().zip(&u_prev).map(|(a, b)| a - b));
        let y = DVector::from_iterator(
            2 * p,
            (0..2 * p).map(|i| s[i] - (image_probe[i] - image_prev[i])),
        );
        let g_prev = DVector::from_iterator(2 * p, u_prev.iter().zip(&image_prev).map(|(a, b)| a - b));
        if jac.update(s, y, &g_prev, hp) {
            stats.restarts += 1;
        }
        if options.track_h_norms {
            h_norms.push(jac.norms(k));
        }

        // candidates
        let u_hat = &ev.image;
        let step = DVector::from_iterator(2 * p, u.iter().zip(u_hat).map(|(a, b)| a - b));
        let correction = &jac.h * step;
        let candidate: Vec<f64> = u.iter().zip(correction.iter()).map(|(a, c)| a - c).collect();

        let accept = hp.accept_aa && {
            let grad_ok = norm(&ev.grad) <= hp.c1 * residual;
            let feasible = domain.contains(&candidate[..p]);
            let tail_ok = dist(&candidate[p..], &u[p..]) <= hp.c2 * dist(&u_hat[p..], &u[p..]);
            grad_ok
                && feasible
                && tail_ok
                && {
                    let gain = sweep.eval.objective(&candidate[..p])? - ev.objective;
                    let moved = dist(&candidate[..p], &u[..p]);
                    gain >= 0.5 * (hp.delta + hp.epsilon * hp.delta) * moved * moved
                }
        };

        let next = if accept {
            stats.aa_accepted += 1;
            kind = StepKind::AaAccepted;
            candidate.clone()
        } else {
            stats.aa_rejected += 1;
            kind = StepKind::AaRejected;
            ev.image.clone()
        };
        u_prev = std::mem::replace(&mut u, next);
        u_tilde = candidate;
        image_prev = ev.image;
    }

    let params = problem.index_map().unpack(&u[..p])?;
    Ok(FitResult {
        algorithm: Algorithm::AaIpalm,
        objective: trace.last().map_or(f64::NAN, |r| r.objective),
        params,
        trace,
        stats,
        h_norms,
    })
}

/// Upper bound on `||H_k^{-1}||_2`: `3 ((1 + omega_bar + nu) / nu)^m - 2`.
pub fn inverse_h_bound(omega_bar: f64, nu: f64, memory: usize) -> f64 {
    3.0 * ((1.0 + omega_bar + nu) / nu).powi(memory as i32) - 2.0
}

/// Upper bound on `||H_k||_2` with the ambient dimension `n` filled in for the
/// unspecified exponent: `(3 ((1 + omega_bar + nu)/nu)^m - 2)^(n-1) / omega_bar^m`.
pub fn h_bound(omega_bar: f64, nu: f64, memory: usize, n: usize) -> f64 {
    inverse_h_bound(omega_bar, nu, memory).powi(n as i32 - 1) / omega_bar.powi(memory as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSummary {
    /// `(K, min_{k <= K} residual_k^2)` at `K0, 2 K0, 4 K0`.
    pub checkpoints: Vec<(usize, f64)>,
    pub nonincreasing: bool,
    /// Ratio of the last checkpoint to the first. An `O(1/K)` decay predicts
    /// at most `1/4`.
    pub decay_ratio: f64,
}

/// Prefix-minimum squared residuals at `K0`, `2 K0`, `4 K0` (clamped to the
/// trace length).
pub fn residual_diagnostics(trace: &[TraceRecord], k0: usize) -> Result<ResidualSummary> {
    if trace.is_empty() {
        return Err(Error::Config("residual diagnostics need a nonempty trace".into()));
    }
    let k0 = k0.max(1);
    let last = trace.len() - 1;
    let checkpoints: Vec<(usize, f64)> = [k0, 2 * k0, 4 * k0]
        .into_iter()
        .map(|kk| {
            let kk = kk.min(last);
            let best = trace[..=kk]
                .iter()
                .map(|r| r.residual * r.residual)
                .fold(f64::INFINITY, f64::min);
            (kk, best)
        })
        .collect();
    let nonincreasing = checkpoints.windows(2).all(|w| w[1].1 <= w[0].1);
    let first = checkpoints[0].1;
    let decay_ratio = if first > 0.0 { checkpoints[2].1 / first } else { 0.0 };
    Ok(ResidualSummary {
        checkpoints,
        nonincreasing,
        decay_ratio,
    })
}

/// Curvature estimates `(L1, L2)` for the `(mu, alpha)` and `beta` blocks:
/// the largest-magnitude eigenvalue of the block Hessian of the regularized
/// objective, by power iteration on finite-difference Hessian-vector
/// products, maximized over `points` and multiplied by `safety`.
///
/// Coordinates whose box has zero width are left out: projection pins them,
/// so their curvature never limits a step.
pub fn estimate_lipschitz(problem: &LikelihoodProblem, points: &[ParamVector], safety: f64) -> Result<(f64, f64)> {
    let map = problem.index_map();
    let lo = problem.domain().lower_flat();
    let hi = problem.domain().upper_flat();
    let free = |r: std::ops::Range<usize>| -> Vec<usize> { r.filter(|&i| hi[i] > lo[i]).collect() };
    let (block1, block2) = (free(map.mu_alpha()), free(map.beta()));
    let mut eval = Evaluator::new(problem);
    let mut l1: f64 = 0.0;
    let mut l2: f64 = 0.0;
    for point in points {
        let x = map.pack(point)?;
        l1 = l1.max(block_curvature(&mut eval, &x, &block1)?);
        l2 = l2.max(block_curvature(&mut eval, &x, &block2)?);
    }
    Ok((safety * l1, safety * l2))
}

fn block_curvature(eval: &mut Evaluator<'_>, x: &[f64], block: &[usize]) -> Result<f64> {
    const ITERS: usize = 60;
    let n = block.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (_, g0) = eval.objective_and_grad(x)?;
    let scale = 1.0 + block.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
    let h = 1e-6 * scale;
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = 0.0;
    for _ in 0..ITERS {
        let mut xp = x.to_vec();
        for (&idx, vi) in block.iter().zip(&v) {
            xp[idx] += h * vi;
        }
        let (_, g1) = eval.objective_and_grad(&xp)?;
        let hv: Vec<f64> = block.iter().map(|&idx| (g1[idx] - g0[idx]) / h).collect();
        let size = norm(&hv);
        if !(size > 0.0) {
            return Ok(0.0);
        }
        estimate = size;
        v = hv.iter().map(|z| z / size).collect();
    }
    Ok(estimate)
}
