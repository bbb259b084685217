//! Parameter and kernel domain model.
//!
//! The triggering function between types is a weighted sum of base kernels,
//! `g_ij(t) = sum_m alpha[m][i][j] * phi_m(t; beta_m)`, with one scalar shape
//! parameter per base kernel. Parameters are packed into a flat coordinate
//! vector laid out as `[mu (K)] ++ [alpha in (m, i, j) row-major] ++ [beta (M)]`
//! so that the `(mu, alpha)` block is contiguous.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible power-law exponent lower bound.
pub const POWER_LAW_MIN_BETA: f64 = 1.0 + 1e-6;

/// Base kernel family. Both shipped families are nonnegative and
/// nonincreasing in `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-beta t)`, `beta > 0`.
    Exponential,
    /// `(t + c)^(-beta)`, `beta > 1`, `c > 0`.
    PowerLaw { cutoff: f64 },
}

impl KernelFamily {
    pub fn power_law(cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::Domain(format!(
                "power-law cutoff must be positive, got {cutoff}"
            )));
        }
        Ok(KernelFamily::PowerLaw { cutoff })
    }

    pub fn check_beta(&self, beta: f64) -> Result<()> {
        match *self {
            KernelFamily::Exponential if beta > 0.0 && beta.is_finite() => Ok(()),
            KernelFamily::Exponential => Err(Error::Domain(format!(
                "exponential kernel requires beta > 0, got {beta}"
            ))),
            KernelFamily::PowerLaw { .. } if beta > 1.0 && beta.is_finite() => Ok(()),
            KernelFamily::PowerLaw { .. } => Err(Error::Domain(format!(
                "power-law kernel requires beta > 1 for integrability, got {beta}"
            ))),
        }
    }

    /// `phi(t; beta)`.
    pub fn value(&self, t: f64, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        check_time(t)?;
        Ok(self.value_unchecked(t, beta))
    }

    /// `Phi(u; beta) = int_0^u phi(v; beta) dv`. `u` may be `f64::INFINITY`.
    pub fn antiderivative(&self, u: f64, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        check_time(u)?;
        Ok(self.antiderivative_unchecked(u, beta))
    }

    /// `d phi / d beta` at `(t, beta)`.
    pub fn value_dbeta(&self, t: f64, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        check_time(t)?;
        Ok(self.value_dbeta_unchecked(t, beta))
    }

    /// `d Phi / d beta` at `(u, beta)`.
    pub fn antiderivative_dbeta(&self, u: f64, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        check_time(u)?;
        Ok(self.antiderivative_dbeta_unchecked(u, beta))
    }

    /// Total mass `Phi(inf; beta)`.
    pub fn total_mass(&self, beta: f64) -> Result<f64> {
        self.antiderivative(f64::INFINITY, beta)
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, t: f64, beta: f64) -> f64 {
        match *self {
            KernelFamily::Exponential => (-beta * t).exp(),
            KernelFamily::PowerLaw { cutoff } => (t + cutoff).powf(-beta),
        }
    }

    #[inline]
    pub(crate) fn value_and_dbeta_unchecked(&self, t: f64, beta: f64) -> (f64, f64) {
        match *self {
            KernelFamily::Exponential => {
                let v = (-beta * t).exp();
                (v, -t * v)
            }
            KernelFamily::PowerLaw { cutoff } => {
                let x = t + cutoff;
                let v = x.powf(-beta);
                (v, -x.ln() * v)
            }
        }
    }

    #[inline]
    pub(crate) fn value_dbeta_unchecked(&self, t: f64, beta: f64) -> f64 {
        self.value_and_dbeta_unchecked(t, beta).1
    }

    pub(crate) fn antiderivative_unchecked(&self, u: f64, beta: f64) -> f64 {
        match *self {
            KernelFamily::Exponential => {
                if u.is_infinite() {
                    1.0 / beta
                } else {
                    -(-beta * u).exp_m1() / beta
                }
            }
            KernelFamily::PowerLaw { cutoff } => {
                let a = 1.0 - beta;
                let head = cutoff.powf(a);
                let tail = if u.is_infinite() { 0.0 } else { (u + cutoff).powf(a) };
                (head - tail) / (beta - 1.0)
            }
        }
    }

    pub(crate) fn antiderivative_dbeta_unchecked(&self, u: f64, beta: f64) -> f64 {
        match *self {
            KernelFamily::Exponential => {
                if u.is_infinite() {
                    -1.0 / (beta * beta)
                } else {
                    let x = beta * u;
                    ((-x).exp() * (1.0 + x) - 1.0) / (beta * beta)
                }
            }
            KernelFamily::PowerLaw { cutoff } => {
                // Phi = (c^a - (u+c)^a) / (beta - 1) with a = 1 - beta.
                let a = 1.0 - beta;
                let b1 = beta - 1.0;
                let head = cutoff.powf(a);
                let (tail, tail_log) = if u.is_infinite() {
                    (0.0, 0.0)
                } else {
                    let x = u + cutoff;
                    let p = x.powf(a);
                    (p, x.ln() * p)
                };
                let numer_d = -cutoff.ln() * head + tail_log;
                numer_d / b1 - (head - tail) / (b1 * b1)
            }
        }
    }

    /// Inverse of the truncated CDF `u -> Phi(u) / Phi(window)` at `p in [0, 1)`.
    pub(crate) fn truncated_inverse_cdf(&self, p: f64, beta: f64, window: f64) -> f64 {
        match *self {
            KernelFamily::Exponential => {
                // mass fraction of [0, window] relative to [0, inf)
                let frac = if window.is_infinite() {
                    1.0
                } else {
                    -(-beta * window).exp_m1()
                };
                -(-p * frac).ln_1p() / beta
            }
            KernelFamily::PowerLaw { cutoff } => {
                let a = 1.0 - beta;
                let head = cutoff.powf(a);
                let tail = if window.is_infinite() {
                    0.0
                } else {
                    (window + cutoff).powf(a)
                };
                let target = head - p * (head - tail);
                (target.powf(1.0 / a) - cutoff).max(0.0)
            }
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("kernel time argument must be >= 0, got {t}")))
    }
}

/// Kernel configuration: number of event types and the base kernel list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    dim: usize,
    kernels: Vec<KernelFamily>,
}

impl ModelSpec {
    pub fn new(dim: usize, kernels: Vec<KernelFamily>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("number of event types K must be >= 1".into()));
        }
        if kernels.is_empty() {
            return Err(Error::Config("at least one base kernel is required".into()));
        }
        for k in &kernels {
            if let KernelFamily::PowerLaw { cutoff } = *k {
                KernelFamily::power_law(cutoff)?;
            }
        }
        Ok(Self { dim, kernels })
    }

    /// Number of event types `K`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of base kernels `M`.
    pub fn num_kernels(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[KernelFamily] {
        &self.kernels
    }

    pub fn index_map(&self) -> FlatIndexMap {
        FlatIndexMap::new(self.dim, self.kernels.len())
    }
}

/// Offsets of each parameter block inside the flat coordinate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatIndexMap {
    pub dim: usize,
    pub num_kernels: usize,
}

impl FlatIndexMap {
    pub fn new(dim: usize, num_kernels: usize) -> Self {
        Self { dim, num_kernels }
    }

    /// Total dimension `P = K + M K^2 + M`.
    pub fn len(&self) -> usize {
        self.dim + self.num_alpha() + self.num_kernels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_alpha(&self) -> usize {
        self.num_kernels * self.dim * self.dim
    }

    pub fn mu(&self) -> Range<usize> {
        0..self.dim
    }

    pub fn alpha(&self) -> Range<usize> {
        self.dim..self.dim + self.num_alpha()
    }

    /// The jointly-updated `(mu, alpha)` block.
    pub fn mu_alpha(&self) -> Range<usize> {
        0..self.dim + self.num_alpha()
    }

    pub fn beta(&self) -> Range<usize> {
        self.dim + self.num_alpha()..self.len()
    }

    /// Position of `alpha[m][i][j]` within the alpha block.
    #[inline]
    pub fn alpha_offset(&self, m: usize, i: usize, j: usize) -> usize {
        (m * self.dim + i) * self.dim + j
    }

    pub fn pack(&self, params: &ParamVector) -> Result<Vec<f64>> {
        params.check_shape(self)?;
        let mut flat = Vec::with_capacity(self.len());
        flat.extend_from_slice(&params.mu);
        flat.extend_from_slice(&params.alpha);
        flat.extend_from_slice(&params.beta);
        Ok(flat)
    }

    pub fn unpack(&self, flat: &[f64]) -> Result<ParamVector> {
        if flat.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: flat.len(),
            });
        }
        Ok(ParamVector {
            mu: flat[self.mu()].to_vec(),
            alpha: flat[self.alpha()].to_vec(),
            beta: flat[self.beta()].to_vec(),
            dim: self.dim,
        })
    }
}

/// Full parameter `theta = (mu, alpha, beta)`.
///
/// `alpha` is stored flat in `(m, i, j)` row-major order; `alpha[m][i][j]` is
/// the weight with which a type-`j` event excites type `i` through kernel `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ParamVector {
    mu: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    dim: usize,
}

impl ParamVector {
    /// Builds from a flat `(m, i, j)`-ordered alpha array.
    pub fn new(mu: Vec<f64>, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let dim = mu.len();
        let m = beta.len();
        if dim == 0 || m == 0 {
            return Err(Error::Config("mu and beta must be nonempty".into()));
        }
        if alpha.len() != m * dim * dim {
            return Err(Error::Dimension {
                expected: m * dim * dim,
                got: alpha.len(),
            });
        }
        Ok(Self { mu, alpha, beta, dim })
    }

    /// Builds from nested `alpha[m][i][j]`.
    pub fn from_nested(mu: Vec<f64>, alpha: Vec<Vec<Vec<f64>>>, beta: Vec<f64>) -> Result<Self> {
        let dim = mu.len();
        for (m, block) in alpha.iter().enumerate() {
            if block.len() != dim || block.iter().any(|row| row.len() != dim) {
                return Err(Error::Config(format!(
                    "alpha[{m}] must be a {dim}x{dim} matrix"
                )));
            }
        }
        let flat = alpha.into_iter().flatten().flatten().collect();
        Self::new(mu, flat, beta)
    }

    /// Constant-filled parameter vector.
    pub fn filled(dim: usize, num_kernels: usize, mu: f64, alpha: f64, beta: f64) -> Self {
        Self {
            mu: vec![mu; dim],
            alpha: vec![alpha; num_kernels * dim * dim],
            beta: vec![beta; num_kernels],
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_kernels(&self) -> usize {
        self.beta.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_mut(&mut self) -> &mut [f64] {
        &mut self.mu
    }

    pub fn alpha_flat(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_flat_mut(&mut self) -> &mut [f64] {
        &mut self.alpha
    }

    #[inline]
    pub fn alpha(&self, m: usize, i: usize, j: usize) -> f64 {
        self.alpha[(m * self.dim + i) * self.dim + j]
    }

    pub fn set_alpha(&mut self, m: usize, i: usize, j: usize, value: f64) {
        self.alpha[(m * self.dim + i) * self.dim + j] = value;
    }

    pub fn alpha_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.alpha
            .chunks(self.dim * self.dim)
            .map(|block| block.chunks(self.dim).map(<[f64]>::to_vec).collect())
            .collect()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    pub fn index_map(&self) -> FlatIndexMap {
        FlatIndexMap::new(self.dim, self.beta.len())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.index_map().len());
        flat.extend_from_slice(&self.mu);
        flat.extend_from_slice(&self.alpha);
        flat.extend_from_slice(&self.beta);
        flat
    }

    fn check_shape(&self, map: &FlatIndexMap) -> Result<()> {
        if self.dim != map.dim {
            return Err(Error::Dimension {
                expected: map.dim,
                got: self.dim,
            });
        }
        if self.beta.len() != map.num_kernels {
            return Err(Error::Dimension {
                expected: map.num_kernels,
                got: self.beta.len(),
            });
        }
        Ok(())
    }

    /// Checks shape against `spec`, `mu > 0`, `alpha >= 0` and kernel
    /// admissibility of every `beta_m`.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        self.check_shape(&spec.index_map())?;
        if let Some(x) = self.mu.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("mu entries must be positive, got {x}")));
        }
        if let Some(x) = self.alpha.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("alpha entries must be >= 0, got {x}")));
        }
        for (kernel, &b) in spec.kernels().iter().zip(&self.beta) {
            kernel.check_beta(b)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    mu: Vec<f64>,
    alpha: Vec<Vec<Vec<f64>>>,
    beta: Vec<f64>,
}

impl TryFrom<ParamsRepr> for ParamVector {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        ParamVector::from_nested(r.mu, r.alpha, r.beta)
    }
}

impl From<ParamVector> for ParamsRepr {
    fn from(p: ParamVector) -> Self {
        ParamsRepr {
            alpha: p.alpha_nested(),
            mu: p.mu,
            beta: p.beta,
        }
    }
}

/// Compact box `Theta = A x B`, stored as lower and upper corner parameter
/// vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lower: ParamVector,
    upper: ParamVector,
}

impl BoxDomain {
    pub fn new(spec: &ModelSpec, lower: ParamVector, upper: ParamVector) -> Result<Self> {
        let map = spec.index_map();
        let lo = map.pack(&lower)?;
        let hi = map.pack(&upper)?;
        for (idx, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite()) || l > h {
                return Err(Error::Config(format!(
                    "box bounds at flat index {idx} are invalid: [{l}, {h}]"
                )));
            }
        }
        if let Some(x) = lower.mu().iter().find(|x| **x <= 0.0) {
            return Err(Error::Config(format!("mu lower bound must be > 0, got {x}")));
        }
        if let Some(x) = lower.alpha_flat().iter().find(|x| **x < 0.0) {
            return Err(Error::Config(format!("alpha lower bound must be >= 0, got {x}")));
        }
        for (m, kernel) in spec.kernels().iter().enumerate() {
            let lb = lower.beta()[m];
            match kernel {
                KernelFamily::Exponential if lb <= 0.0 => {
                    return Err(Error::Config(format!(
                        "beta lower bound for exponential kernel {m} must be > 0, got {lb}"
                    )))
                }
                KernelFamily::PowerLaw { .. } if lb < POWER_LAW_MIN_BETA => {
                    return Err(Error::Config(format!(
                        "beta lower bound for power-law kernel {m} must be >= {POWER_LAW_MIN_BETA}, got {lb}"
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &ParamVector {
        &self.lower
    }

    pub fn upper(&self) -> &ParamVector {
        &self.upper
    }

    pub fn lower_flat(&self) -> Vec<f64> {
        self.lower.to_flat()
    }

    pub fn upper_flat(&self) -> Vec<f64> {
        self.upper.to_flat()
    }

    pub fn index_map(&self) -> FlatIndexMap {
        self.lower.index_map()
    }

    /// Componentwise clamp onto the box.
    pub fn project(&self, flat: &[f64]) -> Result<Vec<f64>> {
        let mut out = flat.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    pub fn project_in_place(&self, flat: &mut [f64]) -> Result<()> {
        let map = self.index_map();
        if flat.len() != map.len() {
            return Err(Error::Dimension {
                expected: map.len(),
                got: flat.len(),
            });
        }
        let lo = self.lower_flat();
        let hi = self.upper_flat();
        for ((x, l), h) in flat.iter_mut().zip(&lo).zip(&hi) {
            *x = x.clamp(*l, *h);
        }
        Ok(())
    }

    /// Clamps only the coordinates in `range` (a block of the flat layout).
    pub(crate) fn project_block(&self, flat: &mut [f64], range: Range<usize>) {
        let lo = self.lower_flat();
        let hi = self.upper_flat();
        for idx in range {
            flat[idx] = flat[idx].clamp(lo[idx], hi[idx]);
        }
    }

    pub fn contains(&self, flat: &[f64]) -> bool {
        let lo = self.lower_flat();
        let hi = self.upper_flat();
        flat.len() == lo.len()
            && flat
                .iter()
                .zip(lo.iter().zip(&hi))
                .all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn contains_params(&self, params: &ParamVector) -> bool {
        self.contains(&params.to_flat())
    }
}

/// `G_ij = sum_m alpha[m][i][j] * Phi_m(inf; beta_m)`.
pub fn branching_matrix(spec: &ModelSpec, params: &ParamVector) -> Result<DMatrix<f64>> {
    let k = spec.dim();
    if params.dim() != k || params.num_kernels() != spec.num_kernels() {
        return Err(Error::Dimension {
            expected: spec.index_map().len(),
            got: params.index_map().len(),
        });
    }
    let mut g = DMatrix::zeros(k, k);
    for (m, kernel) in spec.kernels().iter().enumerate() {
        let mass = kernel.total_mass(params.beta()[m])?;
        for i in 0..k {
            for j in 0..k {
                g[(i, j)] += params.alpha(m, i, j) * mass;
            }
        }
    }
    Ok(g)
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Spectral radius of a nonnegative square matrix by power iteration.
///
/// Iterates on `G + I`, which shares the Perron vector of `G` and has
/// dominant eigenvalue `rho(G) + 1`; the shift removes the oscillation of
/// periodic matrices. Stops when the Collatz-Wielandt bracket closes or the
/// estimate stalls.
pub fn spectral_radius(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    assert_eq!(n, g.ncols(), "spectral_radius needs a square matrix");
    if n == 0 || g.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    let shifted = g + DMatrix::identity(n, n);
    let mut x = DVector::from_element(n, 1.0);
    let mut estimate = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let y = &shifted * &x;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (yi, xi) in y.iter().zip(x.iter()) {
            if *xi > 0.0 {
                let r = yi / xi;
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let norm = y.amax();
        let next = norm - 1.0;
        let stalled = (next - estimate).abs() <= POWER_TOL * next.abs().max(1.0);
        estimate = next;
        x = y / norm;
        if hi - lo <= POWER_TOL * hi.max(1.0) {
            return (hi - 1.0).max(0.0);
        }
        if stalled {
            break;
        }
    }
    estimate.max(0.0)
}

/// `lambda_bar = (I - G)^{-1} mu`, the stationary mean intensity.
pub fn stationary_mean_intensity(spec: &ModelSpec, params: &ParamVector) -> Result<Vec<f64>> {
    let g = branching_matrix(spec, params)?;
    let radius = spectral_radius(&g);
    if radius >= 1.0 {
        return Err(Error::NonStationary { radius });
    }
    let k = spec.dim();
    let a = DMatrix::identity(k, k) - g;
    let rhs = DVector::from_column_slice(params.mu());
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvariantViolation("I - G is singular".into()))?;
    Ok(sol.iter().copied().collect())
}
