//! Penalized overdamped (PLD / PSGLD) and underdamped (PHMC / PSGHMC) chains.
//!
//! Overdamped step:
//! `x' = x - η(g(x) + ∇S(x)/δ) + sqrt(2η) ξ`.
//!
//! Underdamped step, with `F = g(x) + ∇S(x)/δ`:
//! `v' = ψ0 v - ψ1 F + sqrt(2γ) ξ`, `x' = x + ψ1 v - ψ2 F + sqrt(2γ) ξ'`,
//! where per coordinate `(ξ, ξ')` is Gaussian with covariance `C(η)`.
//! Whether the gradient is exact or a mini-batch estimate is decided by the
//! [`OracleMode`] in the config.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::geometry::Penalty;
use crate::linalg::norm2;
use crate::potentials::{GradientOracle, OracleMode, Potential};
use crate::quadrature::{integrate, Tolerance};
use crate::rng::{stream, Purpose, StreamRng};

/// Iterates with norm above this abort the chain.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// Allowed relative mismatch between closed-form and quadrature covariance entries.
pub const COVARIANCE_CHECK_TOL: f64 = 1e-10;

/// Below this `γη` the coefficients are evaluated from their Taylor series.
const SERIES_CUTOFF: f64 = 0.5;
const SERIES_TERMS: usize = 30;

/// `η_k = eta0 · decay_factor^⌊k / decay_period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub eta0: f64,
    #[serde(default = "one")]
    pub decay_factor: f64,
    #[serde(default = "one_u64")]
    pub decay_period: u64,
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

impl StepSchedule {
    pub fn new(eta0: f64, decay_factor: f64, decay_period: u64) -> Result<Self> {
        let s = StepSchedule {
            eta0,
            decay_factor,
            decay_period,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(eta: f64) -> Result<Self> {
        StepSchedule::new(eta, 1.0, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !self.eta0.is_finite() {
            return Err(Error::invalid(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_period == 0 {
            return Err(Error::invalid("decay_period must be at least 1"));
        }
        Ok(())
    }

    pub fn eta(&self, k: u64) -> f64 {
        if self.decay_factor == 1.0 {
            return self.eta0;
        }
        let n = i32::try_from(k / self.decay_period).unwrap_or(i32::MAX);
        self.eta0 * self.decay_factor.powi(n)
    }
}

pub fn schedule_eval(schedule: &StepSchedule, k: u64) -> f64 {
    schedule.eta(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorCoeffs {
    pub psi0: f64,
    pub psi1: f64,
    pub psi2: f64,
}

fn check_gamma_eta(gamma: f64, eta: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be finite and positive, got {eta}")));
    }
    Ok(())
}

/// `Σ_{k≥0} c_k (-x)^k` where `c_k` is produced by `coef`.
fn alternating_series(x: f64, coef: impl Fn(usize) -> f64) -> f64 {
    let mut sum = 0.0;
    let mut pow = 1.0;
    for k in 0..SERIES_TERMS {
        sum += coef(k) * pow;
        pow *= -x;
    }
    sum
}

fn inv_factorials() -> [f64; SERIES_TERMS + 4] {
    let mut f = [1.0; SERIES_TERMS + 4];
    for k in 1..f.len() {
        f[k] = f[k - 1] / k as f64;
    }
    f
}

/// `(1 - e^{-x}) / x`.
fn g1(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        let f = inv_factorials();
        alternating_series(x, |k| f[k + 1])
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(x - 1 + e^{-x}) / x^2`.
fn g2(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        let f = inv_factorials();
        alternating_series(x, |k| f[k + 2])
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

/// `ψ0 = e^{-γη}`, `ψ1 = ∫_0^η e^{-γt} dt`, `ψ2 = ∫_0^η ψ1(t) dt`.
pub fn integrator_coeffs(gamma: f64, eta: f64) -> Result<IntegratorCoeffs> {
    check_gamma_eta(gamma, eta)?;
    let x = gamma * eta;
    Ok(IntegratorCoeffs {
        psi0: (-x).exp(),
        psi1: eta * g1(x),
        psi2: eta * eta * g2(x),
    })
}

/// Covariance `C(η)` of the per-coordinate noise pair and its Cholesky factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCovariance {
    pub c11: f64,
    pub c12: f64,
    pub c22: f64,
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl NoiseCovariance {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.c11, self.c12], [self.c12, self.c22]]
    }

    pub fn factor(&self) -> [[f64; 2]; 2] {
        [[self.l11, 0.0], [self.l21, self.l22]]
    }
}

/// Closed-form `C(η)` without the quadrature cross-check.
pub fn closed_form_covariance(gamma: f64, eta: f64) -> Result<NoiseCovariance> {
    check_gamma_eta(gamma, eta)?;
    let x = gamma * eta;
    let (c11, c12, c22) = if x < SERIES_CUTOFF {
        let f = inv_factorials();
        // C11 = η g1(2x); C12 = η² Σ_{k≥1} (2^k - 1)/(k+1)! (-x)^{k-1};
        // C22 = η³ Σ_{k≥2} (2^k - 2)/(k+1)! (-x)^{k-2}
        let c12 = alternating_series(x, |j| {
            let k = j + 1;
            (2f64.powi(k as i32) - 1.0) * f[k + 1]
        });
        let c22 = alternating_series(x, |j| {
            let k = j + 2;
            (2f64.powi(k as i32) - 2.0) * f[k + 1]
        });
        (eta * g1(2.0 * x), eta * eta * c12, eta * eta * eta * c22)
    } else {
        let psi1 = eta * g1(x);
        let c11 = -(-2.0 * x).exp_m1() / (2.0 * gamma);
        let c12 = (psi1 - c11) / gamma;
        let c22 = (eta - 2.0 * psi1 + c11) / (gamma * gamma);
        (c11, c12, c22)
    };
    let l11 = c11.sqrt();
    let l21 = c12 / l11;
    let l22 = (c22 - l21 * l21).max(0.0).sqrt();
    Ok(NoiseCovariance {
        c11,
        c12,
        c22,
        l11,
        l21,
        l22,
    })
}

/// `(C11, C12, C22)` by adaptive quadrature of the defining integrals.
pub fn quadrature_covariance(gamma: f64, eta: f64) -> Result<[f64; 3]> {
    check_gamma_eta(gamma, eta)?;
    let psi0 = move |t: f64| (-gamma * t).exp();
    let psi1 = move |t: f64| {
        if gamma == 0.0 {
            t
        } else {
            -(-gamma * t).exp_m1() / gamma
        }
    };
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-13,
    };
    Ok([
        integrate(|t| psi0(t) * psi0(t), 0.0, eta, tol)?,
        integrate(|t| psi0(t) * psi1(t), 0.0, eta, tol)?,
        integrate(|t| psi1(t) * psi1(t), 0.0, eta, tol)?,
    ])
}

/// `C(η)` from its closed form, cross-checked entry by entry against
/// quadrature.
pub fn noise_covariance(gamma: f64, eta: f64) -> Result<NoiseCovariance> {
    let c = closed_form_covariance(gamma, eta)?;
    let q = quadrature_covariance(gamma, eta)?;
    for (name, closed, quad) in [("C11", c.c11, q[0]), ("C12", c.c12, q[1]), ("C22", c.c22, q[2])] {
        if (closed - quad).abs() > COVARIANCE_CHECK_TOL * quad.abs() {
            return Err(Error::InternalConsistency(format!(
                "{name}(gamma={gamma}, eta={eta}): closed form {closed:e} vs quadrature {quad:e}"
            )));
        }
    }
    Ok(c)
}

/// Which iterates end up in the returned batch. Step `k` is the state after
/// `k` updates; the initial state is never recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recording {
    /// Steps `k <= burn_in` are dropped.
    #[serde(default)]
    pub burn_in: u64,
    /// Keep steps with `(k - burn_in) % thin == 0`.
    #[serde(default = "one_u64")]
    pub thin: u64,
    /// Always keep the final state.
    #[serde(default)]
    pub include_final: bool,
}

impl Default for Recording {
    fn default() -> Self {
        Recording {
            burn_in: 0,
            thin: 1,
            include_final: false,
        }
    }
}

impl Recording {
    pub fn final_only() -> Self {
        Recording {
            burn_in: u64::MAX,
            thin: 1,
            include_final: true,
        }
    }

    fn keeps(&self, k: u64, last: u64) -> bool {
        (self.include_final && k == last) || (k > self.burn_in && (k - self.burn_in) % self.thin == 0)
    }

    fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        Ok(())
    }
}

/// Initial velocity law for the underdamped chains when none is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityInit {
    /// `N(0, I)`.
    #[default]
    Standard,
    /// `N(0, variance · I)`, e.g. `variance = 1/L_δ`.
    Gaussian { variance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub delta: f64,
    pub schedule: StepSchedule,
    pub steps: u64,
    pub seed: u64,
    /// Chain index; selects the randomness streams.
    #[serde(default)]
    pub chain: u64,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub recording: Recording,
    /// Test hook: `false` turns the sampler into (stochastic) gradient descent.
    #[serde(default = "yes")]
    pub noise: bool,
}

fn yes() -> bool {
    true
}

impl LangevinConfig {
    pub fn new(delta: f64, schedule: StepSchedule, steps: u64, seed: u64) -> Self {
        LangevinConfig {
            delta,
            schedule,
            steps,
            seed,
            chain: 0,
            oracle: OracleMode::Full,
            recording: Recording::default(),
            noise: true,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        match self.oracle {
            OracleMode::Full => "PLD",
            OracleMode::MiniBatch { .. } => "PSGLD",
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.delta, &self.schedule, self.steps, &self.recording)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmcConfig {
    pub delta: f64,
    pub gamma: f64,
    pub schedule: StepSchedule,
    pub steps: u64,
    pub seed: u64,
    #[serde(default)]
    pub chain: u64,
    #[serde(default)]
    pub oracle: OracleMode,
    #[serde(default)]
    pub recording: Recording,
    #[serde(default = "yes")]
    pub noise: bool,
    #[serde(default)]
    pub velocity: VelocityInit,
}

impl HmcConfig {
    pub fn new(delta: f64, gamma: f64, schedule: StepSchedule, steps: u64, seed: u64) -> Self {
        HmcConfig {
            delta,
            gamma,
            schedule,
            steps,
            seed,
            chain: 0,
            oracle: OracleMode::Full,
            recording: Recording::default(),
            noise: true,
            velocity: VelocityInit::Standard,
        }
    }

    pub fn algorithm(&self) -> &'static str {
        match self.oracle {
            OracleMode::Full => "PHMC",
            OracleMode::MiniBatch { .. } => "PSGHMC",
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.delta, &self.schedule, self.steps, &self.recording)?;
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let VelocityInit::Gaussian { variance } = self.velocity {
            if !(variance > 0.0) || !variance.is_finite() {
                return Err(Error::invalid(format!("velocity variance must be positive, got {variance}")));
            }
        }
        Ok(())
    }

    /// Draws `v0` from the configured initial velocity law.
    pub fn initial_velocity(&self, dim: usize) -> Vec<f64> {
        let sd = match self.velocity {
            VelocityInit::Standard => 1.0,
            VelocityInit::Gaussian { variance } => variance.sqrt(),
        };
        let mut rng = stream(self.seed, self.chain, Purpose::Initialization);
        (0..dim)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn validate_common(delta: f64, schedule: &StepSchedule, steps: u64, recording: &Recording) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    schedule.validate()?;
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    recording.validate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMetadata {
    pub algorithm: String,
    pub seed: u64,
    pub chain: u64,
}

/// Recorded iterates of one chain, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    dim: usize,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
    steps: Option<Vec<u64>>,
    pub metadata: BatchMetadata,
}

impl SampleBatch {
    /// Builds a batch from rows; every row must have the same finite length.
    pub fn from_rows(rows: &[Vec<f64>], metadata: BatchMetadata) -> Result<Self> {
        let dim = rows
            .first()
            .ok_or_else(|| Error::invalid("a sample batch needs at least one sample"))?
            .len();
        let mut positions = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::invalid("sample rows differ in length"));
            }
            ensure_finite(r, "sample")?;
            positions.extend_from_slice(r);
        }
        Ok(SampleBatch {
            dim,
            positions,
            velocities: None,
            steps: None,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.positions.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim.max(1))
    }

    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        self.velocities
            .as_ref()
            .map(|v| &v[i * self.dim..(i + 1) * self.dim])
    }

    pub fn steps(&self) -> Option<&[u64]> {
        self.steps.as_deref()
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.rows().last()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

struct Recorder {
    dim: usize,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
    steps: Vec<u64>,
}

impl Recorder {
    fn new(dim: usize, with_velocity: bool) -> Self {
        Recorder {
            dim,
            positions: Vec::new(),
            velocities: with_velocity.then(Vec::new),
            steps: Vec::new(),
        }
    }

    fn push(&mut self, k: u64, x: &[f64], v: Option<&[f64]>) {
        self.positions.extend_from_slice(x);
        if let (Some(buf), Some(v)) = (self.velocities.as_mut(), v) {
            buf.extend_from_slice(v);
        }
        self.steps.push(k);
    }

    fn finish(self, metadata: BatchMetadata) -> SampleBatch {
        SampleBatch {
            dim: self.dim,
            positions: self.positions,
            velocities: self.velocities,
            steps: Some(self.steps),
            metadata,
        }
    }
}

fn check_dims(potential: &dyn Potential, penalty: &Penalty, x0: &[f64]) -> Result<usize> {
    let d = potential.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!(
            "initial point has dimension {}, potential has {d}",
            x0.len()
        )));
    }
    if let Some(pd) = penalty.dim() {
        if pd != d {
            return Err(Error::invalid(format!("penalty has dimension {pd}, potential has {d}")));
        }
    }
    ensure_finite(x0, "initial point")?;
    Ok(d)
}

fn check_state(k: u64, x: &[f64]) -> Result<()> {
    let n = norm2(x);
    if !n.is_finite() || n > DIVERGENCE_NORM {
        return Err(Error::Divergence { step: k, norm: n });
    }
    Ok(())
}

/// Total force `g(x) + ∇S(x)/δ`, written into `force`.
fn force(
    oracle: &mut GradientOracle<'_>,
    penalty: &Penalty,
    delta: f64,
    x: &[f64],
    force: &mut [f64],
    penalty_grad: &mut [f64],
) -> Result<()> {
    oracle.gradient(x, force)?;
    penalty.eval_into(x, penalty_grad)?;
    for (f, s) in force.iter_mut().zip(penalty_grad.iter()) {
        *f += s / delta;
    }
    Ok(())
}

/// Runs PLD (full gradients) or PSGLD (mini-batch gradients) from `x0`.
pub fn langevin_run(
    potential: &dyn Potential,
    penalty: &Penalty,
    config: &LangevinConfig,
    x0: &[f64],
) -> Result<SampleBatch> {
    config.validate()?;
    let d = check_dims(potential, penalty, x0)?;
    let mut oracle = GradientOracle::new(
        potential,
        config.oracle,
        stream(config.seed, config.chain, Purpose::MiniBatch),
    )?;
    let mut rng = stream(config.seed, config.chain, Purpose::ChainNoise);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; d];
    let mut sg = vec![0.0; d];
    let mut rec = Recorder::new(d, false);

    for k in 0..config.steps {
        let eta = config.schedule.eta(k);
        force(&mut oracle, penalty, config.delta, &x, &mut f, &mut sg)?;
        let scale = (2.0 * eta).sqrt();
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi -= eta * fi;
            if config.noise {
                *xi += scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        check_state(k + 1, &x)?;
        if config.recording.keeps(k + 1, config.steps) {
            rec.push(k + 1, &x, None);
        }
    }

    Ok(rec.finish(BatchMetadata {
        algorithm: config.algorithm().into(),
        seed: config.seed,
        chain: config.chain,
    }))
}

type CacheEntry = (IntegratorCoeffs, NoiseCovariance);

/// Validated coefficients shared by all chains of the process, keyed by
/// `(γ, η)` bit patterns. Values are pure functions of the key, so sharing
/// never changes results.
static SHARED: OnceLock<Mutex<HashMap<(u64, u64), CacheEntry>>> = OnceLock::new();

/// Coefficients and noise factor per distinct step size.
#[derive(Debug, Default)]
pub struct IntegratorCache {
    gamma: f64,
    entries: HashMap<u64, CacheEntry>,
}

impl IntegratorCache {
    pub fn new(gamma: f64) -> Self {
        IntegratorCache {
            gamma,
            entries: HashMap::new(),
        }
    }

    pub fn get(&mut self, eta: f64) -> Result<CacheEntry> {
        if let Some(e) = self.entries.get(&eta.to_bits()) {
            return Ok(*e);
        }
        let key = (self.gamma.to_bits(), eta.to_bits());
        let shared = SHARED.get_or_init(Default::default);
        let known = shared.lock().map(|m| m.get(&key).copied()).unwrap_or(None);
        let e = match known {
            Some(e) => e,
            None => {
                let e = (integrator_coeffs(self.gamma, eta)?, noise_covariance(self.gamma, eta)?);
                if let Ok(mut m) = shared.lock() {
                    m.insert(key, e);
                }
                e
            }
        };
        self.entries.insert(eta.to_bits(), e);
        Ok(e)
    }
}

/// Runs PHMC (full gradients) or PSGHMC (mini-batch gradients) from `(x0, v0)`.
/// When `v0` is `None` it is drawn from `config.velocity`.
pub fn hmc_run(
    potential: &dyn Potential,
    penalty: &Penalty,
    config: &HmcConfig,
    x0: &[f64],
    v0: Option<&[f64]>,
) -> Result<SampleBatch> {
    config.validate()?;
    let d = check_dims(potential, penalty, x0)?;
    let mut v = match v0 {
        Some(v0) => {
            if v0.len() != d {
                return Err(Error::invalid("initial velocity has the wrong dimension"));
            }
            ensure_finite(v0, "initial velocity")?;
            v0.to_vec()
        }
        None => config.initial_velocity(d),
    };
    let mut oracle = GradientOracle::new(
        potential,
        config.oracle,
        stream(config.seed, config.chain, Purpose::MiniBatch),
    )?;
    let mut rng = stream(config.seed, config.chain, Purpose::ChainNoise);
    let mut cache = IntegratorCache::new(config.gamma);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; d];
    let mut sg = vec![0.0; d];
    let mut rec = Recorder::new(d, true);
    let amp = (2.0 * config.gamma).sqrt();

    for k in 0..config.steps {
        let (c, cov) = cache.get(config.schedule.eta(k))?;
        force(&mut oracle, penalty, config.delta, &x, &mut f, &mut sg)?;
        for i in 0..d {
            let (mut xi, mut xi2) = (0.0, 0.0);
            if config.noise {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                xi = cov.l11 * z1;
                xi2 = cov.l21 * z1 + cov.l22 * z2;
            }
            let vi = v[i];
            v[i] = c.psi0 * vi - c.psi1 * f[i] + amp * xi;
            x[i] += c.psi1 * vi - c.psi2 * f[i] + amp * xi2;
        }
        check_state(k + 1, &x)?;
        if config.recording.keeps(k + 1, config.steps) {
            rec.push(k + 1, &x, Some(&v));
        }
    }

    Ok(rec.finish(BatchMetadata {
        algorithm: config.algorithm().into(),
        seed: config.seed,
        chain: config.chain,
    }))
}

/// Draws `n` noise pairs `(ξ, ξ')` with covariance `C(η)`.
pub fn draw_noise_pairs(cov: &NoiseCovariance, n: usize, rng: &mut StreamRng) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            (cov.l11 * z1, cov.l21 * z1 + cov.l22 * z2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexBody;
    use crate::potentials::{Flat, Gaussian};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedule_examples() {
        let s = StepSchedule::new(1e-4, 0.75, 1000).unwrap();
        assert_eq!(schedule_eval(&s, 0), 1e-4);
        assert_eq!(schedule_eval(&s, 999), 1e-4);
        assert!(close(schedule_eval(&s, 1000), 7.5e-5, 1e-19));
        let c = StepSchedule::constant(0.3).unwrap();
        assert_eq!(c.eta(123_456_789), 0.3);
        assert!(StepSchedule::new(0.1, 1.5, 1).is_err());
        assert!(StepSchedule::new(0.1, 0.5, 0).is_err());
        assert!(StepSchedule::new(0.0, 0.5, 1).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let c = integrator_coeffs(0.0, 0.3).unwrap();
        assert_eq!((c.psi0, c.psi1), (1.0, 0.3));
        assert!(close(c.psi2, 0.045, 1e-18));
        let c = integrator_coeffs(1.0, 1.0).unwrap();
        assert!(close(c.psi0, 0.367879441171442, 1e-14));
        assert!(close(c.psi1, 0.632120558828558, 1e-14));
        assert!(close(c.psi2, 0.367879441171442, 1e-14));
        for g in [1e-6, 0.1, 1.0, 10.0] {
            let c = integrator_coeffs(g, 0.7).unwrap();
            assert!(c.psi1 < 0.7 && c.psi2 < 0.245);
        }
        assert!(integrator_coeffs(-1.0, 1.0).is_err());
        assert!(integrator_coeffs(1.0, 0.0).is_err());
    }

    #[test]
    fn covariance_examples() {
        let c = noise_covariance(0.0, 0.5).unwrap();
        assert!(close(c.c11, 0.5, 1e-16));
        assert!(close(c.c12, 0.125, 1e-16));
        assert!(close(c.c22, 0.125 / 3.0, 1e-16));
        let c = noise_covariance(1.0, 1.0).unwrap();
        assert!(close(c.c11, 0.432332358381694, 1e-14));
        assert!(close(c.c12, 0.199788200446864, 1e-14));
        // closed form (η - 2ψ1 + C11)/γ² at γ = η = 1
        assert!(close(c.c22, 0.168091240724578, 1e-14));
        let f = c.factor();
        assert!(close(f[0][0] * f[0][0], c.c11, 1e-15));
        assert!(close(f[1][0] * f[0][0], c.c12, 1e-15));
        assert!(close(f[1][0] * f[1][0] + f[1][1] * f[1][1], c.c22, 1e-15));
    }

    #[test]
    fn series_and_direct_forms_agree_at_the_cutoff() {
        for gamma in [0.49, 0.4999999, 0.5, 0.5000001, 0.51] {
            let a = closed_form_covariance(gamma, 1.0).unwrap();
            let q = quadrature_covariance(gamma, 1.0).unwrap();
            assert!(close(a.c11, q[0], 1e-14 * q[0]));
            assert!(close(a.c12, q[1], 1e-13 * q[1]));
            assert!(close(a.c22, q[2], 1e-13 * q[2]));
        }
    }

    #[test]
    fn noiseless_langevin_steps() {
        let f = Gaussian::standard(1).unwrap();
        let mut cfg = LangevinConfig::new(1.0, StepSchedule::constant(0.1).unwrap(), 1, 0);
        cfg.noise = false;
        let out = langevin_run(&f, &Penalty::none(), &cfg, &[1.0]).unwrap();
        assert!(close(out.row(0)[0], 0.9, 1e-15));

        let flat = Flat::new(2).unwrap();
        let pen = Penalty::DistanceSquared(ConvexBody::l2_ball(2, 1.0).unwrap());
        let mut cfg = LangevinConfig::new(1.0, StepSchedule::constant(0.25).unwrap(), 1, 0);
        cfg.noise = false;
        let out = langevin_run(&flat, &pen, &cfg, &[2.0, 0.0]).unwrap();
        assert_eq!(out.row(0), &[1.5, 0.0]);
    }

    #[test]
    fn noiseless_hmc_steps() {
        let flat = Flat::new(1).unwrap();
        let mut cfg = HmcConfig::new(1.0, 1.0, StepSchedule::constant(1.0).unwrap(), 1, 0);
        cfg.noise = false;
        let out = hmc_run(&flat, &Penalty::none(), &cfg, &[0.0], Some(&[1.0])).unwrap();
        assert!(close(out.velocity(0).unwrap()[0], 0.367879441171442, 1e-14));
        assert!(close(out.row(0)[0], 0.632120558828558, 1e-14));

        cfg.gamma = 1e-12;
        cfg.schedule = StepSchedule::constant(0.5).unwrap();
        let out = hmc_run(&flat, &Penalty::none(), &cfg, &[1.0], Some(&[2.0])).unwrap();
        assert!(close(out.velocity(0).unwrap()[0], 2.0, 1e-11));
        assert!(close(out.row(0)[0], 2.0, 1e-11));
    }

    #[test]
    fn recording_rules() {
        let f = Gaussian::standard(1).unwrap();
        let mut cfg = LangevinConfig::new(1.0, StepSchedule::constant(0.1).unwrap(), 10, 3);
        cfg.recording = Recording {
            burn_in: 4,
            thin: 3,
            include_final: true,
        };
        let out = langevin_run(&f, &Penalty::none(), &cfg, &[0.0]).unwrap();
        assert_eq!(out.steps().unwrap(), &[7, 10]);
        cfg.recording = Recording::final_only();
        let out = langevin_run(&f, &Penalty::none(), &cfg, &[0.0]).unwrap();
        assert_eq!(out.steps().unwrap(), &[10]);
    }

    #[test]
    fn divergence_reports_step() {
        let f = Gaussian::standard(1).unwrap();
        let mut cfg = LangevinConfig::new(1.0, StepSchedule::constant(3.0).unwrap(), 100, 0);
        cfg.noise = false;
        match langevin_run(&f, &Penalty::none(), &cfg, &[1.0]) {
            Err(Error::Divergence { step, norm }) => {
                // |x_k| = 2^k passes 1e8 at k = 27
                assert_eq!(step, 27);
                assert!(norm > DIVERGENCE_NORM);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let f = Gaussian::standard(2).unwrap();
        let pen = Penalty::DistanceSquared(ConvexBody::l2_ball(2, 1.0).unwrap());
        let cfg = HmcConfig::new(0.1, 1.0, StepSchedule::new(0.05, 0.9, 10).unwrap(), 200, 11);
        let a = hmc_run(&f, &pen, &cfg, &[0.1, 0.2], None).unwrap();
        let b = hmc_run(&f, &pen, &cfg, &[0.1, 0.2], None).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.chain = 1;
        assert_ne!(a, hmc_run(&f, &pen, &other, &[0.1, 0.2], None).unwrap());
    }
}
