//! JSON-configured experiments: the Dirichlet simplex target, ℓ1-constrained
//! Bayesian regression on synthetic or CSV data, and user-specified targets.
//!
//! Every run is independent and seeded from `(seed, run)`, so the output does
//! not depend on the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{dirichlet_draws, fmt_f64, gen_linear, load_csv, Dataset};
use crate::diagnostics::{mse, tv_histogram, MseEvaluator, violation_stats, w2_1d, SampleBatch, ViolationStats};
use crate::error::{Error, Result};
use crate::geometry::{BodySpec, ConvexBody, Penalty, PenaltySpec};
use crate::linalg::{norm1, norm2};
use crate::potentials::{Dirichlet, Flat, Gaussian, LeastSquares, OracleMode, Potential};
use crate::rng::{stream, Purpose};
use crate::samplers::{
    hmc_run, langevin_run, BatchMetadata, HmcConfig, LangevinConfig, Recording, StepSchedule, VelocityInit,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides the configured seed when set.
pub const SEED_ENV: &str = "PENALIZED_SAMPLER_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Pld,
    Phmc,
    Psgld,
    Psghmc,
}

impl SamplerKind {
    fn is_underdamped(self) -> bool {
        matches!(self, SamplerKind::Phmc | SamplerKind::Psghmc)
    }

    fn is_stochastic(self) -> bool {
        matches!(self, SamplerKind::Psgld | SamplerKind::Psghmc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub algorithm: SamplerKind,
    pub delta: f64,
    /// Friction; required for the underdamped samplers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub schedule: StepSchedule,
    pub steps: u64,
    /// Mini-batch size; required for the stochastic-gradient samplers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub penalty: PenaltySpec,
    #[serde(default)]
    pub velocity: VelocityInit,
    /// Steps discarded before samples are retained; defaults to half the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Gaussian { mean: Vec<f64>, precision: f64 },
    Flat { dim: usize },
    Dirichlet { alpha: Vec<f64> },
    LeastSquares { csv: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    /// `Dirichlet(alpha)` on the simplex; each run is `n_samples` chains
    /// started from the uniform prior, each contributing its final state.
    Dirichlet {
        alpha: Vec<f64>,
        /// Reference draws per run for the distance diagnostics.
        reference_draws: usize,
        /// Intermediate steps at which distances are tracked.
        #[serde(default = "default_checkpoints")]
        checkpoints: u64,
    },
    /// Least squares on generated data, constrained to an ℓ1 ball.
    LinregSynthetic {
        x_star: Vec<f64>,
        n_rows: usize,
        noise_var: f64,
        radius: f64,
        #[serde(default)]
        data_seed: u64,
    },
    /// Least squares on CSV data, constrained to the ℓ1 ball of radius
    /// `shrinkage · |x_OLS|_1`.
    LinregCsv {
        path: PathBuf,
        shrinkage: f64,
        #[serde(default = "yes")]
        standardize: bool,
        /// Multiply `eta0` by `shrinkage · |x_OLS|_2`.
        #[serde(default = "yes")]
        scale_eta: bool,
    },
    Custom {
        potential: PotentialSpec,
        body: BodySpec,
        x0: Vec<f64>,
    },
}

fn default_checkpoints() -> u64 {
    20
}

fn yes() -> bool {
    true
}

fn default_runs() -> usize {
    50
}

impl ExperimentSpec {
    pub fn tag(&self) -> &'static str {
        match self {
            ExperimentSpec::Dirichlet { .. } => "dirichlet",
            ExperimentSpec::LinregSynthetic { .. } => "linreg-synthetic",
            ExperimentSpec::LinregCsv { .. } => "linreg-csv",
            ExperimentSpec::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentSpec,
    pub sampler: SamplerSpec,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    /// Samples retained per run.
    pub n_samples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn schema_err(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Schema(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    /// Parses and validates a config; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema_err(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExperimentConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema_err(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.n_runs == 0 {
            return Err(schema_err("n_runs", "must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(schema_err("n_samples", "must be at least 1"));
        }
        let s = &self.sampler;
        if !(s.delta > 0.0) || !s.delta.is_finite() {
            return Err(schema_err("sampler.delta", "must be positive"));
        }
        s.schedule.validate().map_err(|e| schema_err("sampler.schedule", e))?;
        if s.steps == 0 {
            return Err(schema_err("sampler.steps", "must be at least 1"));
        }
        match (s.algorithm.is_underdamped(), s.gamma) {
            (true, None) => return Err(schema_err("sampler.gamma", "required for phmc and psghmc")),
            (true, Some(g)) if !(g > 0.0) || !g.is_finite() => {
                return Err(schema_err("sampler.gamma", "must be positive"))
            }
            (false, Some(_)) => return Err(schema_err("sampler.gamma", "only used by phmc and psghmc")),
            _ => {}
        }
        match (s.algorithm.is_stochastic(), s.batch_size) {
            (true, None) => return Err(schema_err("sampler.batch_size", "required for psgld and psghmc")),
            (true, Some(0)) => return Err(schema_err("sampler.batch_size", "must be at least 1")),
            (false, Some(_)) => return Err(schema_err("sampler.batch_size", "only used by psgld and psghmc")),
            _ => {}
        }
        if let Some(b) = s.burn_in {
            if b >= s.steps {
                return Err(schema_err("sampler.burn_in", "must be smaller than steps"));
            }
        }
        match &self.experiment {
            ExperimentSpec::Dirichlet {
                alpha,
                reference_draws,
                checkpoints,
            } => {
                if alpha.len() < 2 || alpha.iter().any(|&a| !(a > 0.0)) {
                    return Err(schema_err("experiment.alpha", "need at least two positive entries"));
                }
                if *reference_draws == 0 {
                    return Err(schema_err("experiment.reference_draws", "must be at least 1"));
                }
                if *checkpoints == 0 {
                    return Err(schema_err("experiment.checkpoints", "must be at least 1"));
                }
                if s.algorithm.is_stochastic() {
                    return Err(schema_err("sampler.algorithm", "the Dirichlet target is not a finite sum"));
                }
            }
            ExperimentSpec::LinregSynthetic {
                x_star,
                n_rows,
                noise_var,
                radius,
                ..
            } => {
                if x_star.is_empty() {
                    return Err(schema_err("experiment.x_star", "must not be empty"));
                }
                if *n_rows == 0 {
                    return Err(schema_err("experiment.n_rows", "must be at least 1"));
                }
                if !(*noise_var >= 0.0) {
                    return Err(schema_err("experiment.noise_var", "must be non-negative"));
                }
                if !(*radius > 0.0) {
                    return Err(schema_err("experiment.radius", "must be positive"));
                }
            }
            ExperimentSpec::LinregCsv { shrinkage, .. } => {
                if !(*shrinkage > 0.0) || !shrinkage.is_finite() {
                    return Err(schema_err("experiment.shrinkage", "must be positive"));
                }
            }
            ExperimentSpec::Custom { x0, body, .. } => {
                if x0.is_empty() {
                    return Err(schema_err("experiment.x0", "must not be empty"));
                }
                ConvexBody::try_from(body.clone()).map_err(|e| schema_err("experiment.body", e))?;
                if s.algorithm.is_stochastic() && !matches!(self.experiment, ExperimentSpec::Custom { potential: PotentialSpec::LeastSquares { .. }, .. }) {
                    return Err(schema_err("sampler.algorithm", "mini-batch samplers need a least_squares potential"));
                }
            }
        }
        Ok(())
    }

    /// Built-in configurations named after the experiments they reproduce.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |experiment, sampler| ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            experiment,
            sampler,
            n_runs: 50,
            n_samples: 1000,
            seed: 0,
            output_dir: None,
        };
        let dirichlet = ExperimentSpec::Dirichlet {
            alpha: vec![1.0, 2.0, 2.0],
            reference_draws: 1000,
            checkpoints: 20,
        };
        let synthetic = ExperimentSpec::LinregSynthetic {
            x_star: vec![1.0, 1.0],
            n_rows: 10_000,
            noise_var: 0.25,
            radius: 1.0,
            data_seed: 0,
        };
        Ok(match name {
            "dirichlet" | "dirichlet-pld" => base(
                dirichlet,
                SamplerSpec {
                    algorithm: SamplerKind::Pld,
                    delta: 0.005,
                    gamma: None,
                    schedule: StepSchedule::new(1e-4, 0.75, 1000)?,
                    steps: 10_000,
                    batch_size: None,
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            "dirichlet-phmc" => base(
                dirichlet,
                SamplerSpec {
                    algorithm: SamplerKind::Phmc,
                    delta: 0.01,
                    gamma: Some(0.6),
                    schedule: StepSchedule::new(0.0012, 0.9, 200)?,
                    steps: 3_000,
                    batch_size: None,
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            "linreg-synthetic" | "linreg-synthetic-psgld" => base(
                synthetic,
                SamplerSpec {
                    algorithm: SamplerKind::Psgld,
                    delta: 0.001,
                    gamma: None,
                    schedule: StepSchedule::new(1e-5, 0.85, 5000)?,
                    steps: 50_000,
                    batch_size: Some(50),
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            "linreg-synthetic-psghmc" => base(
                synthetic,
                SamplerSpec {
                    algorithm: SamplerKind::Psghmc,
                    delta: 0.001,
                    gamma: Some(0.1),
                    schedule: StepSchedule::new(1e-4, 0.85, 5000)?,
                    steps: 50_000,
                    batch_size: Some(50),
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            "linreg-csv" | "linreg-csv-psgld" => base(
                ExperimentSpec::LinregCsv {
                    path: PathBuf::from("data.csv"),
                    shrinkage: 0.5,
                    standardize: true,
                    scale_eta: true,
                },
                SamplerSpec {
                    algorithm: SamplerKind::Psgld,
                    delta: 0.05,
                    gamma: None,
                    schedule: StepSchedule::constant(1e-5)?,
                    steps: 20_000,
                    batch_size: Some(50),
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            "linreg-csv-psghmc" => base(
                ExperimentSpec::LinregCsv {
                    path: PathBuf::from("data.csv"),
                    shrinkage: 0.5,
                    standardize: true,
                    scale_eta: true,
                },
                SamplerSpec {
                    algorithm: SamplerKind::Psghmc,
                    delta: 0.05,
                    gamma: Some(0.6),
                    schedule: StepSchedule::constant(1e-5)?,
                    steps: 20_000,
                    batch_size: Some(50),
                    penalty: PenaltySpec::DistanceSquared,
                    velocity: VelocityInit::Standard,
                    burn_in: None,
                },
            ),
            other => return Err(Error::invalid(format!("unknown experiment preset {other}"))),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker thread cap; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Output directory; falls back to the config's, then `./out`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    /// Mean over runs of the per-coordinate W2 against reference draws.
    pub w2: Vec<f64>,
    pub w2_max_run: Vec<f64>,
    /// Mean over runs of the per-coordinate histogram TV.
    pub tv: Vec<f64>,
    pub reference_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub n_rows: usize,
    pub radius: f64,
    pub x_ols: Vec<f64>,
    /// Constrained least-squares minimizer (projected gradient).
    pub x_map: Vec<f64>,
    pub mse_ols: f64,
    pub mse_map: f64,
    /// Run-averaged MSE of the final iterate.
    pub mse_final: f64,
    /// `|x_last|_1 / |x_OLS|_1` per run.
    pub norm_ratio: Vec<f64>,
    pub norm_ratio_max: f64,
    pub standardized: bool,
    pub eta0_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub experiment: String,
    pub algorithm: String,
    pub seed: u64,
    pub n_runs: usize,
    pub n_samples: usize,
    pub dim: usize,
    /// Mean of all retained samples.
    pub mean: Vec<f64>,
    /// For the simplex target: the mean including the implied last coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_full: Option<Vec<f64>>,
    pub violations: ViolationStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<DistanceSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSummary>,
    pub wall_time_seconds: f64,
    /// Git blob-style SHA-256 of every written file except this one.
    pub content_hash: Vec<FileHash>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub file: String,
    pub sha256: String,
}

/// SHA-256 of `"blob <len>\0" + content`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Samples of one run plus whatever the experiment tracks along the way.
struct RunOutput {
    steps: Vec<u64>,
    samples: Vec<Vec<f64>>,
    last: Vec<f64>,
    /// `(step, value)` curve points, e.g. per-step MSE.
    curve: Vec<(u64, Vec<f64>)>,
    w2: Vec<f64>,
    tv: Vec<f64>,
}

/// The chain-level ingredients of an experiment.
struct Problem {
    potential: Box<dyn Potential>,
    body: ConvexBody,
    penalty: Penalty,
    x0: Vec<f64>,
    data: Option<Dataset>,
    eta_scale: f64,
    standardized: bool,
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let penalty_for = |body: &ConvexBody| Penalty::from_spec(cfg.sampler.penalty.clone(), body);
    match &cfg.experiment {
        ExperimentSpec::Dirichlet { alpha, .. } => {
            let potential = Dirichlet::new(alpha.clone())?;
            let body = ConvexBody::simplex(alpha.len() - 1)?;
            Ok(Problem {
                penalty: penalty_for(&body)?,
                x0: vec![0.0; alpha.len() - 1],
                potential: Box::new(potential),
                body,
                data: None,
                eta_scale: 1.0,
                standardized: false,
            })
        }
        ExperimentSpec::LinregSynthetic {
            x_star,
            n_rows,
            noise_var,
            radius,
            data_seed,
        } => {
            let data = gen_linear(*n_rows, x_star, *noise_var, *data_seed)?;
            let body = ConvexBody::lp_ball(x_star.len(), 1.0, *radius)?;
            Ok(Problem {
                potential: Box::new(LeastSquares::from_dataset(&data)?),
                penalty: penalty_for(&body)?,
                x0: vec![0.0; x_star.len()],
                body,
                data: Some(data),
                eta_scale: 1.0,
                standardized: false,
            })
        }
        ExperimentSpec::LinregCsv {
            path,
            shrinkage,
            standardize,
            scale_eta,
        } => {
            let raw = load_csv(path)?;
            if raw.is_empty() {
                return Err(Error::invalid(format!("{} has no rows", path.display())));
            }
            let data = if *standardize { raw.standardize(true)? } else { raw };
            let ols = data.ols()?;
            let radius = shrinkage * norm1(&ols);
            let body = ConvexBody::lp_ball(data.dim(), 1.0, radius)?;
            Ok(Problem {
                potential: Box::new(LeastSquares::from_dataset(&data)?),
                penalty: penalty_for(&body)?,
                x0: vec![0.0; data.dim()],
                body,
                eta_scale: if *scale_eta { shrinkage * norm2(&ols) } else { 1.0 },
                data: Some(data),
                standardized: *standardize,
            })
        }
        ExperimentSpec::Custom { potential, body, x0 } => {
            let body = ConvexBody::try_from(body.clone())?;
            let (potential, data): (Box<dyn Potential>, Option<Dataset>) = match potential {
                PotentialSpec::Gaussian { mean, precision } => {
                    (Box::new(Gaussian::new(mean.clone(), *precision)?), None)
                }
                PotentialSpec::Flat { dim } => (Box::new(Flat::new(*dim)?), None),
                PotentialSpec::Dirichlet { alpha } => (Box::new(Dirichlet::new(alpha.clone())?), None),
                PotentialSpec::LeastSquares { csv } => {
                    let data = load_csv(csv)?;
                    (Box::new(LeastSquares::from_dataset(&data)?), Some(data))
                }
            };
            if potential.dim() != body.dim() || x0.len() != body.dim() {
                return Err(schema_err("experiment", "potential, body and x0 dimensions differ"));
            }
            Ok(Problem {
                penalty: penalty_for(&body)?,
                potential,
                body,
                x0: x0.clone(),
                data,
                eta_scale: 1.0,
                standardized: false,
            })
        }
    }
}

/// Either chain type, with the initial velocity supplied explicitly.
fn run_chain(
    cfg: &ExperimentConfig,
    problem: &Problem,
    chain: u64,
    seed: u64,
    recording: Recording,
    x0: &[f64],
    v0: Option<&[f64]>,
) -> Result<SampleBatch> {
    let s = &cfg.sampler;
    let mut schedule = s.schedule;
    schedule.eta0 *= problem.eta_scale;
    let oracle = match s.batch_size {
        Some(b) => OracleMode::MiniBatch { batch_size: b },
        None => OracleMode::Full,
    };
    if s.algorithm.is_underdamped() {
        let mut c = HmcConfig::new(s.delta, s.gamma.unwrap_or(1.0), schedule, s.steps, seed);
        c.chain = chain;
        c.oracle = oracle;
        c.recording = recording;
        c.velocity = s.velocity;
        let v0 = match v0 {
            Some(v) => v.to_vec(),
            None => c.initial_velocity(x0.len()),
        };
        hmc_run(problem.potential.as_ref(), &problem.penalty, &c, x0, Some(&v0))
    } else {
        let mut c = LangevinConfig::new(s.delta, schedule, s.steps, seed);
        c.chain = chain;
        c.oracle = oracle;
        c.recording = recording;
        langevin_run(problem.potential.as_ref(), &problem.penalty, &c, x0)
    }
}

fn velocity_draw(spec: VelocityInit, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let sd = match spec {
        VelocityInit::Standard => 1.0,
        VelocityInit::Gaussian { variance } => variance.sqrt(),
    };
    (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dirichlet_run(cfg: &ExperimentConfig, problem: &Problem, run: usize, seed: u64) -> Result<RunOutput> {
    let ExperimentSpec::Dirichlet {
        alpha,
        reference_draws,
        checkpoints,
    } = &cfg.experiment
    else {
        unreachable!()
    };
    let k = alpha.len();
    let d = k - 1;
    let steps = cfg.sampler.steps;
    let every = (steps / checkpoints).max(1);
    let recording = Recording {
        burn_in: 0,
        thin: every,
        include_final: true,
    };
    let n = cfg.n_samples;
    let batches: Vec<Result<SampleBatch>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let chain = (run * n + i) as u64;
            let mut rng = stream(seed, chain, Purpose::Initialization);
            let start = dirichlet_draws(&vec![1.0; k], 1, &mut rng)?.remove(0);
            let v0 = velocity_draw(cfg.sampler.velocity, d, &mut rng);
            run_chain(cfg, problem, chain, seed, recording, &start[..d], Some(&v0))
        })
        .collect();
    let batches: Vec<SampleBatch> = batches.into_iter().collect::<Result<_>>()?;
    let reference = dirichlet_draws(alpha, *reference_draws, &mut stream(seed, run as u64, Purpose::Reference))?;
    let full = |x: &[f64]| {
        let mut v = x.to_vec();
        v.push(1.0 - x.iter().sum::<f64>());
        v
    };
    let ref_coords: Vec<Vec<f64>> = (0..k).map(|j| reference.iter().map(|r| r[j]).collect()).collect();

    let record_steps: Vec<u64> = batches[0].steps().unwrap_or_default().to_vec();
    let mut curve = Vec::with_capacity(record_steps.len());
    let mut final_w2 = Vec::new();
    let mut final_tv = Vec::new();
    for (idx, &step) in record_steps.iter().enumerate() {
        let states: Vec<Vec<f64>> = batches.iter().map(|b| full(b.row(idx))).collect();
        let mut w2 = Vec::with_capacity(k);
        for (j, rc) in ref_coords.iter().enumerate() {
            let col: Vec<f64> = states.iter().map(|s| s[j]).collect();
            w2.push(w2_1d(&col, rc)?);
            if idx + 1 == record_steps.len() {
                final_tv.push(tv_histogram(&col, rc, None, None)?);
            }
        }
        if idx + 1 == record_steps.len() {
            final_w2 = w2.clone();
        }
        curve.push((step, w2));
    }
    let samples: Vec<Vec<f64>> = batches.iter().map(|b| b.last().unwrap_or_default().to_vec()).collect();
    Ok(RunOutput {
        steps: vec![steps; samples.len()],
        last: samples.last().cloned().unwrap_or_default(),
        samples,
        curve,
        w2: final_w2,
        tv: final_tv,
    })
}

/// Retained-sample positions: the last `n` multiples of `thin` after burn-in.
fn retention(steps: u64, burn_in: u64, n: usize) -> (u64, u64) {
    let span = steps - burn_in;
    let thin = (span / n as u64).max(1);
    let first = steps.saturating_sub(thin * (n as u64 - 1)).max(burn_in + 1);
    (first, thin)
}

fn chain_run(cfg: &ExperimentConfig, problem: &Problem, run: usize, seed: u64) -> Result<RunOutput> {
    let steps = cfg.sampler.steps;
    let burn_in = cfg.sampler.burn_in.unwrap_or(steps / 2);
    let (first, thin) = retention(steps, burn_in, cfg.n_samples);
    let track = problem.data.is_some();
    let recording = if track {
        Recording::default()
    } else {
        Recording {
            burn_in: first - thin,
            thin,
            include_final: true,
        }
    };
    let mut rng = stream(seed, run as u64, Purpose::Initialization);
    let v0 = velocity_draw(cfg.sampler.velocity, problem.x0.len(), &mut rng);
    let batch = run_chain(cfg, problem, run as u64, seed, recording, &problem.x0, Some(&v0))?;
    let all_steps = batch.steps().unwrap_or_default();
    let keep = |k: u64| k >= first && (k - first) % thin == 0;

    let mut samples = Vec::new();
    let mut kept_steps = Vec::new();
    let mut curve = Vec::new();
    let evaluator = problem.data.as_ref().map(MseEvaluator::new).transpose()?;
    for (i, &k) in all_steps.iter().enumerate() {
        let x = batch.row(i);
        if let Some(ev) = &evaluator {
            curve.push((k, vec![ev.eval(x)?]));
        }
        if keep(k) {
            samples.push(x.to_vec());
            kept_steps.push(k);
        }
    }
    Ok(RunOutput {
        steps: kept_steps,
        last: batch.last().unwrap_or_default().to_vec(),
        samples,
        curve,
        w2: Vec::new(),
        tv: Vec::new(),
    })
}

/// Projected gradient descent with step `1/L` for the constrained minimizer.
pub fn projected_gradient(potential: &dyn Potential, body: &ConvexBody, x0: &[f64], max_iter: usize, tol: f64) -> Result<Vec<f64>> {
    let l = potential
        .smoothness()
        .filter(|l| *l > 0.0)
        .ok_or_else(|| Error::invalid("projected gradient needs a positive smoothness constant"))?;
    let mut x = body.project(x0)?;
    let mut g = vec![0.0; x.len()];
    for _ in 0..max_iter {
        potential.gradient(&x, &mut g)?;
        let step: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b / l).collect();
        let next = body.project(&step)?;
        let change = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        if change < tol {
            break;
        }
    }
    Ok(x)
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    fs::write(path, &out)?;
    Ok(out.into_bytes())
}

/// Resolved seed: explicit option, then the environment, then the config.
pub fn effective_seed(cfg: &ExperimentConfig, explicit: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))),
        Err(_) => Ok(cfg.seed),
    }
}

/// Runs every configured run and writes `samples.csv`, `plotdata/*.csv` and
/// `summary.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<Summary> {
    config.validate()?;
    let started = Instant::now();
    let mut cfg = config.clone();
    cfg.seed = effective_seed(config, opts.seed)?;
    let seed = cfg.seed;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let problem = build_problem(&cfg)?;
    let dim = problem.x0.len();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| Error::invalid(e.to_string()))?;
    let results: Vec<Result<RunOutput>> = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|run| match cfg.experiment {
                ExperimentSpec::Dirichlet { .. } => dirichlet_run(&cfg, &problem, run, seed),
                _ => chain_run(&cfg, &problem, run, seed),
            })
            .collect()
    });
    let runs: Vec<RunOutput> = results.into_iter().collect::<Result<_>>()?;

    fs::create_dir_all(out_dir.join("plotdata"))?;
    let mut hashes = Vec::new();
    fn coord_header(prefix: &'static str, n: usize) -> impl Iterator<Item = String> {
        (0..n).map(move |j| format!("{prefix}{j}"))
    }

    let header: Vec<String> = ["run".to_string(), "step".to_string()]
        .into_iter()
        .chain(coord_header("x", dim))
        .collect();
    let bytes = write_csv(
        &out_dir.join("samples.csv"),
        &header,
        runs.iter().enumerate().flat_map(|(r, out)| {
            out.samples.iter().zip(&out.steps).map(move |(x, k)| {
                [r.to_string(), k.to_string()]
                    .into_iter()
                    .chain(x.iter().map(|v| fmt_f64(*v)))
                    .collect()
            })
        }),
    )?;
    hashes.push(FileHash {
        file: "samples.csv".into(),
        sha256: blob_hash(&bytes),
    });

    let all: Vec<&Vec<f64>> = runs.iter().flat_map(|r| r.samples.iter()).collect();
    let total = all.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for x in &all {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let pooled = SampleBatch::from_rows(
        &all.iter().map(|x| x.to_vec()).collect::<Vec<_>>(),
        BatchMetadata {
            algorithm: format!("{:?}", cfg.sampler.algorithm),
            seed,
            chain: 0,
        },
    )?;
    let violations = violation_stats(&problem.body, &pooled)?;

    let mut distances = None;
    let mut mean_full = None;
    let mut regression = None;
    let curve_file = |name: &str, cols: Vec<String>| -> Result<FileHash> {
        // average each curve point over runs
        let n_points = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
        let rows = (0..n_points).map(|i| {
            let step = runs[0].curve[i].0;
            let width = runs[0].curve[i].1.len();
            let avg: Vec<f64> = (0..width)
                .map(|j| runs.iter().map(|r| r.curve[i].1[j]).sum::<f64>() / runs.len() as f64)
                .collect();
            std::iter::once(step.to_string())
                .chain(avg.iter().map(|v| fmt_f64(*v)))
                .collect()
        });
        let header: Vec<String> = std::iter::once("step".to_string()).chain(cols).collect();
        let bytes = write_csv(&out_dir.join("plotdata").join(name), &header, rows)?;
        Ok(FileHash {
            file: format!("plotdata/{name}"),
            sha256: blob_hash(&bytes),
        })
    };

    match &cfg.experiment {
        ExperimentSpec::Dirichlet { reference_draws, .. } => {
            let k = dim + 1;
            let avg = |f: &dyn Fn(&RunOutput) -> &Vec<f64>| -> Vec<f64> {
                (0..k)
                    .map(|j| runs.iter().map(|r| f(r)[j]).sum::<f64>() / runs.len() as f64)
                    .collect()
            };
            distances = Some(DistanceSummary {
                w2: avg(&|r| &r.w2),
                w2_max_run: (0..k)
                    .map(|j| runs.iter().map(|r| r.w2[j]).fold(0.0, f64::max))
                    .collect(),
                tv: avg(&|r| &r.tv),
                reference_draws: *reference_draws,
            });
            let mut mf = mean.clone();
            mf.push(1.0 - mean.iter().sum::<f64>());
            mean_full = Some(mf);
            hashes.push(curve_file("w2_by_step.csv", coord_header("w2_x", k).collect())?);
        }
        ExperimentSpec::LinregSynthetic { .. } | ExperimentSpec::LinregCsv { .. } => {
            let data = problem.data.as_ref().expect("regression experiments carry data");
            let ols = data.ols()?;
            let (_, radius) = problem.body.ball_params().unwrap_or((1.0, f64::NAN));
            let map = projected_gradient(problem.potential.as_ref(), &problem.body, &problem.x0, 100_000, 1e-13)?;
            let ratios: Vec<f64> = runs.iter().map(|r| norm1(&r.last) / norm1(&ols)).collect();
            let mse_final =
                runs.iter().map(|r| mse(&r.last, data)).sum::<Result<f64>>()? / runs.len() as f64;
            hashes.push(curve_file("mse_by_step.csv", vec!["mse".into()])?);
            let bytes = write_csv(
                &out_dir.join("plotdata").join("norm_ratio.csv"),
                &["run".into(), "norm_ratio".into()],
                ratios.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt_f64(*v)]),
            )?;
            hashes.push(FileHash {
                file: "plotdata/norm_ratio.csv".into(),
                sha256: blob_hash(&bytes),
            });
            regression = Some(RegressionSummary {
                n_rows: data.len(),
                radius,
                mse_ols: mse(&ols, data)?,
                mse_map: mse(&map, data)?,
                mse_final,
                norm_ratio_max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                norm_ratio: ratios,
                x_ols: ols,
                x_map: map,
                standardized: problem.standardized,
                eta0_effective: cfg.sampler.schedule.eta0 * problem.eta_scale,
            });
        }
        ExperimentSpec::Custom { .. } => {}
    }

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.tag().into(),
        algorithm: format!("{:?}", cfg.sampler.algorithm).to_uppercase(),
        seed,
        n_runs: cfg.n_runs,
        n_samples: cfg.n_samples,
        dim,
        mean,
        mean_full,
        violations,
        distances,
        regression,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        content_hash: hashes,
        config: cfg,
    };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in [
            "dirichlet",
            "dirichlet-phmc",
            "linreg-synthetic",
            "linreg-synthetic-psghmc",
            "linreg-csv",
            "linreg-csv-psghmc",
        ] {
            let cfg = ExperimentConfig::preset(name).unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(cfg, back, "{name}");
        }
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::preset("dirichlet").unwrap().to_json().unwrap()).unwrap();
        v["sampler"]["schedule"]["bogus"] = 1.into();
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(Error::Schema(msg)) => assert!(msg.starts_with("sampler.schedule"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut v: serde_json::Value =
            serde_json::from_str(&ExperimentConfig::preset("dirichlet-phmc").unwrap().to_json().unwrap()).unwrap();
        v["sampler"].as_object_mut().unwrap().remove("gamma");
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(Error::Schema(msg)) => assert!(msg.starts_with("sampler.gamma"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn retention_positions() {
        assert_eq!(retention(100, 50, 10), (55, 5));
        assert_eq!(retention(10, 5, 100), (6, 1));
        assert_eq!(retention(10, 0, 1), (10, 10));
    }

    #[test]
    fn blob_hash_matches_git() {
        // `git hash-object` semantics with SHA-256 over an empty blob
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
