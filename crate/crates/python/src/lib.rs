//! Python bindings: bodies, potentials, the four samplers, the theory
//! calculators and the distance diagnostics.

use std::cell::RefCell;
use std::path::PathBuf;
use std::sync::Arc;

use penalized_sampler::data;
use penalized_sampler::diagnostics;
use penalized_sampler::experiment::{run_experiment as run_exp, ExperimentConfig, RunOptions};
use penalized_sampler::geometry::{BodySpec, ConvexBody as CoreBody, Penalty};
use penalized_sampler::potentials::{self, OracleMode};
use penalized_sampler::samplers::{self, HmcConfig, LangevinConfig, Recording, StepSchedule};
use penalized_sampler::theory::{self, Algorithm, ConstantsInput, Multipliers, ScheduleInput};
use penalized_sampler::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(penalized_sampler_py, DivergenceError, PyRuntimeError);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(frozen, module = "penalized_sampler_py")]
struct ConvexBody {
    inner: CoreBody,
}

#[pymethods]
impl ConvexBody {
    #[staticmethod]
    fn l2_ball(dim: usize, radius: f64) -> PyResult<Self> {
        Ok(ConvexBody {
            inner: CoreBody::l2_ball(dim, radius).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn lp_ball(dim: usize, p: f64, radius: f64) -> PyResult<Self> {
        Ok(ConvexBody {
            inner: CoreBody::lp_ball(dim, p, radius).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn linf_ball(dim: usize, radius: f64) -> PyResult<Self> {
        Ok(ConvexBody {
            inner: CoreBody::linf_ball(dim, radius).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn simplex(dim: usize) -> PyResult<Self> {
        Ok(ConvexBody {
            inner: CoreBody::simplex(dim).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn polytope(normals: Vec<Vec<f64>>, offsets: Vec<f64>, witness: Vec<f64>) -> PyResult<Self> {
        Ok(ConvexBody {
            inner: CoreBody::polytope(normals, offsets, witness).map_err(to_py)?,
        })
    }

    /// Body from its JSON description, e.g. `{"type": "simplex", "dim": 2}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: BodySpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(ConvexBody {
            inner: CoreBody::try_from(spec).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.inner.spec())
    }

    fn project(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.project(&x).map_err(to_py)
    }

    fn contains(&self, x: Vec<f64>) -> bool {
        self.inner.contains(&x)
    }

    fn distance(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.distance(&x).map_err(to_py)
    }

    /// `(S(x), ∇S(x))` for the distance-squared penalty.
    fn penalty(&self, x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        Penalty::DistanceSquared(self.inner.clone()).eval(&x).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("ConvexBody({})", self.to_json().unwrap_or_default())
    }
}

#[pyclass(frozen, module = "penalized_sampler_py")]
struct Potential {
    inner: Arc<dyn potentials::Potential>,
}

#[pymethods]
impl Potential {
    #[staticmethod]
    fn gaussian(mean: Vec<f64>, precision: f64) -> PyResult<Self> {
        Ok(Potential {
            inner: Arc::new(potentials::Gaussian::new(mean, precision).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn flat(dim: usize) -> PyResult<Self> {
        Ok(Potential {
            inner: Arc::new(potentials::Flat::new(dim).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn dirichlet(alpha: Vec<f64>) -> PyResult<Self> {
        Ok(Potential {
            inner: Arc::new(potentials::Dirichlet::new(alpha).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn least_squares(features: Vec<Vec<f64>>, responses: Vec<f64>) -> PyResult<Self> {
        Ok(Potential {
            inner: Arc::new(potentials::LeastSquares::new(features, responses).map_err(to_py)?),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn smoothness(&self) -> Option<f64> {
        self.inner.smoothness()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&x).map_err(to_py)
    }

    fn gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        self.inner.gradient(&x, &mut g).map_err(to_py)?;
        Ok(g)
    }
}

fn recording(burn_in: u64, thin: u64) -> Recording {
    Recording {
        burn_in,
        thin,
        include_final: false,
    }
}

fn oracle(batch_size: Option<usize>) -> OracleMode {
    batch_size.map_or(OracleMode::Full, |b| OracleMode::MiniBatch { batch_size: b })
}

/// Overdamped chain (PLD, or PSGLD with `batch_size`). Returns the recorded
/// positions as a list of rows.
#[pyfunction]
#[pyo3(signature = (potential, body, x0, delta, eta, steps, seed, decay_factor=1.0, decay_period=1, batch_size=None, burn_in=0, thin=1, chain=0))]
#[allow(clippy::too_many_arguments)]
fn langevin(
    py: Python<'_>,
    potential: &Potential,
    body: &ConvexBody,
    x0: Vec<f64>,
    delta: f64,
    eta: f64,
    steps: u64,
    seed: u64,
    decay_factor: f64,
    decay_period: u64,
    batch_size: Option<usize>,
    burn_in: u64,
    thin: u64,
    chain: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let schedule = StepSchedule::new(eta, decay_factor, decay_period).map_err(to_py)?;
    let mut cfg = LangevinConfig::new(delta, schedule, steps, seed);
    cfg.chain = chain;
    cfg.oracle = oracle(batch_size);
    cfg.recording = recording(burn_in, thin);
    let penalty = Penalty::DistanceSquared(body.inner.clone());
    let pot = potential.inner.clone();
    let batch = py
        .detach(|| samplers::langevin_run(pot.as_ref(), &penalty, &cfg, &x0))
        .map_err(to_py)?;
    Ok(batch.rows().map(|r| r.to_vec()).collect())
}

/// Underdamped chain (PHMC, or PSGHMC with `batch_size`).
#[pyfunction]
#[pyo3(signature = (potential, body, x0, delta, gamma, eta, steps, seed, v0=None, decay_factor=1.0, decay_period=1, batch_size=None, burn_in=0, thin=1, chain=0))]
#[allow(clippy::too_many_arguments)]
fn hmc(
    py: Python<'_>,
    potential: &Potential,
    body: &ConvexBody,
    x0: Vec<f64>,
    delta: f64,
    gamma: f64,
    eta: f64,
    steps: u64,
    seed: u64,
    v0: Option<Vec<f64>>,
    decay_factor: f64,
    decay_period: u64,
    batch_size: Option<usize>,
    burn_in: u64,
    thin: u64,
    chain: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let schedule = StepSchedule::new(eta, decay_factor, decay_period).map_err(to_py)?;
    let mut cfg = HmcConfig::new(delta, gamma, schedule, steps, seed);
    cfg.chain = chain;
    cfg.oracle = oracle(batch_size);
    cfg.recording = recording(burn_in, thin);
    let penalty = Penalty::DistanceSquared(body.inner.clone());
    let pot = potential.inner.clone();
    let batch = py
        .detach(|| samplers::hmc_run(pot.as_ref(), &penalty, &cfg, &x0, v0.as_deref()))
        .map_err(to_py)?;
    Ok(batch.rows().map(|r| r.to_vec()).collect())
}

/// `(ψ0, ψ1, ψ2)`.
#[pyfunction]
fn integrator_coeffs(gamma: f64, eta: f64) -> PyResult<(f64, f64, f64)> {
    let c = samplers::integrator_coeffs(gamma, eta).map_err(to_py)?;
    Ok((c.psi0, c.psi1, c.psi2))
}

/// `(C11, C12, C22)`.
#[pyfunction]
fn noise_covariance(gamma: f64, eta: f64) -> PyResult<(f64, f64, f64)> {
    let c = samplers::noise_covariance(gamma, eta).map_err(to_py)?;
    Ok((c.c11, c.c12, c.c22))
}

#[pyfunction]
#[pyo3(signature = (L, delta, gamma=1.0, grad_f0_norm=0.0, f0=0.0, ell=4.0, m_s=1.0, b_s=0.25, d=1))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn penalized_constants<'py>(
    py: Python<'py>,
    L: f64,
    delta: f64,
    gamma: f64,
    grad_f0_norm: f64,
    f0: f64,
    ell: f64,
    m_s: f64,
    b_s: f64,
    d: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let c = theory::penalized_constants(&ConstantsInput {
        l: L,
        grad_f0_norm,
        f0,
        ell,
        m_s,
        b_s,
        delta,
        gamma,
        d,
    })
    .map_err(to_py)?;
    json_to_py(py, &to_json(&c)?)
}

#[pyfunction]
#[pyo3(signature = (algorithm, epsilon, d=1, L=1.0, mu=1.0, ell=4.0, lambda_star=None, mu_star=None, k_mult=1.0, eta_mult=1.0, batch_mult=1.0))]
#[allow(non_snake_case, clippy::too_many_arguments)]
fn schedule_for<'py>(
    py: Python<'py>,
    algorithm: &str,
    epsilon: f64,
    d: usize,
    L: f64,
    mu: f64,
    ell: f64,
    lambda_star: Option<f64>,
    mu_star: Option<f64>,
    k_mult: f64,
    eta_mult: f64,
    batch_mult: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let plan = theory::schedule_for(&ScheduleInput {
        algorithm: Algorithm::parse(algorithm).map_err(to_py)?,
        epsilon,
        d,
        l: L,
        mu,
        ell,
        lambda_star,
        mu_star,
        multipliers: Multipliers {
            k: k_mult,
            eta: eta_mult,
            batch: batch_mult,
        },
    })
    .map_err(to_py)?;
    json_to_py(py, &to_json(&plan)?)
}

/// `KL(π_δ || π)` for a 1-D potential on `[a, b]`.
#[pyfunction]
fn kl_quadrature(f: Bound<'_, PyAny>, a: f64, b: f64, delta: f64) -> PyResult<f64> {
    let failure = RefCell::new(None);
    let value = theory::kl_quadrature(
        |x| match f.call1((x,)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        delta,
        None,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    value.map_err(to_py)
}

#[pyfunction]
fn w2_1d(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    diagnostics::w2_1d(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (a, b, n_bins=None))]
fn tv_histogram(a: Vec<f64>, b: Vec<f64>, n_bins: Option<usize>) -> PyResult<f64> {
    diagnostics::tv_histogram(&a, &b, n_bins, None).map_err(to_py)
}

#[pyfunction]
fn dirichlet_oracle(alpha: Vec<f64>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    data::dirichlet_oracle(&alpha, n, seed).map_err(to_py)
}

/// Runs a JSON experiment config and returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (config, out_dir, jobs=None, seed=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: PathBuf,
    jobs: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config).map_err(to_py)?;
    let opts = RunOptions {
        jobs,
        out_dir: Some(out_dir),
        seed,
    };
    let summary = py.detach(|| run_exp(&cfg, &opts)).map_err(to_py)?;
    json_to_py(py, &to_json(&summary)?)
}

#[pymodule]
fn penalized_sampler_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add_class::<ConvexBody>()?;
    m.add_class::<Potential>()?;
    m.add_function(wrap_pyfunction!(langevin, m)?)?;
    m.add_function(wrap_pyfunction!(hmc, m)?)?;
    m.add_function(wrap_pyfunction!(integrator_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(noise_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(penalized_constants, m)?)?;
    m.add_function(wrap_pyfunction!(schedule_for, m)?)?;
    m.add_function(wrap_pyfunction!(kl_quadrature, m)?)?;
    m.add_function(wrap_pyfunction!(w2_1d, m)?)?;
    m.add_function(wrap_pyfunction!(tv_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(dirichlet_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
