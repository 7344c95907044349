//! Target potentials `f` (the target is `π ∝ e^{-f}`) and gradient oracles.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, power_iteration};
use crate::rng::StreamRng;

/// Floor applied to simplex coordinates inside the Dirichlet potential.
pub const DIRICHLET_FLOOR: f64 = 1e-10;

/// Power-iteration settings for the least-squares smoothness constant.
pub const POWER_ITERATIONS: usize = 200;
pub const POWER_TOL: f64 = 1e-10;

pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// Writes `∇f(x)` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Declared smoothness constant `L`.
    fn smoothness(&self) -> Option<f64> {
        None
    }
    /// Declared strong-convexity constant `μ`.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }
    fn as_finite_sum(&self) -> Option<&dyn FiniteSum> {
        None
    }
}

/// `f = Σ_j f_j`, the shape required for mini-batch gradients.
pub trait FiniteSum: Potential {
    fn len(&self) -> usize;
    fn component_value(&self, j: usize, x: &[f64]) -> Result<f64>;
    /// Adds `scale · ∇f_j(x)` to `out`.
    fn add_component_gradient(&self, j: usize, x: &[f64], scale: f64, out: &mut [f64]) -> Result<()>;
}

/// `f(x) = (precision/2)||x - mean||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vec<f64>,
    precision: f64,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, precision: f64) -> Result<Self> {
        ensure_finite(&mean, "mean")?;
        if mean.is_empty() {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(precision > 0.0) || !precision.is_finite() {
            return Err(Error::invalid(format!("precision must be positive, got {precision}")));
        }
        Ok(Gaussian { mean, precision })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Gaussian::new(vec![0.0; dim], 1.0)
    }
}

impl Potential for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let sq: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        Ok(0.5 * self.precision * sq)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, &a), &m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = self.precision * (a - m);
        }
        Ok(())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.precision)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.precision)
    }
}

/// `f ≡ 0`: the uniform distribution on the constraint set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flat {
    dim: usize,
}

impl Flat {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(Flat { dim })
    }
}

impl Potential for Flat {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Negative log-density of `Dirichlet(alpha)` in the first `K-1` coordinates.
///
/// Coordinates (and the implied last coordinate `1 - Σx`) are floored at
/// [`DIRICHLET_FLOOR`] before taking logs, so value and gradient stay finite
/// off the simplex; a floored coordinate contributes no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    alpha: Vec<f64>,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::invalid("Dirichlet needs at least two concentration parameters"));
        }
        if alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::invalid("Dirichlet concentrations must be positive and finite"));
        }
        Ok(Dirichlet { alpha })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// With some `alpha_i < 1` the density is unbounded at the boundary and
    /// `f` is not smooth on the simplex.
    pub fn is_smooth_on_support(&self) -> bool {
        self.alpha.iter().all(|&a| a >= 1.0)
    }

    fn last(&self, x: &[f64]) -> f64 {
        1.0 - x.iter().sum::<f64>()
    }
}

impl Potential for Dirichlet {
    fn dim(&self) -> usize {
        self.alpha.len() - 1
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let k = self.alpha.len();
        let mut v = 0.0;
        for (&xi, &a) in x.iter().zip(&self.alpha[..k - 1]) {
            v -= (a - 1.0) * xi.max(DIRICHLET_FLOOR).ln();
        }
        v -= (self.alpha[k - 1] - 1.0) * self.last(x).max(DIRICHLET_FLOOR).ln();
        Ok(v)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.alpha.len();
        let last = self.last(x);
        let tail = if last > DIRICHLET_FLOOR {
            (self.alpha[k - 1] - 1.0) / last
        } else {
            0.0
        };
        for ((o, &xi), &a) in out.iter_mut().zip(x).zip(&self.alpha[..k - 1]) {
            let own = if xi > DIRICHLET_FLOOR { -(a - 1.0) / xi } else { 0.0 };
            *o = own + tail;
        }
        Ok(())
    }
}

/// `f(x) = Σ_j ½(y_j - a_jᵀx)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    features: Vec<Vec<f64>>,
    responses: Vec<f64>,
    gram: Vec<Vec<f64>>,
    moment: Vec<f64>,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(features: Vec<Vec<f64>>, responses: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("least squares needs at least one row"));
        }
        if features.len() != responses.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} responses",
                features.len(),
                responses.len()
            )));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        for (j, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {j} has {} features, expected {d}",
                    row.len()
                )));
            }
            ensure_finite(row, "features")?;
        }
        ensure_finite(&responses, "responses")?;
        let mut gram = vec![vec![0.0; d]; d];
        let mut moment = vec![0.0; d];
        for (row, &y) in features.iter().zip(&responses) {
            for i in 0..d {
                moment[i] += row[i] * y;
                for k in 0..d {
                    gram[i][k] += row[i] * row[k];
                }
            }
        }
        let lipschitz = power_iteration(&gram, POWER_ITERATIONS, POWER_TOL);
        Ok(LeastSquares {
            features,
            responses,
            gram,
            moment,
            lipschitz,
        })
    }

    pub fn from_dataset(data: &crate::data::Dataset) -> Result<Self> {
        LeastSquares::new(data.features().to_vec(), data.responses().to_vec())
    }

    /// `Σ_j a_j a_jᵀ`.
    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }
}

impl Potential for LeastSquares {
    fn dim(&self) -> usize {
        self.moment.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .features
            .iter()
            .zip(&self.responses)
            .map(|(a, y)| {
                let r = y - dot(a, x);
                0.5 * r * r
            })
            .sum())
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, row), m) in out.iter_mut().zip(&self.gram).zip(&self.moment) {
            *o = dot(row, x) - m;
        }
        Ok(())
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn as_finite_sum(&self) -> Option<&dyn FiniteSum> {
        Some(self)
    }
}

impl FiniteSum for LeastSquares {
    fn len(&self) -> usize {
        self.responses.len()
    }

    fn component_value(&self, j: usize, x: &[f64]) -> Result<f64> {
        let r = self.responses[j] - dot(&self.features[j], x);
        Ok(0.5 * r * r)
    }

    fn add_component_gradient(&self, j: usize, x: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let a = &self.features[j];
        let r = self.responses[j] - dot(a, x);
        for (o, &ai) in out.iter_mut().zip(a) {
            *o -= scale * r * ai;
        }
        Ok(())
    }
}

/// Sum of arbitrary component potentials.
#[derive(Debug, Clone)]
pub struct ComponentSum {
    components: Vec<Arc<dyn Potential>>,
}

impl ComponentSum {
    pub fn new(components: Vec<Arc<dyn Potential>>) -> Result<Self> {
        let d = components
            .first()
            .ok_or_else(|| Error::invalid("a finite sum needs at least one component"))?
            .dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::invalid("all components must share one dimension"));
        }
        Ok(ComponentSum { components })
    }
}

impl Potential for ComponentSum {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.components.iter().map(|c| c.value(x)).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.components.len() {
            self.add_component_gradient(j, x, 1.0, out)?;
        }
        Ok(())
    }

    fn smoothness(&self) -> Option<f64> {
        self.components.iter().map(|c| c.smoothness()).sum()
    }

    fn as_finite_sum(&self) -> Option<&dyn FiniteSum> {
        Some(self)
    }
}

impl FiniteSum for ComponentSum {
    fn len(&self) -> usize {
        self.components.len()
    }

    fn component_value(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.components[j].value(x)
    }

    fn add_component_gradient(&self, j: usize, x: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        let mut g = vec![0.0; out.len()];
        self.components[j].gradient(x, &mut g)?;
        for (o, gi) in out.iter_mut().zip(g) {
            *o += scale * gi;
        }
        Ok(())
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Potential defined by a pair of closures.
pub struct ClosurePotential {
    dim: usize,
    value: Box<ValueFn>,
    gradient: Box<GradFn>,
    smoothness: Option<f64>,
}

impl ClosurePotential {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        ClosurePotential {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
            smoothness: None,
        }
    }

    pub fn with_smoothness(mut self, l: f64) -> Self {
        self.smoothness = Some(l);
        self
    }
}

impl fmt::Debug for ClosurePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosurePotential").field("dim", &self.dim).finish()
    }
}

impl Potential for ClosurePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.value)(x))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.gradient)(x, out);
        Ok(())
    }

    fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }
}

/// How gradients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleMode {
    /// Exact `∇f`.
    #[default]
    Full,
    /// `(n/b) Σ_{j∈Ω} ∇f_j` over a batch `Ω` of `b` distinct indices, redrawn every call.
    MiniBatch { batch_size: usize },
}

/// Gradient oracle owning a private randomness stream; one per chain.
pub struct GradientOracle<'a> {
    potential: &'a dyn Potential,
    sum: Option<&'a dyn FiniteSum>,
    batch_size: usize,
    rng: StreamRng,
    indices: Vec<usize>,
}

impl<'a> GradientOracle<'a> {
    pub fn new(potential: &'a dyn Potential, mode: OracleMode, rng: StreamRng) -> Result<Self> {
        match mode {
            OracleMode::Full => Ok(GradientOracle {
                potential,
                sum: None,
                batch_size: 0,
                rng,
                indices: Vec::new(),
            }),
            OracleMode::MiniBatch { batch_size } => {
                let sum = potential.as_finite_sum().ok_or_else(|| {
                    Error::invalid("mini-batch gradients need a finite-sum potential")
                })?;
                let n = sum.len();
                if batch_size == 0 || batch_size > n {
                    return Err(Error::invalid(format!(
                        "batch size {batch_size} must lie in 1..={n}"
                    )));
                }
                // b = n is the exact gradient
                let sum = (batch_size < n).then_some(sum);
                Ok(GradientOracle {
                    potential,
                    sum,
                    batch_size,
                    rng,
                    indices: (0..n).collect(),
                })
            }
        }
    }

    pub fn is_stochastic(&self) -> bool {
        self.sum.is_some()
    }

    pub fn gradient(&mut self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self.sum {
            None => self.potential.gradient(x, out),
            Some(sum) => {
                let b = self.batch_size;
                let scale = self.indices.len() as f64 / b as f64;
                let (batch, _) = self.indices.partial_shuffle(&mut self.rng, b);
                out.iter_mut().for_each(|o| *o = 0.0);
                for &j in batch.iter() {
                    sum.add_component_gradient(j, x, scale, out)?;
                }
                Ok(())
            }
        }
    }
}
