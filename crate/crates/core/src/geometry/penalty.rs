use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::body::{lp_norm, ConvexBody, MEMBERSHIP_TOL};
use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, norm2};

/// A differentiable convex scalar field `h`; the constraint reads `h(x) <= 0`.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    /// Writes `∇h(x)` into `out`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// `(p, radius)` when the constraint is `||x||_p - radius`.
    fn lp_ball(&self) -> Option<(f64, f64)> {
        None
    }
}

/// `h(x) = ||x||_p - radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpNormConstraint {
    dim: usize,
    p: f64,
    radius: f64,
}

impl LpNormConstraint {
    pub fn new(dim: usize, p: f64, radius: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(p >= 1.0) || p.is_infinite() {
            return Err(Error::invalid(format!("norm order must be in [1, inf), got {p}")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        Ok(LpNormConstraint { dim, p, radius })
    }
}

impl ConstraintFn for LpNormConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(lp_norm(x, self.p) - self.radius)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = lp_norm(x, self.p);
        if n == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v.signum() * (v.abs() / n).powf(self.p - 1.0);
        }
        Ok(())
    }

    fn lp_ball(&self) -> Option<(f64, f64)> {
        Some((self.p, self.radius))
    }
}

/// `h(x) = normal·x - offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    normal: Vec<f64>,
    offset: f64,
}

impl AffineConstraint {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        ensure_finite(&normal, "normal")?;
        if normal.is_empty() || norm2(&normal) == 0.0 || !offset.is_finite() {
            return Err(Error::invalid("affine constraint needs a nonzero normal and finite offset"));
        }
        Ok(AffineConstraint { normal, offset })
    }
}

impl ConstraintFn for AffineConstraint {
    fn dim(&self) -> usize {
        self.normal.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(dot(&self.normal, x) - self.offset)
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.normal);
        Ok(())
    }
}

pub type Constraint = Arc<dyn ConstraintFn>;

/// Penalty `S` vanishing exactly on the constraint set.
#[derive(Debug, Clone)]
pub enum Penalty {
    /// `S(x) = dist(x, C)^2`.
    DistanceSquared(ConvexBody),
    /// `S(x) = sum_i max(0, h_i(x))^2`. An empty list is the zero penalty.
    Functional(Vec<Constraint>),
    /// The functional penalty for `h_i(x) + (alpha/2)||x||^2`, whose zero set
    /// is the strongly convex shrinkage of the original body.
    RegularizedFunctional { constraints: Vec<Constraint>, alpha: f64 },
}

/// Serializable penalty description; functional variants are derived from the body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltySpec {
    #[default]
    DistanceSquared,
    Functional,
    RegularizedFunctional {
        alpha: f64,
    },
}

impl Penalty {
    /// The zero penalty (no constraint).
    pub fn none() -> Self {
        Penalty::Functional(Vec::new())
    }

    /// Functional representation of a body: one norm constraint for balls,
    /// one affine constraint per facet for polyhedral bodies.
    pub fn functional_for(body: &ConvexBody) -> Result<Self> {
        Ok(Penalty::Functional(constraints_for(body)?))
    }

    pub fn from_spec(spec: PenaltySpec, body: &ConvexBody) -> Result<Self> {
        match spec {
            PenaltySpec::DistanceSquared => Ok(Penalty::DistanceSquared(body.clone())),
            PenaltySpec::Functional => Penalty::functional_for(body),
            PenaltySpec::RegularizedFunctional { alpha } => regularize(constraints_for(body)?, alpha),
        }
    }

    /// Dimension of the penalty's domain, when it is determined.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Penalty::DistanceSquared(body) => Some(body.dim()),
            Penalty::Functional(c) | Penalty::RegularizedFunctional { constraints: c, .. } => {
                c.first().map(|h| h.dim())
            }
        }
    }

    /// Returns `(S(x), ∇S(x))`.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; x.len()];
        let value = self.eval_into(x, &mut grad)?;
        Ok((value, grad))
    }

    /// Writes `∇S(x)` into `grad` and returns `S(x)`.
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        ensure_finite(x, "point")?;
        if grad.len() != x.len() {
            return Err(Error::invalid("gradient buffer length does not match the point"));
        }
        match self {
            Penalty::DistanceSquared(body) => {
                body.project_into(x, grad)?;
                let mut sq = 0.0;
                for (g, &xi) in grad.iter_mut().zip(x) {
                    let diff = xi - *g;
                    sq += diff * diff;
                    *g = 2.0 * diff;
                }
                if sq.sqrt() <= MEMBERSHIP_TOL {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return Ok(0.0);
                }
                Ok(sq)
            }
            Penalty::Functional(constraints) => functional_eval(constraints, 0.0, x, grad),
            Penalty::RegularizedFunctional { constraints, alpha } => {
                functional_eval(constraints, *alpha, x, grad)
            }
        }
    }
}

fn constraints_for(body: &ConvexBody) -> Result<Vec<Constraint>> {
    if let Some((p, radius)) = body.ball_params() {
        if p.is_finite() {
            return Ok(vec![Arc::new(LpNormConstraint::new(body.dim(), p, radius)?)]);
        }
    }
    let (normals, offsets) = body
        .halfspaces()
        .ok_or_else(|| Error::UnsupportedPenalty("body has no functional representation".into()))?;
    normals
        .into_iter()
        .zip(offsets)
        .map(|(a, b)| AffineConstraint::new(a, b).map(|c| Arc::new(c) as Constraint))
        .collect()
}

fn functional_eval(constraints: &[Constraint], alpha: f64, x: &[f64], grad: &mut [f64]) -> Result<f64> {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let sq_norm = if alpha > 0.0 { dot(x, x) } else { 0.0 };
    let mut value = 0.0;
    let mut hgrad = vec![0.0; x.len()];
    for h in constraints {
        if h.dim() != x.len() {
            return Err(Error::invalid(format!(
                "constraint of dimension {} evaluated at a point of dimension {}",
                h.dim(),
                x.len()
            )));
        }
        let hv = h.value(x)? + 0.5 * alpha * sq_norm;
        if !hv.is_finite() {
            return Err(Error::Callback(format!("constraint returned {hv}")));
        }
        if hv <= MEMBERSHIP_TOL {
            continue;
        }
        h.gradient(x, &mut hgrad)?;
        value += hv * hv;
        for ((g, &dh), &xi) in grad.iter_mut().zip(&hgrad).zip(x) {
            *g += 2.0 * hv * (dh + alpha * xi);
        }
    }
    Ok(value)
}

/// Regularized functional penalty for `h_i(x) + (alpha/2)||x||^2`.
pub fn regularize(constraints: Vec<Constraint>, alpha: f64) -> Result<Penalty> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a finite non-negative number, got {alpha}")));
    }
    Ok(Penalty::RegularizedFunctional { constraints, alpha })
}

/// Smoothness and dissipativity constants of a penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    /// Lipschitz constant of `∇S`.
    pub ell: f64,
    /// `m_S` in `<x, ∇S(x)> >= m_S ||x||^2 - b_S`; `None` when not derivable.
    pub m_s: Option<f64>,
    pub b_s: Option<f64>,
    /// The `b_S` that makes the dissipativity inequality hold for every `x`
    /// with `m_S = 1`, namely `R^2`.
    pub b_s_global: Option<f64>,
    /// Radius of the origin-centered ball enclosing the constraint set.
    pub enclosing_radius: Option<f64>,
    pub notes: Vec<String>,
}

/// Constants for the distance-squared penalty and for a single ℓp-ball
/// functional constraint with `p >= 2`.
pub fn penalty_constants(penalty: &Penalty) -> Result<ConstantsReport> {
    match penalty {
        Penalty::DistanceSquared(body) => {
            let r = body.enclosing_radius();
            Ok(ConstantsReport {
                ell: 4.0,
                m_s: Some(1.0),
                b_s: Some(r * r / 4.0),
                b_s_global: Some(r * r),
                enclosing_radius: Some(r),
                notes: vec![
                    "ell = 4 from 2(x - P(x)) with a non-expansive projection".into(),
                    format!("m_S = 1, b_S = R^2/4 with enclosing radius R = {r}"),
                    "with b_S = R^2/4 the dissipativity inequality is only guaranteed for \
                     |x| >= (1 + sqrt(3)/2) R; b_s_global = R^2 holds everywhere since <x, P(x)> <= R|x|"
                        .into(),
                ],
            })
        }
        Penalty::Functional(constraints) => match constraints.as_slice() {
            [h] => match h.lp_ball() {
                Some((p, radius)) if p >= 2.0 => {
                    let d = h.dim() as f64;
                    let ell = (2.0 / radius + (d - 1.0)) * (p - 1.0);
                    let mut notes = vec![format!(
                        "ell = (2/R + (d-1))(p-1) for max(0, ||x||_p - R)^2 with p = {p}, R = {radius}, d = {d}"
                    )];
                    let (m_s, b_s, b_s_global) = if p == 2.0 {
                        notes.push("p = 2 coincides with the distance-squared penalty of the l2 ball".into());
                        (Some(1.0), Some(radius * radius / 4.0), Some(radius * radius))
                    } else {
                        notes.push("dissipativity constants unknown for p != 2".into());
                        (None, None, None)
                    };
                    let enclosing = if p > 2.0 {
                        radius * d.powf(0.5 - 1.0 / p)
                    } else {
                        radius
                    };
                    Ok(ConstantsReport {
                        ell,
                        m_s,
                        b_s,
                        b_s_global,
                        enclosing_radius: Some(enclosing),
                        notes,
                    })
                }
                Some((p, _)) => Err(Error::UnsupportedPenalty(format!(
                    "smoothness constant only known for l_p constraints with p >= 2, got p = {p}"
                ))),
                None => Err(Error::UnsupportedPenalty(
                    "constants are only available for l_p-ball constraints".into(),
                )),
            },
            _ => Err(Error::UnsupportedPenalty(
                "constants are only available for a single functional constraint".into(),
            )),
        },
        Penalty::RegularizedFunctional { .. } => Err(Error::UnsupportedPenalty(
            "constants are not available for regularized penalties".into(),
        )),
    }
}
