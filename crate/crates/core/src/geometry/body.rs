use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{dot, norm1, norm2, solve};

/// Absolute tolerance used for every membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// Iteration cap for Dykstra's alternating projections onto polytopes.
pub const DYKSTRA_MAX_ITER: usize = 100_000;
/// Change-per-sweep threshold at which Dykstra's method stops.
pub const DYKSTRA_TOL: f64 = 1e-13;
/// Tolerance for the Lagrange-multiplier bisection of general ℓp projections.
pub const LP_MULTIPLIER_TOL: f64 = 1e-12;

const MAX_VERTEX_SUBSETS: u64 = 2_000_000;

/// Serializable description of a convex body, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    L2Ball {
        dim: usize,
        radius: f64,
    },
    LpBall {
        dim: usize,
        p: f64,
        radius: f64,
    },
    LinfBall {
        dim: usize,
        radius: f64,
    },
    /// `{x : normals[i]·x <= offsets[i]}` with a strictly interior `witness`.
    Polytope {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        witness: Vec<f64>,
    },
    /// `{x in R^dim : x_i >= 0, sum x_i <= 1}`.
    Simplex {
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    L2Ball { radius: f64 },
    LpBall { p: f64, radius: f64 },
    LinfBall { radius: f64 },
    Polytope { normals: Vec<Vec<f64>>, offsets: Vec<f64>, witness: Vec<f64> },
    Simplex,
}

/// A compact convex set with nonempty interior, centered balls, polytopes or
/// the standard corner simplex.
///
/// Bodies are validated at construction and immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodySpec", into = "BodySpec")]
pub struct ConvexBody {
    dim: usize,
    shape: Shape,
    enclosing_radius: f64,
}

impl TryFrom<BodySpec> for ConvexBody {
    type Error = Error;

    fn try_from(spec: BodySpec) -> Result<Self> {
        match spec {
            BodySpec::L2Ball { dim, radius } => ConvexBody::l2_ball(dim, radius),
            BodySpec::LpBall { dim, p, radius } => ConvexBody::lp_ball(dim, p, radius),
            BodySpec::LinfBall { dim, radius } => ConvexBody::linf_ball(dim, radius),
            BodySpec::Polytope {
                normals,
                offsets,
                witness,
            } => ConvexBody::polytope(normals, offsets, witness),
            BodySpec::Simplex { dim } => ConvexBody::simplex(dim),
        }
    }
}

impl From<ConvexBody> for BodySpec {
    fn from(body: ConvexBody) -> Self {
        let dim = body.dim;
        match body.shape {
            Shape::L2Ball { radius } => BodySpec::L2Ball { dim, radius },
            Shape::LpBall { p, radius } => BodySpec::LpBall { dim, p, radius },
            Shape::LinfBall { radius } => BodySpec::LinfBall { dim, radius },
            Shape::Polytope {
                normals,
                offsets,
                witness,
            } => BodySpec::Polytope {
                normals,
                offsets,
                witness,
            },
            Shape::Simplex => BodySpec::Simplex { dim },
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::invalid("dimension must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_finite() && radius > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("radius must be positive and finite, got {radius}")))
    }
}

/// ℓp norm computed with max-scaling to stay clear of overflow for large p.
pub fn lp_norm(x: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        return norm1(x);
    }
    if p == 2.0 {
        return norm2(x);
    }
    let m = x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return m;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

impl ConvexBody {
    pub fn l2_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        check_radius(radius)?;
        Ok(ConvexBody {
            dim,
            shape: Shape::L2Ball { radius },
            enclosing_radius: radius,
        })
    }

    /// `{x : ||x||_p <= radius}` for `1 <= p < inf`.
    pub fn lp_ball(dim: usize, p: f64, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        check_radius(radius)?;
        if !(p >= 1.0) || p.is_infinite() {
            return Err(Error::invalid(format!(
                "lp ball order must satisfy 1 <= p < inf, got {p} (use linf_ball for p = inf)"
            )));
        }
        if p == 2.0 {
            return ConvexBody::l2_ball(dim, radius);
        }
        let enclosing_radius = if p > 2.0 {
            radius * (dim as f64).powf(0.5 - 1.0 / p)
        } else {
            radius
        };
        Ok(ConvexBody {
            dim,
            shape: Shape::LpBall { p, radius },
            enclosing_radius,
        })
    }

    pub fn linf_ball(dim: usize, radius: f64) -> Result<Self> {
        check_dim(dim)?;
        check_radius(radius)?;
        Ok(ConvexBody {
            dim,
            shape: Shape::LinfBall { radius },
            enclosing_radius: radius * (dim as f64).sqrt(),
        })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(ConvexBody {
            dim,
            shape: Shape::Simplex,
            enclosing_radius: 1.0,
        })
    }

    /// Polytope `{x : a_i·x <= b_i}`. The witness must satisfy every row strictly.
    ///
    /// Boundedness is not verified beyond requiring at least one vertex; the
    /// enclosing radius is the largest vertex norm, found by enumerating
    /// all `dim`-subsets of rows.
    pub fn polytope(normals: Vec<Vec<f64>>, offsets: Vec<f64>, witness: Vec<f64>) -> Result<Self> {
        let dim = witness.len();
        check_dim(dim)?;
        if normals.len() != offsets.len() {
            return Err(Error::invalid(format!(
                "polytope has {} normals but {} offsets",
                normals.len(),
                offsets.len()
            )));
        }
        if normals.len() <= dim {
            return Err(Error::invalid(
                "a bounded polytope needs more rows than dimensions",
            ));
        }
        ensure_finite(&witness, "witness")?;
        ensure_finite(&offsets, "offsets")?;
        for (i, (a, b)) in normals.iter().zip(&offsets).enumerate() {
            if a.len() != dim {
                return Err(Error::invalid(format!(
                    "normal {i} has length {} but the witness has dimension {dim}",
                    a.len()
                )));
            }
            ensure_finite(a, "normal")?;
            if norm2(a) == 0.0 {
                return Err(Error::invalid(format!("normal {i} is zero")));
            }
            if dot(a, &witness) >= *b {
                return Err(Error::invalid(format!(
                    "witness is not strictly interior to row {i}"
                )));
            }
        }
        let enclosing_radius = max_vertex_norm(&normals, &offsets, dim)?;
        Ok(ConvexBody {
            dim,
            shape: Shape::Polytope {
                normals,
                offsets,
                witness,
            },
            enclosing_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius of the smallest origin-centered ball known to contain the body.
    pub fn enclosing_radius(&self) -> f64 {
        self.enclosing_radius
    }

    pub fn spec(&self) -> BodySpec {
        self.clone().into()
    }

    /// A point strictly inside the body.
    pub fn interior_point(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Polytope { witness, .. } => witness.clone(),
            Shape::Simplex => vec![1.0 / (self.dim as f64 + 1.0); self.dim],
            _ => vec![0.0; self.dim],
        }
    }

    /// Halfspace description `(normals, offsets)` when the body is polyhedral.
    pub fn halfspaces(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        let d = self.dim;
        let unit = |i: usize, s: f64| {
            let mut e = vec![0.0; d];
            e[i] = s;
            e
        };
        match &self.shape {
            Shape::Polytope {
                normals, offsets, ..
            } => Some((normals.clone(), offsets.clone())),
            Shape::Simplex => {
                let mut normals: Vec<Vec<f64>> = (0..d).map(|i| unit(i, -1.0)).collect();
                normals.push(vec![1.0; d]);
                let mut offsets = vec![0.0; d];
                offsets.push(1.0);
                Some((normals, offsets))
            }
            Shape::LinfBall { radius } => {
                let normals: Vec<Vec<f64>> = (0..d)
                    .flat_map(|i| [unit(i, 1.0), unit(i, -1.0)])
                    .collect();
                Some((normals, vec![*radius; 2 * d]))
            }
            Shape::LpBall { p, radius } if *p == 1.0 && d <= 16 => {
                let normals: Vec<Vec<f64>> = (0..1usize << d)
                    .map(|mask| {
                        (0..d)
                            .map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 })
                            .collect()
                    })
                    .collect();
                let m = normals.len();
                Some((normals, vec![*radius; m]))
            }
            _ => None,
        }
    }

    /// `(p, radius)` for the ball variants (`p = inf` for the cube).
    pub fn ball_params(&self) -> Option<(f64, f64)> {
        match self.shape {
            Shape::L2Ball { radius } => Some((2.0, radius)),
            Shape::LpBall { p, radius } => Some((p, radius)),
            Shape::LinfBall { radius } => Some((f64::INFINITY, radius)),
            _ => None,
        }
    }

    pub fn is_simplex(&self) -> bool {
        matches!(self.shape, Shape::Simplex)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim {
            return false;
        }
        let tol = MEMBERSHIP_TOL;
        match &self.shape {
            Shape::L2Ball { radius } => norm2(x) - radius <= tol,
            Shape::LpBall { p, radius } => lp_norm(x, *p) - radius <= tol,
            Shape::LinfBall { radius } => x.iter().all(|v| v.abs() - radius <= tol),
            Shape::Polytope {
                normals, offsets, ..
            } => normals
                .iter()
                .zip(offsets)
                .all(|(a, b)| dot(a, x) - b <= tol * norm2(a)),
            Shape::Simplex => x.iter().all(|&v| v >= -tol) && x.iter().sum::<f64>() - 1.0 <= tol,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "point has dimension {} but the body has dimension {}",
                x.len(),
                self.dim
            )));
        }
        ensure_finite(x, "point")
    }

    /// Euclidean projection onto the body.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`ConvexBody::project`] for the common inside case.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_point(x)?;
        out.copy_from_slice(x);
        match &self.shape {
            Shape::L2Ball { radius } => {
                let n = norm2(x);
                if n > *radius {
                    let s = radius / n;
                    out.iter_mut().for_each(|v| *v *= s);
                }
            }
            Shape::LinfBall { radius } => {
                out.iter_mut().for_each(|v| *v = v.clamp(-radius, *radius));
            }
            Shape::LpBall { p, radius } => {
                if lp_norm(x, *p) > *radius {
                    if *p == 1.0 {
                        project_l1(x, *radius, out);
                    } else {
                        project_lp(x, *p, *radius, out);
                    }
                }
            }
            Shape::Simplex => project_corner_simplex(x, out),
            Shape::Polytope {
                normals, offsets, ..
            } => {
                if !self.contains(x) {
                    dykstra(normals, offsets, x, out)?;
                }
            }
        }
        Ok(())
    }

    /// Euclidean distance to the body.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(crate::linalg::dist2(x, &p))
    }
}

/// Projection of `|x|` onto `{u >= 0, sum u = radius}`, returning the threshold.
fn simplex_threshold(values: &mut [f64], radius: f64) -> f64 {
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in values.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - radius) / (j as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

fn project_l1(x: &[f64], radius: f64, out: &mut [f64]) {
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let theta = simplex_threshold(&mut mags, radius);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.signum() * (v.abs() - theta).max(0.0);
    }
}

fn project_corner_simplex(x: &[f64], out: &mut [f64]) {
    let clipped: f64 = x.iter().map(|v| v.max(0.0)).sum();
    if clipped <= 1.0 {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v.max(0.0);
        }
        return;
    }
    let mut sorted = x.to_vec();
    let theta = simplex_threshold(&mut sorted, 1.0);
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - theta).max(0.0);
    }
}

/// Solves `t + mu t^(p-1) = a` for `t in [0, a]`.
fn lp_coordinate(a: f64, mu: f64, p: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid + mu * mid.powf(p - 1.0) > a {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// ℓp-ball projection for general `p` by bisection on the KKT multiplier.
fn project_lp(x: &[f64], p: f64, radius: f64, out: &mut [f64]) {
    let scale = x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    // work in units where max |x_i| = 1
    let a: Vec<f64> = x.iter().map(|v| v.abs() / scale).collect();
    let r = radius / scale;
    let excess = |mu: f64| -> f64 {
        let s: f64 = a.iter().map(|&ai| lp_coordinate(ai, mu, p).powf(p)).sum();
        s - r.powf(p)
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while excess(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    while hi - lo > LP_MULTIPLIER_TOL * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // the upper end of the bracket is always feasible
    for (o, (&v, &ai)) in out.iter_mut().zip(x.iter().zip(&a)) {
        *o = v.signum() * lp_coordinate(ai, hi, p) * scale;
    }
}

fn dykstra(normals: &[Vec<f64>], offsets: &[f64], x: &[f64], out: &mut [f64]) -> Result<()> {
    let m = normals.len();
    let d = x.len();
    let sq: Vec<f64> = normals.iter().map(|a| dot(a, a)).collect();
    let mut corrections = vec![vec![0.0; d]; m];
    let mut current = x.to_vec();
    let mut z = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_ITER {
        // the iterate can sit still for whole sweeps while the corrections
        // move, so both enter the stopping rule
        let start = current.clone();
        let mut moved = 0.0_f64;
        for i in 0..m {
            for k in 0..d {
                z[k] = current[k] + corrections[i][k];
            }
            let viol = dot(&normals[i], &z) - offsets[i];
            let step = if viol > 0.0 { viol / sq[i] } else { 0.0 };
            for k in 0..d {
                current[k] = z[k] - step * normals[i][k];
                let c = z[k] - current[k];
                moved = moved.max((c - corrections[i][k]).abs());
                corrections[i][k] = c;
            }
        }
        residual = crate::linalg::dist2(&start, &current).max(moved);
        let infeasibility = normals
            .iter()
            .zip(offsets)
            .map(|(a, b)| (dot(a, &current) - b).max(0.0))
            .fold(0.0_f64, f64::max);
        if residual <= DYKSTRA_TOL && infeasibility <= DYKSTRA_TOL {
            out.copy_from_slice(&current);
            return Ok(());
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: DYKSTRA_MAX_ITER,
        residual,
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn max_vertex_norm(normals: &[Vec<f64>], offsets: &[f64], dim: usize) -> Result<f64> {
    let m = normals.len();
    if binomial(m as u64, dim as u64) > MAX_VERTEX_SUBSETS {
        return Err(Error::invalid(format!(
            "polytope with {m} rows in dimension {dim} is too large for vertex enumeration"
        )));
    }
    let mut idx: Vec<usize> = (0..dim).collect();
    let mut best: Option<f64> = None;
    loop {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| normals[i].clone()).collect();
        let rhs: Vec<f64> = idx.iter().map(|&i| offsets[i]).collect();
        if let Some(v) = solve(&rows, &rhs) {
            let feasible = normals
                .iter()
                .zip(offsets)
                .all(|(a, b)| dot(a, &v) - b <= 1e-9 * (1.0 + b.abs()));
            if feasible {
                let n = norm2(&v);
                best = Some(best.map_or(n, |b: f64| b.max(n)));
            }
        }
        // next combination
        let mut i = dim;
        loop {
            if i == 0 {
                return best.ok_or_else(|| Error::invalid("polytope has no vertices"));
            }
            i -= 1;
            if idx[i] < m - dim + i {
                idx[i] += 1;
                for j in i + 1..dim {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn l2_radial_scaling() {
        let b = ConvexBody::l2_ball(2, 1.0).unwrap();
        assert_eq!(b.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn members_are_fixed_points() {
        let bodies = [
            ConvexBody::l2_ball(2, 1.0).unwrap(),
            ConvexBody::lp_ball(2, 1.0, 1.0).unwrap(),
            ConvexBody::lp_ball(2, 3.0, 1.0).unwrap(),
            ConvexBody::linf_ball(2, 1.0).unwrap(),
            ConvexBody::simplex(2).unwrap(),
        ];
        for b in &bodies {
            let x = [0.2, 0.3];
            assert_eq!(b.project(&x).unwrap(), x.to_vec());
        }
    }

    #[test]
    fn l1_ball_corner() {
        let b = ConvexBody::lp_ball(2, 1.0, 1.0).unwrap();
        let p = b.project(&[1.0, 1.0]).unwrap();
        assert!(close(&p, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn simplex_projection() {
        let b = ConvexBody::simplex(2).unwrap();
        assert!(close(&b.project(&[-1.0, 0.5]).unwrap(), &[0.0, 0.5], 0.0));
        assert!(close(&b.project(&[1.0, 1.0]).unwrap(), &[0.5, 0.5], 1e-15));
        assert!(close(&b.project(&[2.0, -3.0]).unwrap(), &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn lp_projection_lands_on_boundary() {
        let b = ConvexBody::lp_ball(3, 3.0, 1.5).unwrap();
        let p = b.project(&[2.0, -1.0, 0.5]).unwrap();
        assert!((lp_norm(&p, 3.0) - 1.5).abs() < 1e-10);
        assert!(p[1] < 0.0);
    }

    #[test]
    fn dykstra_matches_square() {
        let square = ConvexBody::polytope(
            vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
            vec![1.0; 4],
            vec![0.0, 0.0],
        )
        .unwrap();
        let p = square.project(&[3.0, 0.5]).unwrap();
        assert!(close(&p, &[1.0, 0.5], 1e-9));
        let p = square.project(&[3.0, -4.0]).unwrap();
        assert!(close(&p, &[1.0, -1.0], 1e-9));
        assert!((square.enclosing_radius() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_bodies() {
        assert!(ConvexBody::l2_ball(2, 0.0).is_err());
        assert!(ConvexBody::l2_ball(0, 1.0).is_err());
        assert!(ConvexBody::lp_ball(2, 0.5, 1.0).is_err());
        assert!(ConvexBody::polytope(
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 2.0],
        )
        .is_err());
        assert!(ConvexBody::polytope(
            vec![vec![0.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 0.0],
        )
        .is_err());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let b = ConvexBody::l2_ball(2, 1.0).unwrap();
        assert!(matches!(
            b.project(&[f64::NAN, 0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn spec_round_trip_through_json() {
        let b = ConvexBody::lp_ball(3, 1.0, 2.0).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(json, r#"{"type":"lp_ball","dim":3,"p":1.0,"radius":2.0}"#);
        let back: ConvexBody = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
        let bad: std::result::Result<ConvexBody, _> =
            serde_json::from_str(r#"{"type":"l2_ball","dim":2,"radius":-1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn enclosing_radii() {
        assert_eq!(ConvexBody::simplex(3).unwrap().enclosing_radius(), 1.0);
        let cube = ConvexBody::linf_ball(4, 1.0).unwrap();
        assert!((cube.enclosing_radius() - 2.0).abs() < 1e-15);
        let l4 = ConvexBody::lp_ball(2, 4.0, 1.0).unwrap();
        assert!((l4.enclosing_radius() - 2f64.powf(0.25)).abs() < 1e-15);
    }
}
