//! Reference oracles shared by the integration tests.
#![allow(dead_code)]

use penalized_sampler::geometry::ConvexBody;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn subsets(m: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for i in 0..m {
        let mut more = Vec::new();
        for s in &out {
            if s.len() < max {
                let mut t = s.clone();
                t.push(i);
                more.push(t);
            }
        }
        out.extend(more);
    }
    out
}

/// Projection onto `{x : A x <= b}` by enumerating active sets: every subset
/// of at most `d` constraints is made active, the equality-constrained
/// projection is solved through its KKT system, and the closest candidate that
/// is feasible with non-negative multipliers wins.
pub fn polytope_projection_oracle(normals: &[Vec<f64>], offsets: &[f64], y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let feasible = |x: &[f64]| {
        normals
            .iter()
            .zip(offsets)
            .all(|(a, b)| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() <= b + 1e-11)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for set in subsets(normals.len(), d) {
        let x = if set.is_empty() {
            y.to_vec()
        } else {
            let gram: Vec<Vec<f64>> = set
                .iter()
                .map(|&i| set.iter().map(|&j| dot(&normals[i], &normals[j])).collect())
                .collect();
            let rhs: Vec<f64> = set.iter().map(|&i| dot(&normals[i], y) - offsets[i]).collect();
            let Some(lambda) = solve_small(gram, rhs) else { continue };
            if lambda.iter().any(|&l| l < -1e-12) {
                continue;
            }
            let mut x = y.to_vec();
            for (&i, l) in set.iter().zip(&lambda) {
                for k in 0..d {
                    x[k] -= l * normals[i][k];
                }
            }
            x
        };
        if feasible(&x) {
            let dd = dist(&x, y);
            if best.as_ref().is_none_or(|(b, _)| dd < *b) {
                best = Some((dd, x));
            }
        }
    }
    best.expect("some active set is optimal").1
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f increasing, f(lo) <= 0 <= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Projection onto the ℓp ball (`p > 1`) from the KKT conditions
/// `t_i + λ p t_i^{p-1} = |y_i|`, with nested bisection on `t_i` and `λ`.
pub fn lp_projection_oracle(p: f64, radius: f64, y: &[f64]) -> Vec<f64> {
    let norm_p = |v: &[f64]| v.iter().map(|a| a.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    if norm_p(y) <= radius {
        return y.to_vec();
    }
    let coords = |lambda: f64| -> Vec<f64> {
        y.iter()
            .map(|&yi| {
                let a = yi.abs();
                let t = bisect(0.0, a, |t| t + lambda * p * t.powf(p - 1.0) - a);
                t.copysign(yi)
            })
            .collect()
    };
    let mut hi = 1.0;
    while norm_p(&coords(hi)) > radius {
        hi *= 2.0;
    }
    let lambda = bisect(0.0, hi, |l| radius - norm_p(&coords(l)));
    coords(lambda)
}

/// Independent projection oracle for every body shape.
pub fn projection_oracle(body: &ConvexBody, y: &[f64]) -> Vec<f64> {
    if let Some((normals, offsets)) = body.halfspaces() {
        return polytope_projection_oracle(&normals, &offsets, y);
    }
    let (p, r) = body.ball_params().expect("non-polytope bodies are balls");
    if p == 2.0 {
        let n = norm(y);
        if n <= r {
            return y.to_vec();
        }
        let lambda = bisect(0.0, n, |l| r - n / (1.0 + l));
        return y.iter().map(|v| v / (1.0 + lambda)).collect();
    }
    lp_projection_oracle(p, r, y)
}

/// One body of every shape in dimension `d`.
pub fn bodies(d: usize) -> Vec<(String, ConvexBody)> {
    let mut out = vec![
        ("l2_ball".to_string(), ConvexBody::l2_ball(d, 1.5).unwrap()),
        ("l1_ball".to_string(), ConvexBody::lp_ball(d, 1.0, 1.0).unwrap()),
        ("l1.5_ball".to_string(), ConvexBody::lp_ball(d, 1.5, 1.2).unwrap()),
        ("l3_ball".to_string(), ConvexBody::lp_ball(d, 3.0, 0.8).unwrap()),
        ("linf_ball".to_string(), ConvexBody::linf_ball(d, 0.7).unwrap()),
        ("simplex".to_string(), ConvexBody::simplex(d).unwrap()),
    ];
    // a skewed box with one cut corner
    let mut normals = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        normals.push(e.clone());
        offsets.push(1.0 + 0.3 * i as f64);
        e[i] = -1.0;
        normals.push(e);
        offsets.push(0.5);
    }
    normals.push(vec![1.0; d]);
    offsets.push(1.2);
    out.push((
        "polytope".to_string(),
        ConvexBody::polytope(normals, offsets, vec![0.0; d]).unwrap(),
    ));
    out
}

pub fn gaussian_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Regularized lower incomplete beta `I_x(a, b)` by adaptive Simpson
/// quadrature of the density (`a, b >= 1`).
pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let pdf = |t: f64| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0);
    let total = simpson(&pdf, 0.0, 1.0, 1e-13, 40);
    simpson(&pdf, 0.0, x, 1e-13, 40) / total
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
    simpson_rec(f, a, b, f(a), f(m), f(b), whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
