//! Constants, step-size schedules and distance bounds from the convergence
//! analysis, as plain numeric evaluators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Penalty;
use crate::linalg::dot;
use crate::potentials::Potential;
use crate::quadrature::{integrate, Tolerance};

pub const FIXED_POINT_MAX_ITER: usize = 100;
pub const FIXED_POINT_TOL: f64 = 1e-12;

/// Inputs of [`penalized_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsInput {
    /// Smoothness of `f`.
    #[serde(rename = "L")]
    pub l: f64,
    pub grad_f0_norm: f64,
    pub f0: f64,
    #[serde(default = "default_ell")]
    pub ell: f64,
    pub m_s: f64,
    pub b_s: f64,
    pub delta: f64,
    pub gamma: f64,
    pub d: usize,
}

fn default_ell() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedConstants {
    #[serde(rename = "L_delta")]
    pub l_delta: f64,
    pub m_delta: f64,
    pub b_delta: f64,
    /// Lower-bound shift: `f + S/δ >= -M`.
    #[serde(rename = "M")]
    pub m: f64,
    pub lambda: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "Lambda_big")]
    pub big_lambda: f64,
    pub alpha1: f64,
    pub mu_star: f64,
    /// `ln μ*`, finite even when `μ*` underflows.
    pub ln_mu_star: f64,
    /// `δ < m_S/(L + 1/2)`.
    pub m_delta_valid: bool,
    /// `δ <= 2 m_S / (3(1 + L))`.
    #[serde(rename = "M_valid")]
    pub m_valid: bool,
    pub fixed_point_iterations: usize,
    pub fixed_point_converged: bool,
}

/// Evaluates the smoothness/dissipativity constants of `f + S/δ` and the
/// underdamped rate constants. Validity conditions are reported as flags; the
/// numbers are computed regardless.
pub fn penalized_constants(input: &ConstantsInput) -> Result<PenalizedConstants> {
    let ConstantsInput {
        l,
        grad_f0_norm,
        f0,
        ell,
        m_s,
        b_s,
        delta,
        gamma,
        d,
    } = *input;
    for (name, v) in [
        ("L", l),
        ("grad_f0_norm", grad_f0_norm),
        ("f0", f0),
        ("ell", ell),
        ("m_s", m_s),
        ("b_s", b_s),
        ("delta", delta),
        ("gamma", gamma),
    ] {
        if !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite, got {v}")));
        }
    }
    if !(delta > 0.0) || !(gamma > 0.0) {
        return Err(Error::invalid("delta and gamma must be positive"));
    }
    let g2 = grad_f0_norm * grad_f0_norm;
    let l_delta = l + ell / delta;
    let m_delta = -l - 0.5 + m_s / delta;
    let b_delta = 0.5 * g2 + b_s / delta;
    let m = -f0 + 0.5 * g2 + b_s / (2.0 * delta) * 3f64.ln();
    let gg = gamma * gamma;
    let lambda = 0.5 * f64::min(0.25, m_delta / (l_delta + gg / 2.0));
    let a = m_delta / (2.0 * l_delta + gg)
        * (g2 / (2.0 * l_delta + gg) + b_delta / m_delta * (l_delta + gg / 2.0) + f0);
    let (big_lambda, alpha1, iterations, converged) = solve_lambda_alpha(l_delta, gamma, lambda, a, d);
    let ln_mu_star = ln_mu_star(gamma, lambda, big_lambda, l_delta);
    Ok(PenalizedConstants {
        l_delta,
        m_delta,
        b_delta,
        m,
        lambda,
        a,
        big_lambda,
        alpha1,
        mu_star: ln_mu_star.exp(),
        ln_mu_star,
        m_delta_valid: delta < m_s / (l + 0.5),
        m_valid: delta <= 2.0 * m_s / (3.0 * (1.0 + l)),
        fixed_point_iterations: iterations,
        fixed_point_converged: converged,
    })
}

/// Solves `Λ = (12/5)(1 + 2α1 + 2α1²)(d + A) L_δ γ⁻² λ⁻¹ (1-2λ)⁻¹` jointly
/// with `α1 = (1 + 1/Λ) L_δ γ⁻²` by fixed-point iteration from
/// `α1 = L_δ γ⁻²`.
fn solve_lambda_alpha(l_delta: f64, gamma: f64, lambda: f64, a: f64, d: usize) -> (f64, f64, usize, bool) {
    let base = l_delta / (gamma * gamma);
    let c = 12.0 / 5.0 * (d as f64 + a) * base / (lambda * (1.0 - 2.0 * lambda));
    let big = |alpha1: f64| c * (1.0 + 2.0 * alpha1 + 2.0 * alpha1 * alpha1);
    let mut alpha1 = base;
    let mut big_lambda = big(alpha1);
    for it in 1..=FIXED_POINT_MAX_ITER {
        let next_alpha = (1.0 + 1.0 / big_lambda) * base;
        let next_big = big(next_alpha);
        let change = ((next_big - big_lambda) / big_lambda).abs();
        alpha1 = next_alpha;
        big_lambda = next_big;
        if change < FIXED_POINT_TOL {
            return (big_lambda, alpha1, it, true);
        }
    }
    (big_lambda, alpha1, FIXED_POINT_MAX_ITER, false)
}

fn ln_mu_star(gamma: f64, lambda: f64, big_lambda: f64, l_delta: f64) -> f64 {
    let ln_base = (l_delta / (gamma * gamma)).ln();
    let ln_tail = 0.5 * big_lambda.ln() - big_lambda;
    let inner = (lambda.ln() + ln_base).min(ln_tail + ln_base).min(ln_tail);
    (gamma / 768.0).ln() + inner
}

/// `μ* = (γ/768) min{λ L_δ γ⁻², Λ^{1/2} e^{-Λ} L_δ γ⁻², Λ^{1/2} e^{-Λ}}`.
pub fn mu_star(gamma: f64, lambda: f64, big_lambda: f64, l_delta: f64) -> f64 {
    let base = l_delta / (gamma * gamma);
    let tail = big_lambda.sqrt() * (-big_lambda).exp();
    gamma / 768.0 * (lambda * base).min(tail * base).min(tail)
}

/// Lyapunov function
/// `f(x) + S(x)/δ + γ²/4 (|x + v/γ|² + |v/γ|² - λ|x|²)`.
pub fn lyapunov(
    potential: &dyn Potential,
    penalty: &Penalty,
    delta: f64,
    gamma: f64,
    lambda: f64,
    x: &[f64],
    v: &[f64],
) -> Result<f64> {
    if x.len() != v.len() || x.len() != potential.dim() {
        return Err(Error::invalid("position, velocity and potential dimensions differ"));
    }
    let f = potential.value(x)?;
    let (s, _) = penalty.eval(x)?;
    let w: Vec<f64> = v.iter().map(|vi| vi / gamma).collect();
    let shifted: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a + b).collect();
    Ok(f + s / delta + 0.25 * gamma * gamma * (dot(&shifted, &shifted) + dot(&w, &w) - lambda * dot(x, x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Pld,
    Phmc,
    Psgld,
    Psghmc,
    PsgldNonconvex,
    PsghmcNonconvex,
}

impl Algorithm {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "pld" => Algorithm::Pld,
            "phmc" => Algorithm::Phmc,
            "psgld" => Algorithm::Psgld,
            "psghmc" => Algorithm::Psghmc,
            "psgld-nonconvex" => Algorithm::PsgldNonconvex,
            "psghmc-nonconvex" => Algorithm::PsghmcNonconvex,
            other => return Err(Error::invalid(format!("unknown algorithm {other}"))),
        })
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Algorithm::Pld | Algorithm::Phmc)
    }
}

/// Multipliers standing in for the unspecified constants of the rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipliers {
    pub k: f64,
    pub eta: f64,
    pub batch: f64,
}

impl Default for Multipliers {
    fn default() -> Self {
        Multipliers {
            k: 1.0,
            eta: 1.0,
            batch: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleInput {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub d: usize,
    /// Smoothness of `f`.
    #[serde(rename = "L", default = "one")]
    pub l: f64,
    /// Strong convexity of `f` (convex stochastic-gradient rates).
    #[serde(default = "one")]
    pub mu: f64,
    /// Smoothness of the penalty.
    #[serde(default = "default_ell")]
    pub ell: f64,
    /// Spectral gap `λ*` (nonconvex PSGLD).
    #[serde(default)]
    pub lambda_star: Option<f64>,
    /// Rate `μ*` (nonconvex PSGHMC).
    #[serde(default)]
    pub mu_star: Option<f64>,
    #[serde(default)]
    pub multipliers: Multipliers,
}

fn one() -> f64 {
    1.0
}

impl ScheduleInput {
    pub fn new(algorithm: Algorithm, epsilon: f64, d: usize) -> Self {
        ScheduleInput {
            algorithm,
            epsilon,
            d,
            l: 1.0,
            mu: 1.0,
            ell: 4.0,
            lambda_star: None,
            mu_star: None,
            multipliers: Multipliers::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub delta: f64,
    /// `None` when the rate fixes only the iteration count.
    pub eta: Option<f64>,
    /// Regularization of the constraint set, where the rate prescribes one.
    pub alpha: Option<f64>,
    /// `K` for exact gradients, `K̂ = K b` gradient evaluations otherwise,
    /// without the hidden logarithmic factors.
    #[serde(rename = "K")]
    pub k: f64,
    /// `K` times `max(1, ln(1/ε)) · max(1, ln d)`.
    #[serde(rename = "K_with_logs")]
    pub k_with_logs: f64,
    pub batch_size: Option<f64>,
    pub multipliers: Multipliers,
}

/// Evaluates the step size, penalty strength and iteration budget that the
/// rates prescribe for `input.algorithm`.
pub fn schedule_for(input: &ScheduleInput) -> Result<SchedulePlan> {
    let ScheduleInput {
        algorithm,
        epsilon: e,
        d,
        l,
        mu,
        ell,
        lambda_star,
        mu_star,
        multipliers: mult,
    } = *input;
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {e}")));
    }
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    for (name, v) in [("L", l), ("mu", mu), ("ell", ell)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
        }
    }
    let df = d as f64;
    let e8 = e.powi(8);
    let le = l * e8 + ell;
    let lme = (mu + l) * e8 + ell;
    let need_positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::invalid(format!("{name} must be positive for this rate, got {v}")))
        }
    };

    let (delta, eta, alpha, k, batch) = match algorithm {
        Algorithm::Pld => (e.powi(4), Some(e.powi(10) / df), Some(e * e), df / e.powi(10), None),
        Algorithm::Phmc => (e.powi(4), None, Some(e * e), df.sqrt() / e.powi(7), None),
        Algorithm::Psgld => {
            let mu = need_positive("mu", mu)?;
            (
                e8,
                Some(e.powi(18) * mu * mu / (df * le * le)),
                None,
                df * le * le / (e.powi(18) * mu.powi(3)),
                Some(1.0),
            )
        }
        Algorithm::Psghmc => {
            let mu = need_positive("mu", mu)?;
            let eta = f64::min(
                e.powi(9) * mu / (df.sqrt() * le),
                e.powi(12) * mu / (lme.sqrt() * le),
            );
            let inner = e.powi(16) * df * mu + le * le;
            let k = l * l * le * le * inner * lme.sqrt() / (e.powi(39) * mu.powi(6))
                * f64::max(df.sqrt(), lme.sqrt() / e.powi(3));
            let b = l * l * le * inner / (e.powi(26) * mu.powi(4));
            (e8, Some(eta), None, k, Some(b))
        }
        Algorithm::PsgldNonconvex => {
            let ls = need_positive("lambda_star", lambda_star.unwrap_or(f64::NAN))?;
            let lg = (1.0 / ls).ln();
            let eta = e.powi(196) / (df.powi(8) * ls.powi(-4) * lg.powi(4));
            let k = df.powi(17) * ls.powi(-9) * lg.powi(8) / e.powi(392);
            (e8, Some(eta), None, k, Some(1.0 / eta))
        }
        Algorithm::PsghmcNonconvex => {
            let ms = need_positive("mu_star", mu_star.unwrap_or(f64::NAN))?;
            let lg = (1.0 / ms).ln();
            let eta = e.powi(50) * ms / (df.powi(3) * lg * lg);
            let k = df.powi(7) * lg.powi(5) / (e.powi(132) * ms.powi(3));
            (e8, Some(eta), None, k, Some(1.0 / eta))
        }
    };
    let k = k * mult.k;
    let log_factor = f64::max(1.0, (1.0 / e).ln()) * f64::max(1.0, df.ln());
    Ok(SchedulePlan {
        algorithm,
        epsilon: e,
        delta,
        eta: eta.map(|v| v * mult.eta),
        alpha,
        k: k.max(1.0),
        k_with_logs: (k * log_factor).max(1.0),
        batch_size: batch.map(|b| b * mult.batch),
        multipliers: mult,
    })
}

fn kl_tolerance() -> Tolerance {
    Tolerance {
        abs: 1e-13,
        rel: 1e-13,
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// Exact `D(π‖π_δ) = ln(1 + ∫_{R∖C} e^{-f-S/δ} / ∫_C e^{-f})` for a 1-D
/// potential on `C = [a, b]` with `S = dist²`. The outer integrals extend
/// `halfwidth` beyond each endpoint, or to infinity when `None`.
pub fn kl_quadrature(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    delta: f64,
    halfwidth: Option<f64>,
) -> Result<f64> {
    check_delta(delta)?;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid(format!("interval [{a}, {b}] is not a proper bounded interval")));
    }
    let w = match halfwidth {
        Some(w) if w > 0.0 => w,
        Some(w) => return Err(Error::invalid(format!("halfwidth must be positive, got {w}"))),
        None => f64::INFINITY,
    };
    let tol = kl_tolerance();
    let inside = integrate(|x| (-f(x)).exp(), a, b, tol)?;
    let left = integrate(|x| (-f(x) - (a - x) * (a - x) / delta).exp(), a - w, a, tol)?;
    let right = integrate(|x| (-f(x) - (x - b) * (x - b) / delta).exp(), b, b + w, tol)?;
    kl_from_masses(inside, left + right)
}

/// [`kl_quadrature`] for a radially symmetric potential `f(|x|)` on the
/// origin-centered ℓ2 ball of radius `radius` in `d` dimensions, reduced to
/// radial integrals.
pub fn kl_quadrature_radial(f: impl Fn(f64) -> f64, d: usize, radius: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if d == 0 || !(radius > 0.0) {
        return Err(Error::invalid("need d >= 1 and a positive radius"));
    }
    let p = (d - 1) as i32;
    let tol = kl_tolerance();
    let inside = integrate(|r| r.powi(p) * (-f(r)).exp(), 0.0, radius, tol)?;
    let outside = integrate(
        |r| r.powi(p) * (-f(r) - (r - radius) * (r - radius) / delta).exp(),
        radius,
        f64::INFINITY,
        tol,
    )?;
    kl_from_masses(inside, outside)
}

fn kl_from_masses(inside: f64, outside: f64) -> Result<f64> {
    if !(inside > 0.0) || !inside.is_finite() || !outside.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "normalizing integrals not usable: inside {inside}, outside {outside}"
        )));
    }
    Ok((outside / inside).ln_1p())
}

/// Volume of the unit ball in `d` dimensions.
pub fn unit_ball_volume(d: usize) -> f64 {
    let (mut v, start) = if d % 2 == 0 { (1.0, 2) } else { (2.0, 3) };
    let mut k = start;
    while k <= d {
        v *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    v
}

/// Inputs of the KL upper bound for `S = dist²` (so `g⁻¹ = sqrt`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlBoundInput {
    pub d: usize,
    /// Radius of a ball contained in `C`.
    pub inner_radius: f64,
    /// Radius of a ball containing `C`.
    pub outer_radius: f64,
    pub delta: f64,
    pub alpha_tilde: f64,
    /// Infimum of `f` over the band `{0 < S <= α̃ δ ln(1/δ)}`.
    pub inf_f: f64,
    /// `∫_{R^d ∖ C} e^{-S/δ - f}`.
    pub tail_integral: f64,
    /// `∫_C e^{-f}`.
    pub z_c: f64,
}

pub fn kl_upper_bound(input: &KlBoundInput) -> Result<f64> {
    let KlBoundInput {
        d,
        inner_radius: r,
        outer_radius: big_r,
        delta,
        alpha_tilde,
        inf_f,
        tail_integral,
        z_c,
    } = *input;
    if d == 0 || !(r > 0.0) || !(big_r >= r) {
        return Err(Error::invalid("need d >= 1 and 0 < inner_radius <= outer_radius"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(alpha_tilde > 0.0) || !(z_c > 0.0) || !(tail_integral >= 0.0) {
        return Err(Error::invalid("alpha_tilde and z_c must be positive, tail_integral non-negative"));
    }
    let band = (alpha_tilde * delta * (1.0 / delta).ln()).sqrt();
    let collar = ((1.0 + band / r).powi(d as i32) - 1.0) * unit_ball_volume(d) * big_r.powi(d as i32);
    Ok(collar * (-inf_f).exp() / z_c + delta.powf(alpha_tilde) * tail_integral / z_c)
}

/// `Ĉ (sqrt(D) + (D/2)^{1/4})`.
pub fn wckp_bound(d: f64, c_hat: f64) -> Result<f64> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("divergence must be finite and non-negative, got {d}")));
    }
    if !(c_hat > 0.0) || !c_hat.is_finite() {
        return Err(Error::invalid(format!("constant must be positive, got {c_hat}")));
    }
    Ok(c_hat * (d.sqrt() + (d / 2.0).powf(0.25)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(delta: f64) -> ConstantsInput {
        ConstantsInput {
            l: 1.0,
            grad_f0_norm: 0.0,
            f0: 0.0,
            ell: 4.0,
            m_s: 1.0,
            b_s: 1.0,
            delta,
            gamma: 1.0,
            d: 2,
        }
    }

    #[test]
    fn constants_example() {
        let c = penalized_constants(&input(0.1)).unwrap();
        assert!((c.l_delta - 41.0).abs() < 1e-12);
        assert!((c.m_delta - 8.5).abs() < 1e-12);
        assert!((c.b_delta - 10.0).abs() < 1e-12);
        assert!(c.m_delta_valid && c.m_valid);
        assert!(c.fixed_point_converged);
        assert!(c.mu_star >= 0.0 && c.ln_mu_star.is_finite());

        let c = penalized_constants(&input(1.0)).unwrap();
        assert!(c.m_delta <= 0.0 && !c.m_delta_valid);
    }

    #[test]
    fn mu_star_example() {
        let v = mu_star(1.0, 0.1, 5.0, 2.0);
        assert!((v - 5f64.sqrt() * (-5f64).exp() / 768.0).abs() < 1e-18);
        assert!((v - 1.962e-5).abs() < 1e-8);
        assert!((ln_mu_star(1.0, 0.1, 5.0, 2.0) - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let p = schedule_for(&ScheduleInput::new(Algorithm::Pld, 0.1, 3)).unwrap();
        assert!((p.delta - 1e-4).abs() < 1e-18);
        let p = schedule_for(&ScheduleInput::new(Algorithm::Psgld, 0.5, 2)).unwrap();
        assert_eq!(p.delta, 0.00390625);
        let eta = 0.5f64.powi(18) / (2.0 * (0.5f64.powi(8) + 4.0).powi(2));
        assert!((p.eta.unwrap() - eta).abs() < 1e-20);
        assert!((p.eta.unwrap() - 1.19e-7).abs() < 1e-9);
        let p = schedule_for(&ScheduleInput::new(Algorithm::Phmc, 0.1, 4)).unwrap();
        assert!((p.k - 2e7).abs() < 1e-5);
        assert!(p.eta.is_none());
        assert!(schedule_for(&ScheduleInput::new(Algorithm::Pld, 1.0, 3)).is_err());
        assert!(schedule_for(&ScheduleInput::new(Algorithm::PsgldNonconvex, 0.5, 3)).is_err());
    }

    #[test]
    fn kl_closed_form() {
        for delta in [1e-1, 1e-2, 1e-3, 1e-4] {
            let d = kl_quadrature(|_| 0.0, -1.0, 1.0, delta, None).unwrap();
            let exact = (1.0 + (std::f64::consts::PI * delta).sqrt() / 2.0).ln();
            assert!((d - exact).abs() < 1e-10, "{delta}: {d} vs {exact}");
        }
        let d = kl_quadrature(|_| 0.0, -1.0, 1.0, 0.01, None).unwrap();
        assert!((d - 0.0849133124237673).abs() < 1e-12);
    }

    #[test]
    fn radial_matches_interval_in_one_dimension() {
        let a = kl_quadrature(|x| 0.5 * x * x, -1.0, 1.0, 0.01, None).unwrap();
        let b = kl_quadrature_radial(|r| 0.5 * r * r, 1, 1.0, 0.01).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ball_volumes() {
        let pi = std::f64::consts::PI;
        assert_eq!(unit_ball_volume(1), 2.0);
        assert!((unit_ball_volume(2) - pi).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * pi / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - pi * pi / 2.0).abs() < 1e-14);
    }

    #[test]
    fn wckp_examples() {
        assert_eq!(wckp_bound(0.0, 1.0).unwrap(), 0.0);
        assert!((wckp_bound(2.0, 1.0).unwrap() - 2.414213562373095).abs() < 1e-12);
        assert!((wckp_bound(0.5, 2.0).unwrap() - 2.82842712474619).abs() < 1e-12);
        assert!(wckp_bound(-1.0, 1.0).is_err());
    }
}
