"""Regenerates the golden files from the closed-form rate and constant
formulas, evaluated at 50 digits with mpmath."""

import json
from pathlib import Path

from mpmath import mp, mpf, sqrt, log, exp

mp.dps = 50
HERE = Path(__file__).parent


def constants(t):
    L, g0, f0, ell = mpf(t["L"]), mpf(t["grad_f0_norm"]), mpf(t["f0"]), mpf(t["ell"])
    ms, bs, delta, gamma, d = mpf(t["m_s"]), mpf(t["b_s"]), mpf(t["delta"]), mpf(t["gamma"]), t["d"]
    Ld = L + ell / delta
    md = -L - mpf(1) / 2 + ms / delta
    bd = g0**2 / 2 + bs / delta
    M = -f0 + g0**2 / 2 + bs / (2 * delta) * log(3)
    lam = min(mpf(1) / 4, md / (Ld + gamma**2 / 2)) / 2
    A = md / (2 * Ld + gamma**2) * (g0**2 / (2 * Ld + gamma**2) + bd / md * (Ld + gamma**2 / 2) + f0)
    base = Ld / gamma**2
    alpha1 = base
    big = None
    for _ in range(500):
        new = mpf(12) / 5 * (1 + 2 * alpha1 + 2 * alpha1**2) * (d + A) * base / (lam * (1 - 2 * lam))
        alpha1 = (1 + 1 / new) * base
        if big is not None and abs(new - big) < mpf(10) ** -45 * abs(new):
            big = new
            break
        big = new
    tail = sqrt(big) * exp(-big)
    mu = gamma / 768 * min(lam * base, tail * base, tail)
    return {
        "L_delta": Ld,
        "m_delta": md,
        "b_delta": bd,
        "M": M,
        "lambda": lam,
        "A": A,
        "Lambda_big": big,
        "alpha1": alpha1,
        "ln_mu_star": log(mu),
        "mu_star": mu,
        "m_delta_valid": bool(delta < ms / (L + mpf(1) / 2)),
        "M_valid": bool(delta <= 2 * ms / (3 * (1 + L))),
    }


def schedule(t):
    alg, e, d = t["algorithm"], mpf(t["epsilon"]), mpf(t["d"])
    L, mu, ell = mpf(t.get("L", 1)), mpf(t.get("mu", 1)), mpf(t.get("ell", 4))
    le = L * e**8 + ell
    lme = (mu + L) * e**8 + ell
    eta = alpha = batch = None
    if alg == "pld":
        delta, eta, alpha, k = e**4, e**10 / d, e**2, d / e**10
    elif alg == "phmc":
        delta, alpha, k = e**4, e**2, sqrt(d) / e**7
    elif alg == "psgld":
        delta = e**8
        eta = e**18 * mu**2 / (d * le**2)
        k = d * le**2 / (e**18 * mu**3)
        batch = mpf(1)
    elif alg == "psghmc":
        delta = e**8
        eta = min(e**9 * mu / (sqrt(d) * le), e**12 * mu / (sqrt(lme) * le))
        inner = e**16 * d * mu + le**2
        k = L**2 * le**2 * inner * sqrt(lme) / (e**39 * mu**6) * max(sqrt(d), sqrt(lme) / e**3)
        batch = L**2 * le * inner / (e**26 * mu**4)
    elif alg == "psgld-nonconvex":
        ls = mpf(t["lambda_star"])
        lg = log(1 / ls)
        delta = e**8
        eta = e**196 / (d**8 * ls**-4 * lg**4)
        k = d**17 * ls**-9 * lg**8 / e**392
        batch = 1 / eta
    elif alg == "psghmc-nonconvex":
        ms = mpf(t["mu_star"])
        lg = log(1 / ms)
        delta = e**8
        eta = e**50 * ms / (d**3 * lg**2)
        k = d**7 * lg**5 / (e**132 * ms**3)
        batch = 1 / eta
    logs = max(1, log(1 / e)) * max(1, log(d))
    return {
        "delta": delta,
        "eta": eta,
        "alpha": alpha,
        "K": max(k, 1),
        "K_with_logs": max(k * logs, 1),
        "batch_size": batch,
    }


def plain(v):
    if isinstance(v, bool) or v is None:
        return v
    return float(v)


CONSTANTS = [
    dict(L=1.0, grad_f0_norm=0.0, f0=0.0, ell=4.0, m_s=1.0, b_s=1.0, delta=0.1, gamma=1.0, d=2),
    dict(L=1.0, grad_f0_norm=0.0, f0=0.0, ell=4.0, m_s=1.0, b_s=0.25, delta=0.01, gamma=1.0, d=1),
    dict(L=2.0, grad_f0_norm=1.5, f0=0.3, ell=4.0, m_s=1.0, b_s=2.0, delta=0.05, gamma=3.0, d=5),
    dict(L=0.5, grad_f0_norm=0.0, f0=-1.0, ell=4.0, m_s=1.0, b_s=1.0, delta=0.001, gamma=20.0, d=10),
    dict(L=1.0, grad_f0_norm=2.0, f0=0.0, ell=4.0, m_s=1.0, b_s=9.0, delta=0.2, gamma=0.5, d=3),
    dict(L=10.0, grad_f0_norm=0.1, f0=1.0, ell=4.0, m_s=1.0, b_s=1.0, delta=0.05, gamma=2.0, d=2),
    dict(L=1.0, grad_f0_norm=0.0, f0=0.0, ell=4.0, m_s=1.0, b_s=1.0, delta=0.5, gamma=1.0, d=2),
    dict(L=0.1, grad_f0_norm=0.5, f0=0.0, ell=6.0, m_s=0.5, b_s=0.5, delta=0.02, gamma=5.0, d=4),
    dict(L=3.0, grad_f0_norm=1.0, f0=2.0, ell=4.0, m_s=1.0, b_s=4.0, delta=0.1, gamma=10.0, d=1),
    dict(L=0.0, grad_f0_norm=0.0, f0=0.0, ell=4.0, m_s=1.0, b_s=0.01, delta=0.1, gamma=1000.0, d=1),
]

SCHEDULES = [
    dict(algorithm="pld", epsilon=0.1, d=3),
    dict(algorithm="pld", epsilon=0.3, d=50),
    dict(algorithm="phmc", epsilon=0.1, d=4),
    dict(algorithm="phmc", epsilon=0.05, d=100),
    dict(algorithm="psgld", epsilon=0.5, d=2),
    dict(algorithm="psgld", epsilon=0.2, d=10, L=2.0, mu=0.5, ell=4.0),
    dict(algorithm="psghmc", epsilon=0.5, d=2),
    dict(algorithm="psghmc", epsilon=0.7, d=25, L=3.0, mu=2.0, ell=4.0),
    dict(algorithm="psgld-nonconvex", epsilon=0.9, d=2, lambda_star=0.5),
    dict(algorithm="psghmc-nonconvex", epsilon=0.8, d=3, mu_star=0.01),
]


def main():
    cases = [{"input": t, "expected": {k: plain(v) for k, v in constants(t).items()}} for t in CONSTANTS]
    (HERE / "penalized_constants.json").write_text(json.dumps(cases, indent=2) + "\n")
    cases = [{"input": t, "expected": {k: plain(v) for k, v in schedule(t).items()}} for t in SCHEDULES]
    (HERE / "schedule_for.json").write_text(json.dumps(cases, indent=2) + "\n")


if __name__ == "__main__":
    main()
