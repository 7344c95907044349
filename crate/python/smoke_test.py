"""Smoke test for the Python extension.

Build and run from the workspace root:

    cargo build --release -p penalized-sampler-py --features extension-module
    python3 python/smoke_test.py
"""

import importlib.util
import json
import math
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpenalized_sampler_py.so"
        if lib.exists():
            spec = importlib.util.spec_from_file_location("penalized_sampler_py", lib)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("extension not built; see the module docstring")


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    ps = load()

    ball = ps.ConvexBody.lp_ball(2, 1.0, 1.0)
    assert ps.ConvexBody.l2_ball(2, 1.0).project([2.0, 0.0]) == [1.0, 0.0]
    p = ball.project([1.0, 1.0])
    assert close(p[0], 0.5, 1e-12) and close(p[1], 0.5, 1e-12), p
    value, grad = ball.penalty([1.0, 1.0])
    assert close(value, 0.5, 1e-12) and close(grad[0], 1.0, 1e-12), (value, grad)
    simplex = ps.ConvexBody.from_json('{"type": "simplex", "dim": 2}')
    assert simplex.contains([0.2, 0.3]) and not simplex.contains([0.8, 0.3])

    psi = ps.integrator_coeffs(1.0, 1.0)
    assert close(psi[0], math.exp(-1.0), 1e-15)
    c = ps.noise_covariance(1.0, 1.0)
    assert close(c[0], 0.432332358381694, 1e-12), c

    for delta in (1e-1, 1e-2, 1e-3):
        kl = ps.kl_quadrature(lambda x: 0.0, -1.0, 1.0, delta)
        assert close(kl, math.log1p(math.sqrt(math.pi * delta) / 2), 1e-10), (delta, kl)

    consts = ps.penalized_constants(L=1.0, delta=0.01)
    assert "mu_star" in consts and consts["m_delta_valid"] is True
    plan = ps.schedule_for("pld", 0.1)
    assert close(plan["delta"], 1e-4, 1e-18), plan

    gauss = ps.Potential.gaussian([0.0], 1.0)
    wide = ps.ConvexBody.l2_ball(1, 50.0)
    pld = [r[0] for r in ps.langevin(gauss, wide, [0.0], 0.1, 0.01, 20000, 7, burn_in=1000)]
    hmc = [r[0] for r in ps.hmc(gauss, wide, [0.0], 0.1, 1.0, 0.05, 20000, 7, burn_in=1000)]
    mean = sum(pld) / len(pld)
    var = sum((x - mean) ** 2 for x in pld) / len(pld)
    assert abs(mean) < 0.2 and 0.8 < var < 1.2, (mean, var)
    assert ps.w2_1d(pld, hmc) < 0.2
    assert ps.w2_1d(pld, pld) == 0.0
    assert ps.tv_histogram(pld, pld) == 0.0

    draws = ps.dirichlet_oracle([1.0, 2.0, 2.0], 2000, 3)
    m0 = sum(d[0] for d in draws) / len(draws)
    assert close(m0, 0.2, 0.02), m0

    try:
        ps.langevin(gauss, wide, [0.0], 0.1, 5.0, 100, 1)
    except ps.DivergenceError:
        pass
    else:
        raise AssertionError("expected divergence")

    config = {
        "schema_version": 1,
        "experiment": {
            "tag": "custom",
            "potential": {"type": "gaussian", "mean": [0.0, 0.0], "precision": 1.0},
            "body": {"type": "l2_ball", "dim": 2, "radius": 1.0},
            "x0": [0.0, 0.0],
        },
        "sampler": {
            "algorithm": "phmc",
            "delta": 0.01,
            "gamma": 1.0,
            "schedule": {"eta0": 0.01},
            "steps": 2000,
        },
        "n_runs": 4,
        "n_samples": 100,
        "seed": 11,
    }
    with tempfile.TemporaryDirectory() as tmp:
        summary = ps.run_experiment(json.dumps(config), tmp)
        assert summary["n_runs"] == 4 and len(summary["mean"]) == 2
        assert os.path.exists(os.path.join(tmp, "samples.csv"))
        try:
            config["sampler"]["bogus"] = 1
            ps.run_experiment(json.dumps(config), tmp)
        except ValueError as e:
            assert "sampler" in str(e), e
        else:
            raise AssertionError("unknown key accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
