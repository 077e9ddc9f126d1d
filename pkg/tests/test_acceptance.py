"""Acceptance criteria, each run at its stated tolerance.

Every test records a single PASS/FAIL line (echoed in the terminal summary)
and then asserts it.
"""

import math
import os
import statistics
import time

import numpy as np
import pytest

import oracles
from _report import record
from tilegeo.cli import run as cli_run
from tilegeo.errors import SingularMatrixError
from tilegeo.geometry import LocationSet, grid_locations, random_locations
from tilegeo.kernel import MaternParams, ParamBounds, bessel_k, matern
from tilegeo.kriging import krige, krige_with_trend
from tilegeo.likelihood import (
    ComputeBackend,
    GaussianField,
    LikelihoodEvaluator,
    detrend_linear,
    fit_mle,
    log_likelihood,
)
from tilegeo.optimizer import OptimizerConfig
from tilegeo.simulate import SimulationSpec, simulate_at
from tilegeo.tiles import TiledMatrix, cholesky_in_place

pytestmark = pytest.mark.acceptance

SCENARIOS = [(beta, nu) for beta in (0.03, 0.1, 0.3) for nu in (0.5, 1.0, 2.0)]


def regular_grid_unit(k):
    """``k x k`` grid with both axes at ``seq(0, 1, length = k)``."""
    g = np.linspace(0.0, 1.0, k)
    return LocationSet(np.tile(g, k), np.repeat(g, k))


@pytest.mark.slow
def test_1_parameter_recovery():
    locs = regular_grid_unit(40)
    bounds = ParamBounds((0.001,) * 3, (5.0,) * 3)
    opt = OptimizerConfig(bounds.lower, bounds.upper, tol=1e-4, max_iters=0)
    backend = ComputeBackend.exact()
    ok = True
    parts = []
    t0 = time.perf_counter()
    for beta, nu in SCENARIOS:
        truth = MaternParams(1.0, beta, nu)
        est = []
        iters = []
        for seed in range(1, 21):
            field = simulate_at(SimulationSpec(truth, locs, seed, backend))
            res = fit_mle(field, bounds, opt, backend)
            est.append(res.params.as_array())
            iters.append(res.iterations)
        med = np.median(np.array(est), axis=0)
        good = (
            abs(med[0] - 1.0) <= 0.3
            and 0.5 <= med[1] / beta <= 2.0
            and abs(med[2] - nu) <= 0.25 * nu
        )
        ok &= bool(good)
        parts.append(
            f"(b={beta},nu={nu}) median=({med[0]:.3f},{med[1]:.4f},{med[2]:.3f}) "
            f"iters~{int(np.median(iters))} {'ok' if good else 'MISS'}"
        )
    detail = "; ".join(parts) + f"; wall {time.perf_counter() - t0:.0f}s"
    assert record(1, "parameter recovery, 9 scenarios x 20 replicates, n=1600", ok, detail)


def test_2_oracle_equivalence():
    rng = np.random.default_rng(20240)
    sizes = (50, 257, 400)
    worst_ll, worst_chol = 0.0, 0.0
    rejected = 0
    cases = []
    k = 0
    while len(cases) < 25:
        n = sizes[len(cases) % 3]
        theta = rng.uniform(0.001, 5.0, 3)
        params = MaternParams(*theta)
        locs = random_locations(n, 1000 + k)
        k += 1
        try:
            field = simulate_at(SimulationSpec(params, locs, k))
        except SingularMatrixError:
            rejected += 1  # numerically singular covariance: outside the likelihood's domain
            continue
        cases.append((field, params))
    for field, params in cases:
        th = params.as_array()
        naive_ll = oracles.naive_loglik(field.locs, field.z, *th)
        dense = oracles.naive_covariance(field.locs, *th)
        naive_l = oracles.naive_cholesky(dense)
        for ts in (32, 100, 160):
            ll = log_likelihood(field, params, ComputeBackend.exact(tile_size=ts))
            worst_ll = max(worst_ll, abs(ll - naive_ll))
            tiled = TiledMatrix.from_dense(dense, ts)
            cholesky_in_place(tiled)
            rel = np.linalg.norm(tiled.to_dense() - naive_l) / np.linalg.norm(naive_l)
            worst_chol = max(worst_chol, rel)
    ok = worst_ll <= 1e-8 and worst_chol <= 1e-10
    detail = (
        f"max |dl|={worst_ll:.3e} (tol 1e-8), max rel factor err={worst_chol:.3e} (tol 1e-10) "
        f"over 25 inputs x ts {{32,100,160}}; {rejected} singular theta draws redrawn"
    )
    assert record(2, "tiled vs naive oracle, random theta in [0.001,5]^3", ok, detail)


def test_3_matern_correctness():
    ratios = np.logspace(-6, math.log10(30.0), 1000)
    worst_m = 0.0
    for k, nu in enumerate((0.5, 1.5, 2.5)):
        p = MaternParams(1.7, 0.3, nu)
        got = matern(ratios * p.beta, p)
        ref = np.array([oracles.matern_half_integer(r * p.beta, p.sigma_sq, p.beta, k) for r in ratios])
        worst_m = max(worst_m, float(np.max(np.abs(got - ref) / ref)))
    nus = (0.1, 0.5, 1.0, 1.5, 2.3, 3.0, 4.7, 6.0, 8.2, 10.0)
    xs = np.logspace(-8, math.log10(700.0), 20)
    worst_k = 0.0
    for nu in nus:
        got = bessel_k(nu, xs)
        for x, g in zip(xs, got):
            ref = oracles.bessel_k_oracle(nu, x)
            worst_k = max(worst_k, abs(g - ref) / ref)
    ok = worst_m <= 1e-12 and worst_k <= 1e-12
    detail = f"matern vs closed form max rel={worst_m:.2e}; bessel_k vs oracle (200 pts) max rel={worst_k:.2e}"
    assert record(3, "Matérn and Bessel K accuracy", ok, detail)


def test_4_backend_consistency():
    truth = MaternParams(1.0, 0.1, 0.5)
    field = simulate_at(SimulationSpec(truth, random_locations(900, 11), 11))
    ts = 100
    nt = math.ceil(900 / ts)
    worst_dst, worst_tlr12 = 0.0, 0.0
    for params in (truth, MaternParams(2.0, 0.05, 1.2), MaternParams(0.5, 0.2, 0.8)):
        exact = log_likelihood(field, params, ComputeBackend.exact(tile_size=ts))
        dst = log_likelihood(field, params, ComputeBackend.dst(nt - 1, tile_size=ts))
        tlr = log_likelihood(field, params, ComputeBackend.tlr(1e-12, tile_size=ts))
        worst_dst = max(worst_dst, abs(dst - exact) / abs(exact))
        worst_tlr12 = max(worst_tlr12, abs(tlr - exact) / abs(exact))
    exact = log_likelihood(field, truth, ComputeBackend.exact(tile_size=ts))
    tlr9 = log_likelihood(field, truth, ComputeBackend.tlr(1e-9, tile_size=ts))
    rel9 = abs(tlr9 - exact) / abs(exact)
    ok = worst_dst <= 1e-10 and worst_tlr12 <= 1e-8 and rel9 <= 1e-4
    detail = (
        f"DST full band rel={worst_dst:.2e} (1e-10); TLR 1e-12 rel={worst_tlr12:.2e} (1e-8); "
        f"TLR 1e-9 n=900 rel={rel9:.2e} (1e-4)"
    )
    assert record(4, "backend consistency exact/DST/TLR", ok, detail)


def test_5_parallel_scaling():
    truth = MaternParams(1.0, 0.1, 0.5)
    field = simulate_at(SimulationSpec(truth, random_locations(3600, 5), 5,
                                       ComputeBackend.exact(tile_size=100)))
    times = {}
    for workers in (1, 4, 8):
        evaluate = LikelihoodEvaluator(field, ComputeBackend.exact(workers, 100))
        evaluate(truth)  # warm-up
        samples = []
        for _ in range(20):
            t0 = time.perf_counter()
            evaluate(truth)
            samples.append(time.perf_counter() - t0)
        times[workers] = statistics.mean(samples)
    r4, r8 = times[4] / times[1], times[8] / times[1]
    ok = r4 <= 0.6 and r8 <= 0.4
    detail = (
        f"mean s/eval: 1w={times[1]:.3f} 4w={times[4]:.3f} 8w={times[8]:.3f}; "
        f"ratios 4w={r4:.2f} (<=0.6) 8w={r8:.2f} (<=0.4); hardware threads={len(os.sched_getaffinity(0))}"
    )
    assert record(5, "parallel scaling n=3600 ts=100", ok, detail)


def test_6_simulation_fidelity():
    truth = MaternParams(1.0, 0.1, 0.5)
    locs = grid_locations(30, 30)
    reps = 200
    total = 0.0
    for seed in range(reps):
        z = simulate_at(SimulationSpec(truth, locs, seed)).z
        total += float(z @ z)
    n = locs.count
    pooled = total / (reps * n)
    cov = oracles.naive_covariance(locs, 1.0, 0.1, 0.5)
    se = math.sqrt(2.0 * float(np.sum(cov * cov)) / (reps * n * n))
    var_ok = abs(pooled - truth.sigma_sq) <= 3.0 * se

    d, m = 0.5, 2000
    pair = LocationSet([0.0, d], [0.0, 0.0])
    pts = np.array([simulate_at(SimulationSpec(MaternParams(1.0, 1.0, 0.5), pair, s)).z for s in range(m)])
    r = float(np.corrcoef(pts[:, 0], pts[:, 1])[0, 1])
    rho = math.exp(-d)
    se_r = (1.0 - rho * rho) / math.sqrt(m)
    corr_ok = abs(r - rho) <= 3.0 * se_r
    ok = var_ok and corr_ok
    detail = (
        f"pooled var={pooled:.4f} vs 1 (3 SE={3 * se:.4f}); pair corr={r:.4f} vs {rho:.4f} "
        f"(3 SE={3 * se_r:.4f})"
    )
    assert record(6, "simulation fidelity", ok, detail)


def test_7_kriging_interpolation_and_calibration():
    truth = MaternParams(1.0, 0.1, 0.5)
    field = simulate_at(SimulationSpec(truth, random_locations(300, 3), 3))
    sub = field.locs.take(np.arange(0, 300, 7))
    res = krige(field, sub, truth)
    interp_err = float(np.max(np.abs(res.mean - field.z[np.arange(0, 300, 7)])))
    interp_var = float(np.max(res.variance))
    interp_ok = interp_err <= 1e-8 and interp_var <= 1e-8

    locs = grid_locations(20, 20)
    trend = (5.0, 0.1, -0.2)
    sq_err, kvar = [], []
    for rep in range(50):
        z = simulate_at(SimulationSpec(truth, locs, 500 + rep)).z
        z = z + trend[0] + trend[1] * locs.xs + trend[2] * locs.ys
        rng = np.random.default_rng(rep)
        held = rng.choice(locs.count, size=locs.count // 5, replace=False)
        keep = np.setdiff1d(np.arange(locs.count), held)
        obs_locs, tgt = locs.take(keep), locs.take(held)
        resid, coef = detrend_linear(obs_locs, z[keep])
        fit = fit_mle(GaussianField(obs_locs, resid, coef))
        pred = krige_with_trend(obs_locs, z[keep], tgt, fit.params, coef)
        sq_err.extend((pred.mean - z[held]) ** 2)
        kvar.extend(pred.variance)
    mspe, mvar = float(np.mean(sq_err)), float(np.mean(kvar))
    cal_ok = mspe <= 1.5 * mvar
    ok = interp_ok and cal_ok
    detail = (
        f"interpolation max|err|={interp_err:.1e} max var={interp_var:.1e}; "
        f"MSPE={mspe:.4f} vs 1.5 x mean var={1.5 * mvar:.4f} over 50 replicates"
    )
    assert record(7, "kriging interpolation and calibration", ok, detail)


def test_8_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--n", "400", "--sigma-sq", "1", "--beta", "0.1", "--nu", "0.5", "--seed", "0"]
    c1 = cli_run(args + ["--out", str(a)])[0]
    c2 = cli_run(args + ["--out", str(b)])[0]
    same_csv = c1 == 0 and c2 == 0 and a.read_bytes() == b.read_bytes()

    import json

    reports = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        code, _, _ = cli_run(["fit", str(a), "--workers", "2", "--ts", "100", "--report", str(path)])
        assert code == 0
        rep = json.loads(path.read_text())
        for key in ("total_time", "time_per_iter"):
            rep.pop(key)
        reports.append(rep)
    same_fit = reports[0] == reports[1]
    ok = same_csv and same_fit
    detail = f"simulate CSV byte-identical={same_csv}; fit report numerics identical={same_fit}"
    assert record(8, "determinism of simulate and fit", ok, detail)
