"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from liquidity_abm.agents import CoefficientSet
from liquidity_abm.analysis import (
    comparison_check,
    complementarity_audit,
    ou_moment_check,
    weak_convergence_diagnostic,
)
from liquidity_abm.cli import run_scenario
from liquidity_abm.clearing import clear_market, reconstruct_skorokhod_inputs, simulate_discrete
from liquidity_abm.sder import BrownianPanel, assemble_drift_diffusion, simulate_sder
from liquidity_abm.skorokhod import (
    ReflectionSpec,
    oblique_fixed_point_residual,
    solve_discrete_skorokhod_1d,
    solve_discrete_skorokhod_oblique,
    spectral_radius,
)

from .conftest import ACCEPTANCE_LINES, linear_roster
from .test_clearing import piecewise_linear_root


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def model_I_run():
    from liquidity_abm.config import parse_config

    from .conftest import SCENARIOS

    m = parse_config(SCENARIOS / "model_I_demo.yaml").market
    assert (m.roster.n_agents, m.roster.n_constrained, m.n, m.T) == (4, 2, 256, 1.0)
    t0 = time.perf_counter()
    grid = simulate_discrete(m, paths=200)
    return m, grid, time.perf_counter() - t0


def test_criterion_1_conservation_and_feasibility(model_I_run):
    m, g, secs = model_I_run
    total = g.positions.sum(axis=-1)
    drift = float(np.abs(total - m.roster.initial_holdings.sum()).max())
    low = float(g.positions[:, :, : m.roster.n_constrained].min())
    report(1, drift <= 1e-10 and low >= 0 and secs < 30,
           f"max|sum phi - sum Phi|={drift:.2e}, min constrained phi={low:.2e}, {secs:.1f}s")


def test_criterion_2_clearing(model_I_run):
    _, g, _ = model_I_run
    worst_rel = float((g.residual / g.residual_scale).max())
    rng = np.random.default_rng(2024)
    from scipy.optimize import bisect

    worst = 0.0
    for case in range(100):
        N = int(rng.integers(2, 7))
        n1 = int(rng.integers(1, N))
        alpha = rng.uniform(0.2, 3.0, N)
        g_ = rng.normal(0, 1.0, N)
        level = rng.exponential(0.3, n1) * (rng.random(n1) < 0.7)
        x_k = float(rng.normal())
        model = "I" if case % 2 == 0 else "II"
        _, F = piecewise_linear_root(alpha, g_, level, x_k, model)
        oracle = bisect(F, x_k - 50, x_k + 50, xtol=1e-14, maxiter=500)
        c = clear_market(linear_roster(alpha, n1), np.array([x_k]), g_[None], level[None], model)
        worst = max(worst, abs(c.x_next[0] - oracle))
    report(2, worst_rel <= 1e-12 and worst <= 1e-10,
           f"max residual/scale={worst_rel:.2e}, max |x - bisection| over 100 cases={worst:.2e}")


def test_criterion_3_skorokhod_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    Y = np.cumsum(rng.standard_normal((1000, 1001, 2)) * 0.05, axis=1)
    Y += 0.3 - Y[:, :1]
    sol = solve_discrete_skorokhod_oblique(Y, ReflectionSpec(np.zeros((2, 2))))
    Lhat, _ = solve_discrete_skorokhod_1d(np.swapaxes(Y, 1, 2))
    gap_1d = float(np.abs(sol.L - np.swapaxes(Lhat, 1, 2)).max())

    worst = 0.0
    for rho in (0.3, 0.6, 0.9):
        for _ in range(334 if rho < 0.9 else 332):
            B = rng.random((3, 3))
            np.fill_diagonal(B, 0.0)
            Q = B * (rho / spectral_radius(B))
            spec = ReflectionSpec(Q)
            y = np.cumsum(rng.standard_normal((101, 3)) * 0.3, axis=0)
            y += rng.uniform(0, 0.5, 3) - y[0]
            s = solve_discrete_skorokhod_oblique(y, spec)
            worst = max(worst, oblique_fixed_point_residual(y, s.L, spec))
    secs = time.perf_counter() - t0
    report(3, gap_1d <= 1e-12 and worst <= 1e-10 and secs < 60,
           f"Q=0 vs running max={gap_1d:.2e}, fixed-point residual (1000 oblique)={worst:.2e}, {secs:.1f}s")


def test_criterion_4_reconstruction(model_I_run):
    m, g, _ = model_I_run
    g50 = g[slice(0, 50)]
    _, Y, Q = reconstruct_skorokhod_inputs(g50, m.roster)
    n1 = m.roster.n_constrained
    sol = solve_discrete_skorokhod_oblique(Y[:, :, :n1], ReflectionSpec(Q[:n1]))
    gap = float(np.abs(sol.L - g50.L).max())
    report(4, gap <= 1e-8 and float(g50.L.max()) > 0, f"max |L_solver - L_market| over 50 paths={gap:.2e}")


def test_criterion_5_complementarity(model_I_run, scenario):
    _, g, _ = model_I_run
    disc = complementarity_audit(g)
    m = scenario("sder_I_comparison").market
    sg = simulate_sder(m, BrownianPanel.for_config(m), paths=100)
    scale = 1.0 + float(np.abs(sg.positions).max())
    cont = complementarity_audit(sg)
    report(5, disc == 0.0 and cont <= 1e-8 * m.T * scale,
           f"discrete sum phi*d(eta_hat)={disc:.1e}, limit residual={cont:.2e} (bound {1e-8 * m.T * scale:.1e})")


def test_criterion_6_comparison(scenario):
    t0 = time.perf_counter()
    mI = scenario("sder_I_comparison").market
    mII = scenario("sder_II_comparison").market
    assert mI.n == mII.n == 1024
    sI, _, _ = comparison_check(mI, paths=500, model="I")
    sII, _, _ = comparison_check(mII, paths=500, model="II")
    secs = time.perf_counter() - t0
    report(6, sI.min_diff >= -1e-12 and sII.max_diff <= 1e-12 and secs < 60,
           f"short-sale min(X-Xhat)={sI.min_diff:.2e}, budget max(X-Xhat)={sII.max_diff:.2e}, {secs:.1f}s")


def test_criterion_7_weak_convergence(scenario):
    t0 = time.perf_counter()
    m = scenario("weak_convergence").market
    wc = weak_convergence_diagnostic(m, n_levels=(16, 64, 256), paths=10_000, reference_n=4096)
    secs = time.perf_counter() - t0
    ks = ", ".join(f"KS({n})={v:.4f}" for n, v in wc.ks_by_n.items())
    report(7, wc.strictly_decreasing and wc.ks_by_n[256] < wc.threshold and secs < 600,
           f"{ks}; threshold={wc.threshold:.4f}; {secs:.0f}s")


def test_criterion_8_ou_baseline(scenario):
    t0 = time.perf_counter()
    m = scenario("fs_baseline").market
    assert (m.fs.beta_bar, m.fs.F_bar, m.fs.sigma_bar, m.x0, m.T, m.n) == (-1.0, 0.0, 0.5, 1.0, 1.0, 1024)
    res = ou_moment_check(m, paths=10_000)
    secs = time.perf_counter() - t0
    ok = (abs(res.z_mean) <= 4 and abs(res.z_variance) <= 4 and res.mean_target == pytest.approx(math.exp(-1))
          and res.variance_target == pytest.approx(0.25 * (1 - math.exp(-2)) / 2) and secs < 60)
    report(8, ok, f"mean {res.mean:.4f} vs {res.mean_target:.4f} (z={res.z_mean:+.2f}), "
                  f"var {res.variance:.4f} vs {res.variance_target:.4f} (z={res.z_variance:+.2f}), {secs:.1f}s")


def test_criterion_9_algebraic_identities():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        N = int(rng.integers(2, 8))
        B = rng.normal(size=(N, N))
        a = B @ B.T
        c = CoefficientSet(rng.uniform(0.1, 3, N), rng.normal(size=N), rng.normal(size=N), a,
                           np.linalg.cholesky(a + 1e-12 * np.eye(N)), int(rng.integers(0, N)))
        for model in ("I", "II"):
            b, s = assemble_drift_diffusion(c, model)
            worst = max(worst, abs(b[1:].sum()), float(np.abs(s[1:].sum(axis=0)).max()))
    q = np.linspace(0, 3, 31)
    spec_gap = max(abs(spectral_radius(np.array([[0.0, v], [v, 0.0]])) - v) for v in q)
    report(9, worst <= 1e-12 and spec_gap <= 1e-10,
           f"max column-sum residual={worst:.2e}, antidiagonal spectral radius error={spec_gap:.2e}")


def test_criterion_10_determinism(scenario, tmp_path):
    cfg = scenario("model_I_demo")
    a = run_scenario(replace(cfg, paths=60), tmp_path / "a", workers=1)
    b = run_scenario(replace(cfg, paths=60), tmp_path / "b", workers=2)
    same_cli = a["artifacts"] == b["artifacts"]
    m = cfg.market.with_(n=64)
    d1 = simulate_discrete(m, paths=120, chunk_size=25, workers=1).to_csv_string()
    d3 = simulate_discrete(m, paths=120, chunk_size=25, workers=3).to_csv_string()
    s = scenario("sder_II_comparison").market.with_(n=64)
    p = BrownianPanel.for_config(s)
    s1 = simulate_sder(s, p, paths=120, chunk_size=25, workers=1).to_csv_string()
    s3 = simulate_sder(s, p, paths=120, chunk_size=25, workers=3).to_csv_string()
    report(10, same_cli and d1 == d3 and s1 == s3,
           f"CLI artifacts equal={same_cli}, discrete bytes equal={d1 == d3}, limit bytes equal={s1 == s3}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
