import json
import math

import numpy as np
import pytest

from liquidity_abm.analysis import (
    DiagnosticsReport,
    comparison_check,
    complementarity_audit,
    ks_distance,
    ks_null_quantile,
    ou_moment_check,
    ou_targets,
    weak_convergence_diagnostic,
)
from liquidity_abm.clearing import simulate_discrete
from liquidity_abm.config import FSParams, MarketConfig, Model
from liquidity_abm.errors import ConfigurationError

from .conftest import linear_roster, market


def fs_config(beta_bar=-1.0, F_bar=0.0, sigma_bar=0.5, x0=1.0, n=1024, seed=3):
    return MarketConfig(None, Model.FS_BASELINE, x0=x0, T=1.0, n=n, master_seed=seed, fs=FSParams(beta_bar, F_bar, sigma_bar))


# ------------------------------------------------------------ KS machinery


def test_ks_null_quantile_value():
    # c(0.99) of the Kolmogorov distribution is 1.6276
    assert ks_null_quantile(10_000, 10_000) == pytest.approx(1.62762 * math.sqrt(2e-4), rel=1e-4)


def test_ks_same_law_sits_at_null_level():
    rng = np.random.default_rng(0)
    m = 300
    stats_ = np.array([ks_distance(rng.normal(size=m), rng.normal(size=m)) for _ in range(1000)])
    q = ks_null_quantile(m, m)
    assert 0.0 <= np.mean(stats_ > q) <= 0.025
    assert np.quantile(stats_, 0.5) == pytest.approx(0.8276 * math.sqrt(2 / m), rel=0.1)


def test_ks_detects_shift():
    rng = np.random.default_rng(1)
    assert ks_distance(rng.normal(size=4000), rng.normal(0.2, 1, size=4000)) > ks_null_quantile(4000, 4000)


# ------------------------------------------------------------ weak convergence


def test_weak_convergence_point_masses():
    r = linear_roster([1, 1, 1], 1, holdings=[0.0, 1, 1])
    m = market(r, x0=0.3)
    wc = weak_convergence_diagnostic(m, n_levels=(4, 16), paths=100, reference_n=64)
    assert wc.ks_by_n == {4: 0.0, 16: 0.0}
    assert not wc.strictly_decreasing


def test_weak_convergence_rejects_bad_requests(demo):
    m = demo.market
    with pytest.raises(ConfigurationError, match="at least 100"):
        weak_convergence_diagnostic(m, paths=99)
    with pytest.raises(ConfigurationError, match="increasing"):
        weak_convergence_diagnostic(m, n_levels=(64, 16), paths=100)
    with pytest.raises(ConfigurationError, match="coarser"):
        weak_convergence_diagnostic(m, n_levels=(16, 64), paths=100, reference_n=128)


def test_weak_convergence_small_run_is_sane(scenario):
    m = scenario("weak_convergence").market
    wc = weak_convergence_diagnostic(m, n_levels=(4, 16), paths=400, reference_n=64)
    assert set(wc.ks_by_n) == {4, 16}
    assert all(0 <= v <= 1 for v in wc.ks_by_n.values())
    assert wc.threshold == pytest.approx(1.5 * ks_null_quantile(400, 400))
    again = weak_convergence_diagnostic(m, n_levels=(4, 16), paths=400, reference_n=64)
    assert again.ks_by_n == wc.ks_by_n


# ------------------------------------------------------------ comparison


def test_comparison_without_constraints_is_exactly_zero():
    r = linear_roster([1, 1, 1], 0, cov=np.eye(3), drift=[0.3, -0.1, 0.0])
    stats_, g, f = comparison_check(market(r, model=Model.SDER_I, n=64), paths=20, model="I")
    assert stats_.min_diff == stats_.max_diff == 0.0 and stats_.violations == 0


@pytest.mark.parametrize("name,model", [("sder_I_comparison", "I"), ("sder_II_comparison", "II")])
def test_comparison_presets(scenario, name, model):
    m = scenario(name).market.with_(n=128)
    stats_, _, _ = comparison_check(m, paths=100, model=model)
    assert stats_.violations == 0
    if model == "I":
        assert stats_.min_diff >= -1e-12 and stats_.max_diff > 0
    else:
        assert stats_.max_diff <= 1e-12 and stats_.min_diff < 0


# ------------------------------------------------------------ OU baseline


def test_ou_targets_closed_form():
    m, v = ou_targets(1.0, -1.0, 0.0, 0.5, 1.0)
    assert m == pytest.approx(math.exp(-1))
    assert v == pytest.approx(0.25 * (1 - math.exp(-2)) / 2)
    assert ou_targets(2.0, 0.0, 0.0, 0.5, 3.0) == (2.0, pytest.approx(0.75))
    assert ou_targets(0.7, -2.0, 0.7, 0.0, 5.0)[0] == 0.7


def test_ou_deterministic_euler_error_bound():
    cfg = fs_config(beta_bar=-1.0, F_bar=0.2, sigma_bar=0.0, x0=1.0, n=2**10)
    res = ou_moment_check(cfg, paths=2)
    bound = 5 * 1.0 * 1.0 * (1 + 0.8) / 2**10
    assert abs(res.mean - res.mean_target) < bound
    assert res.variance == 0.0


def test_ou_random_walk_mean():
    res = ou_moment_check(fs_config(beta_bar=0.0, sigma_bar=1.0, x0=0.4, n=64), paths=4000)
    assert abs(res.z_mean) <= 4
    assert res.mean_target == 0.4


def test_ou_standard_errors_scale_with_paths():
    a = ou_moment_check(fs_config(n=64), paths=1000)
    b = ou_moment_check(fs_config(n=64), paths=4000)
    assert b.mean_se == pytest.approx(a.mean_se / 2, rel=0.1)
    assert b.variance_se == pytest.approx(a.variance_se / 2, rel=0.15)


def test_ou_rejects_non_baseline(demo):
    with pytest.raises(ConfigurationError):
        ou_moment_check(demo.market, paths=10)


# ------------------------------------------------------------ complementarity


def test_complementarity_zero_without_pushes():
    r = linear_roster([1, 1], 1, holdings=[5.0, 5.0])
    g = simulate_discrete(market(r, n=8), paths=3)
    assert complementarity_audit(g) == 0.0


def test_complementarity_exact_on_market_paths(demo):
    g = simulate_discrete(demo.market, paths=30)
    assert (g.eta_hat > 0).any()
    assert complementarity_audit(g) == 0.0


def test_complementarity_flags_corruption(demo):
    g = simulate_discrete(demo.market, paths=5)
    p, k, i = np.argwhere(g.eta_hat > 0)[0]
    g.positions = g.positions.copy()
    g.positions[p, k + 1, i] = 0.05
    assert complementarity_audit(g) > 0


# ------------------------------------------------------------ report


def test_report_json_field_order():
    rep = DiagnosticsReport(ks_by_n={16: 0.1, 64: 0.05})
    d = json.loads(rep.to_json())
    assert list(d) == ["ks_by_n", "comparison_stats", "ou_moments", "complementarity_residuals", "weak_convergence"]
    assert d["ks_by_n"] == {"16": 0.1, "64": 0.05}
