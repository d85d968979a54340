"""Monte Carlo diagnostics: weak convergence, pathwise comparison, OU
moments of the linear baseline and complementarity audits."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .clearing import simulate_discrete, simulate_fs
from .config import MarketConfig, Model
from .errors import ConfigurationError
from .paths import STREAM_PANEL, STREAM_REFERENCE, PathGrid
from .sder import BrownianPanel, simulate_frictionless, simulate_sder

MIN_PATHS = 100
KS_LEVEL = 0.99
KS_SLACK = 1.5


def ks_null_quantile(n_a: int, n_b: int, level: float = KS_LEVEL) -> float:
    """Asymptotic two-sample KS quantile ``c(level) * sqrt((n_a + n_b) / (n_a n_b))``."""
    return float(stats.kstwobign.ppf(level) * math.sqrt((n_a + n_b) / (n_a * n_b)))


def ks_distance(a, b) -> float:
    return float(stats.ks_2samp(np.ravel(a), np.ravel(b)).statistic)


@dataclass
class WeakConvergence:
    ks_by_n: dict
    null_quantile: float
    threshold: float
    strictly_decreasing: bool
    kendall_tau: float
    reference_n: int
    paths: int
    T: float

    @property
    def passed(self):
        finest = self.ks_by_n[max(self.ks_by_n)]
        return self.strictly_decreasing and finest < self.threshold


@dataclass
class ComparisonStats:
    model: str
    paths: int
    min_diff: float
    mean_diff: float
    max_diff: float
    violations: int
    tolerance: float
    violation_q50: float
    violation_q99: float


@dataclass
class OUMoments:
    mean: float
    variance: float
    mean_target: float
    variance_target: float
    mean_se: float
    variance_se: float
    z_mean: float
    z_variance: float
    paths: int


@dataclass
class DiagnosticsReport:
    ks_by_n: dict = field(default_factory=dict)
    comparison_stats: dict = field(default_factory=dict)
    ou_moments: dict = field(default_factory=dict)
    complementarity_residuals: dict = field(default_factory=dict)
    weak_convergence: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["ks_by_n"] = {str(k): v for k, v in self.ks_by_n.items()}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n"


# ---------------------------------------------------------------------------
# weak convergence
# ---------------------------------------------------------------------------


def _variant(config: MarketConfig):
    return config.model.variant or "frictionless"


def reference_terminal_law(config: MarketConfig, paths, reference_n=4096, workers=1):
    """Terminal log-prices of the limit equation at step ``1/reference_n``."""
    cfg = config.with_(n=reference_n)
    panel = BrownianPanel.for_config(cfg, stream=STREAM_REFERENCE)
    variant = _variant(config)
    if variant == "frictionless":
        grid = simulate_frictionless(cfg, panel, paths=paths, workers=workers)
    else:
        grid = simulate_sder(cfg, panel, model=variant, paths=paths, workers=workers)
    return grid.X[:, -1]


def weak_convergence_diagnostic(
    config: MarketConfig, n_levels=(16, 64, 256), paths=10_000, T=None, reference_n=4096, workers=1
) -> WeakConvergence:
    """KS distances between discrete terminal laws and the limit law."""
    levels = [int(v) for v in n_levels]
    if paths < MIN_PATHS:
        raise ConfigurationError(f"weak-convergence diagnostic needs at least {MIN_PATHS} paths, got {paths}")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError(f"n_levels must be increasing, got {levels}")
    if reference_n < 4 * max(levels):
        raise ConfigurationError(f"reference resolution {reference_n} is coarser than 4 x {max(levels)}")
    if T is not None:
        config = config.with_(T=float(T))

    ref = reference_terminal_law(config, paths, reference_n, workers)
    ks = {}
    for n in levels:
        grid = simulate_discrete(config.with_(n=n), paths=paths, model=_variant(config), workers=workers, record=False)
        ks[n] = ks_distance(grid.X[:, -1], ref)
    vals = [ks[n] for n in levels]
    q = ks_null_quantile(paths, paths)
    tau = stats.kendalltau(levels, vals).statistic if len(levels) > 1 and len(set(vals)) > 1 else 0.0
    return WeakConvergence(
        ks_by_n=ks,
        null_quantile=q,
        threshold=KS_SLACK * q,
        strictly_decreasing=all(b < a for a, b in zip(vals, vals[1:])),
        kendall_tau=float(tau),
        reference_n=reference_n,
        paths=paths,
        T=config.T,
    )


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


def comparison_check(config: MarketConfig, paths=500, model=None, tolerance=1e-12, workers=1):
    """Constrained minus frictionless limit price over coupled paths.

    Both integrators consume the same Brownian panel.  A violation is a
    grid point where ``X - X_hat < -tolerance`` (short-sale constraint) or
    ``> tolerance`` (budget constraint).
    """
    model = model or config.model.variant or "I"
    panel = BrownianPanel.for_config(config, stream=STREAM_PANEL)
    constrained = simulate_sder(config, panel, model=model, paths=paths, workers=workers)
    free = simulate_frictionless(config, panel, paths=paths, workers=workers)
    diff = constrained.X - free.X
    wrong = np.maximum(-diff, 0.0) if model == "I" else np.maximum(diff, 0.0)
    stats_ = ComparisonStats(
        model=model,
        paths=paths,
        min_diff=float(diff.min()),
        mean_diff=float(diff.mean()),
        max_diff=float(diff.max()),
        violations=int(np.count_nonzero(wrong > tolerance)),
        tolerance=tolerance,
        violation_q50=float(np.quantile(wrong, 0.5)),
        violation_q99=float(np.quantile(wrong, 0.99)),
    )
    return stats_, constrained, free


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck baseline
# ---------------------------------------------------------------------------


def ou_targets(x0, beta_bar, F_bar, sigma_bar, T):
    """Mean and variance of ``dX = beta_bar (X - F_bar) dt + sigma_bar dB`` at T."""
    mean = F_bar + (x0 - F_bar) * math.exp(beta_bar * T)
    if beta_bar == 0:
        var = sigma_bar**2 * T
    else:
        var = sigma_bar**2 * math.expm1(2 * beta_bar * T) / (2 * beta_bar)
    return mean, var


def ou_moment_check(fs_config: MarketConfig, paths=10_000, T=None, workers=1) -> OUMoments:
    if fs_config.model is not Model.FS_BASELINE or fs_config.fs is None:
        raise ConfigurationError("ou_moment_check needs an FSBaseline configuration")
    if T is not None:
        fs_config = fs_config.with_(T=float(T))
    x = simulate_fs(fs_config, paths=paths, workers=workers).X[:, -1]
    fs = fs_config.fs
    m_t, v_t = ou_targets(fs_config.x0, fs.beta_bar, fs.F_bar, fs.sigma_bar, fs_config.T)
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    c = x - mean
    mean_se = math.sqrt(var / paths)
    var_se = math.sqrt(max(float(np.mean(c**4)) - var**2, 0.0) / paths)

    def z(est, target, se):
        if se == 0:
            return 0.0 if est == target else math.copysign(math.inf, est - target)
        return (est - target) / se

    return OUMoments(mean, var, m_t, v_t, mean_se, var_se, z(mean, m_t, mean_se), z(var, v_t, var_se), paths)


# ---------------------------------------------------------------------------
# complementarity
# ---------------------------------------------------------------------------


def complementarity_by_path(path: PathGrid):
    """``sum_{k,i} |position^i_{k+1} * increment^i_k|`` per path.

    Discrete market paths are audited against the raw clamp gaps, limit
    paths against the regulator increments.
    """
    incr = path.eta_hat if path.eta_hat is not None else path.dL
    if incr is None or incr.shape[-1] == 0:
        return np.zeros(path.n_paths)
    n1 = incr.shape[-1]
    nxt = path.positions[:, 1:, :n1]
    return np.abs(nxt * incr).sum(axis=(1, 2))


def complementarity_audit(path: PathGrid) -> float:
    """Largest per-path complementarity residual; 0 when nothing was pushed."""
    r = complementarity_by_path(path)
    return float(r.max(initial=0.0))
