"""Temporary equilibria and the discrete-time market.

Each period the log-price moves to the unique root of aggregate exhibited
excess demand.  Constrained agents exhibit ``max(e~, -holdings)`` (model I,
no short sales) or ``min(e~, cash)`` (model II, no borrowing); the rest
exhibit ``e~``.  The aggregate is continuous and strictly decreasing as long
as one agent is unconstrained, so the root is bracketed by expansion, refined
by bisection and polished with Newton steps on the analytic slope.

All batch routines work on ``P`` paths at once: prices have shape ``(P,)``
and per-agent quantities ``(P, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import NoiseDraw, Roster, standard_draws
from .config import MarketConfig
from .errors import NumericalError
from .paths import STREAM_MARKET, PathGrid, path_rng, run_chunks

XTOL = 1e-13
RESIDUAL_TOL = 1e-12
MAX_EXPANSIONS = 64
MAX_BISECTIONS = 200

MODELS = ("I", "II", "frictionless")


def _check_model(model):
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def exhibited_demand(e_tilde, level, model, n_constrained):
    """Apply the constraint of ``model`` to the first ``n_constrained`` agents."""
    if model == "frictionless" or n_constrained == 0:
        return e_tilde
    out = e_tilde.copy()
    head = e_tilde[..., :n_constrained]
    if model == "I":
        out[..., :n_constrained] = np.maximum(head, -level)
    else:
        out[..., :n_constrained] = np.minimum(head, level)
    return out


def _aggregate(roster, x, x_k, g, level, model):
    u = (x - x_k)[:, None]
    e_tilde = roster.f(u) + g
    executed = exhibited_demand(e_tilde, level, model, roster.n_constrained)
    return executed.sum(axis=1), e_tilde, executed


def _aggregate_slope(roster, x, x_k, e_tilde, level, model):
    slope = roster.f_slope((x - x_k)[:, None])
    n1 = roster.n_constrained
    if model != "frictionless" and n1:
        head = e_tilde[:, :n1]
        binding = head < -level if model == "I" else head > level
        slope[:, :n1] = np.where(binding, 0.0, slope[:, :n1])
    return slope.sum(axis=1)


@dataclass(frozen=True)
class Clearing:
    """Batch outcome of one clearing step."""

    x_next: np.ndarray
    e_tilde: np.ndarray  # frictionless demands at x_next
    executed: np.ndarray  # exhibited demands at x_next
    eta_hat: np.ndarray  # clamp gaps of the constrained agents
    residual: np.ndarray  # |sum executed|
    scale: np.ndarray  # 1 + sum |executed at the current price|


def clear_market(roster: Roster, x_k, g, level, model: str) -> Clearing:
    """Solve the clearing equation for a batch of paths.

    ``x_k`` current log-prices ``(P,)``, ``g`` no-move liquidity demands
    ``(P, N)``, ``level`` holdings (model I) or cash (model II) of the
    constrained agents ``(P, N1)``.
    """
    _check_model(model)
    x_k = np.asarray(x_k, dtype=float)
    g = np.asarray(g, dtype=float)
    n1 = roster.n_constrained
    level = np.asarray(level, dtype=float).reshape(len(x_k), n1)

    F0, _, executed0 = _aggregate(roster, x_k, x_k, g, level, model)
    scale = 1.0 + np.abs(executed0).sum(axis=1)

    # bracket by doubling around the current price
    h = np.maximum(1.0, 2.0 * np.abs(g.sum(axis=1)) / (roster.n_agents * roster.min_slope()))
    lo, hi = x_k - h, x_k + h
    for _ in range(MAX_EXPANSIONS):
        Flo = _aggregate(roster, lo, x_k, g, level, model)[0]
        Fhi = _aggregate(roster, hi, x_k, g, level, model)[0]
        bad = (Flo < 0) | (Fhi > 0)
        if not bad.any():
            break
        h = np.where(bad, 2.0 * h, h)
        lo, hi = x_k - h, x_k + h
    else:
        raise NumericalError("clearing root not bracketed; the demand family is mis-specified")

    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        live = (hi - lo > XTOL) & (mid > lo) & (mid < hi)
        if not live.any():
            break
        Fm = _aggregate(roster, mid, x_k, g, level, model)[0]
        up = Fm > 0
        lo = np.where(live & (up | (Fm == 0)), mid, lo)
        hi = np.where(live & (~up), mid, hi)

    # Newton polish from each end of the final bracket; keep the best point
    cands = [lo, hi, 0.5 * (lo + hi)]
    for x in list(cands):
        Fx, et, _ = _aggregate(roster, x, x_k, g, level, model)
        s = _aggregate_slope(roster, x, x_k, et, level, model)
        cands.append(np.clip(x - Fx / s, lo, hi))
    best = cands[0]
    best_F = np.abs(_aggregate(roster, best, x_k, g, level, model)[0])
    for x in cands[1:]:
        Fx = np.abs(_aggregate(roster, x, x_k, g, level, model)[0])
        better = Fx < best_F
        best = np.where(better, x, best)
        best_F = np.where(better, Fx, best_F)

    _, e_tilde, executed = _aggregate(roster, best, x_k, g, level, model)
    residual = np.abs(executed.sum(axis=1))
    if model == "I":
        eta_hat = np.maximum(-e_tilde[:, :n1] - level, 0.0)
    elif model == "II":
        eta_hat = np.maximum(e_tilde[:, :n1] - level, 0.0)
    else:
        eta_hat = np.zeros_like(level)
    return Clearing(best, e_tilde, executed, eta_hat, residual, scale)


# ---------------------------------------------------------------------------
# single-path interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketState:
    step: int
    n: int
    log_price: float
    holdings: np.ndarray | None = None
    cash: np.ndarray | None = None
    history: tuple = field(default=())

    @classmethod
    def initial(cls, roster: Roster, x0: float, n: int):
        return cls(0, n, float(x0), roster.initial_holdings.copy(), roster.initial_cash.copy(), (float(x0),))


@dataclass(frozen=True)
class StepRecord:
    x_next: float
    executed_demands: np.ndarray
    eta_hat: np.ndarray
    e_tilde: np.ndarray
    residual: float
    scale: float


def solve_temporary_equilibrium(roster: Roster, state: MarketState, noise: NoiseDraw, model: str) -> StepRecord:
    _check_model(model)
    g = noise.liquidity_demand(state.n)[None, :]
    level = {"I": state.holdings, "II": state.cash}.get(model, state.holdings)
    level = np.zeros(roster.n_constrained) if level is None else np.asarray(level)[: roster.n_constrained]
    c = clear_market(roster, np.array([state.log_price]), g, level[None, :], model)
    if c.residual[0] > RESIDUAL_TOL * c.scale[0]:
        raise NumericalError(f"clearing residual {c.residual[0]:.3g} at step {state.step}")
    return StepRecord(float(c.x_next[0]), c.executed[0], c.eta_hat[0], c.e_tilde[0], float(c.residual[0]), float(c.scale[0]))


def _advance(state, rec, holdings=None, cash=None):
    return MarketState(
        state.step + 1,
        state.n,
        rec.x_next,
        state.holdings if holdings is None else holdings,
        state.cash if cash is None else cash,
        state.history + (rec.x_next,),
    )


def step_model_I(roster: Roster, state: MarketState, noise: NoiseDraw) -> MarketState:
    rec = solve_temporary_equilibrium(roster, state, noise, "I")
    return _advance(state, rec, holdings=state.holdings + rec.executed_demands)


def step_model_II(roster: Roster, state: MarketState, noise: NoiseDraw) -> MarketState:
    rec = solve_temporary_equilibrium(roster, state, noise, "II")
    return _advance(state, rec, cash=state.cash - rec.executed_demands)


def step_frictionless(roster: Roster, state: MarketState, noise: NoiseDraw) -> MarketState:
    rec = solve_temporary_equilibrium(roster, state, noise, "frictionless")
    return _advance(state, rec, holdings=state.holdings + rec.executed_demands)


# ---------------------------------------------------------------------------
# linear-demand baseline
# ---------------------------------------------------------------------------


def fs_baseline_step(x, beta_bar, F_bar, delta_bar):
    """One period of the linear-demand difference equation."""
    return x + beta_bar * (x - F_bar) + delta_bar


def fs_aggregate(alpha, beta, gamma, F, delta):
    """Aggregate ``(beta_bar, F_bar, delta_bar)`` of per-agent linear demands.

    Agent i demands ``alpha_i (X_k + beta_i (X_k - F_i) + gamma_i (X_k - x) - x) + delta_i``.
    Clearing gives ``x - X_k = beta_bar (X_k - F_bar) + delta_bar`` with
    ``F_bar`` the ``alpha_i beta_i``-weighted mean of the ``F_i``.
    """
    alpha, beta, gamma, F, delta = (np.asarray(v, dtype=float) for v in (alpha, beta, gamma, F, delta))
    abar = np.sum(alpha * (1.0 + gamma))
    ab = np.sum(alpha * beta)
    beta_bar = ab / abar
    F_bar = np.sum(alpha * beta * F) / ab if ab != 0 else 0.0
    delta_bar = np.sum(delta) / abar
    return float(beta_bar), float(F_bar), float(delta_bar)


def _fs_chunk(config: MarketConfig, stream, path_indices):
    fs = config.fs
    K, n = config.steps, config.n
    z = np.stack([standard_draws(path_rng(config.master_seed, p, stream), K) for p in path_indices])
    delta = fs.sigma_bar * z / np.sqrt(n)
    X = np.empty((len(path_indices), K + 1))
    X[:, 0] = config.x0
    for k in range(K):
        X[:, k + 1] = fs_baseline_step(X[:, k], fs.beta_bar / n, fs.F_bar, delta[:, k])
    return X


def simulate_fs(config: MarketConfig, paths=1, stream=STREAM_MARKET, workers=1, chunk_size=2000, path_offset=0):
    idx = range(path_offset, path_offset + paths)
    parts = run_chunks(_fs_chunk, (config, stream), idx, chunk_size, workers)
    times = np.arange(config.steps + 1) / config.n
    return PathGrid("FSBaseline", times, np.concatenate(parts), path_ids=np.asarray(idx), meta={"n": config.n})


# ---------------------------------------------------------------------------
# discrete constrained markets
# ---------------------------------------------------------------------------


def _discrete_chunk(config: MarketConfig, model, stream, record, path_indices):
    roster = config.roster
    P, K, n = len(path_indices), config.steps, config.n
    N, n1 = roster.n_agents, roster.n_constrained
    z = np.stack([standard_draws(path_rng(config.master_seed, p, stream), (K, N)) for p in path_indices])
    gtilde = z @ roster.sigma.T
    alpha = roster.alpha()
    sqrt_n = np.sqrt(n)

    X = np.empty((P, K + 1))
    X[:, 0] = config.x0
    pos = np.empty((P, K + 1, N))
    pos[:, 0] = roster.initial_cash if model == "II" else roster.initial_holdings
    eta_hat = np.zeros((P, K, n1))
    z_incr = np.empty((P, K, N)) if record else None
    residual = np.empty((P, K))
    res_scale = np.empty((P, K))

    for k in range(K):
        g = roster.gbar(X[:, k]) / n + gtilde[:, k] / sqrt_n
        c = clear_market(roster, X[:, k], g, pos[:, k, :n1], model)
        bad = c.residual > RESIDUAL_TOL * c.scale
        if bad.any():
            p = int(np.flatnonzero(bad)[0])
            raise NumericalError(
                f"clearing residual {c.residual[p]:.3g} exceeds tolerance on path {path_indices[p]} at step {k}"
            )
        X[:, k + 1] = c.x_next
        if model == "II":
            pos[:, k + 1] = pos[:, k] - c.executed
        else:
            pos[:, k + 1] = pos[:, k] + c.executed
        eta_hat[:, k] = c.eta_hat
        residual[:, k] = c.residual
        res_scale[:, k] = c.scale
        if record:
            z_incr[:, k] = c.e_tilde + alpha * (c.x_next - X[:, k])[:, None]

    dL = eta_hat * (1.0 - alpha[:n1] / alpha.sum())
    return PathGrid(
        model={"I": "ModelI", "II": "ModelII"}.get(model, "Frictionless"),
        times=np.arange(K + 1) / n,
        X=X,
        positions=pos,
        position_kind="cash" if model == "II" else "holdings",
        dL=dL if model != "frictionless" else None,
        eta_hat=eta_hat if model != "frictionless" else None,
        z_incr=z_incr,
        residual=residual,
        residual_scale=res_scale,
        alpha=alpha,
        path_ids=np.asarray(path_indices),
        interpolation=config.interpolation,
        meta={"n": n, "master_seed": config.master_seed, "stream": stream},
    )


def simulate_discrete(
    config: MarketConfig,
    paths=1,
    model=None,
    stream=STREAM_MARKET,
    workers=1,
    chunk_size=1000,
    path_offset=0,
    record=True,
) -> PathGrid:
    """Simulate ``paths`` discrete market trajectories.

    ``model`` is ``"I"``, ``"II"`` or ``"frictionless"`` and defaults to the
    configured variant.  Path ``p`` always uses the random stream
    ``(master_seed, stream, p)``, so a frictionless run with the same seed
    and stream sees exactly the same liquidity noise as a constrained one.
    """
    model = model or config.model.variant or "frictionless"
    _check_model(model)
    idx = list(range(path_offset, path_offset + paths))
    parts = run_chunks(_discrete_chunk, (config, model, stream, record), idx, chunk_size, workers)
    return PathGrid.concat(parts)


def simulate_discrete_path(config: MarketConfig, seed=None, model=None) -> PathGrid:
    """One trajectory; a pure function of ``(config, seed)``."""
    if seed is not None:
        config = config.with_(master_seed=seed)
    return simulate_discrete(config, paths=1, model=model)


# ---------------------------------------------------------------------------
# oblique Skorokhod representation of a simulated model I path
# ---------------------------------------------------------------------------


def reconstruct_skorokhod_inputs(grid: PathGrid, roster: Roster):
    """Unreflected inputs ``(Y0, Y, Q)`` behind a simulated model I batch.

    With ``H`` the recorded increments of ``Z``,

        Y0_k = x0 + sum_{m<k} sum_i H_m^i / alpha_bar
        Y_k^i = Phi^i + sum_{m<k} (H_m^i - alpha_i / alpha_bar sum_j H_m^j)

    so that ``X = Y0 + sum_j alpha~_j L^j`` and, for constrained ``i``,
    ``phi^i = Y^i + L^i - sum_j Q^{ij} L^j``.  Returns ``Y0 (P, K+1)``,
    ``Y (P, K+1, N)`` and the constant ``Q (N, N1)``.
    """
    if grid.z_incr is None:
        raise ValueError("path was simulated without recording Z increments")
    alpha = grid.alpha
    abar = alpha.sum()
    H = grid.z_incr
    Hsum = H.sum(axis=-1, keepdims=True)
    P, K = H.shape[:2]
    Y0 = np.empty((P, K + 1))
    Y0[:, 0] = grid.X[:, 0]
    Y0[:, 1:] = grid.X[:, :1] + np.cumsum(Hsum[..., 0] / abar, axis=1)
    Y = np.empty((P, K + 1, H.shape[-1]))
    Y[:, 0] = grid.positions[:, 0]
    Y[:, 1:] = grid.positions[:, :1] + np.cumsum(H - alpha / abar * Hsum, axis=1)
    at = 1.0 / (abar - alpha)
    n1 = roster.n_constrained
    Q = np.outer(alpha, at[:n1])
    Q[np.arange(n1), np.arange(n1)] = 0.0
    return Y0, Y, Q
