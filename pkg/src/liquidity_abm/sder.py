"""Limit dynamics: reflected SDEs for the constrained markets and the
frictionless diffusion, integrated by projected Euler–Maruyama.

Each step applies drift and diffusion to ``(X, phi)`` and, where a
constrained component would turn negative, solves the one-step oblique
Skorokhod problem ``dL = (Q dL - phi_pred)_+`` on the constrained block.
The regulator moves every position by ``1_{I1} dL - Q dL`` and the price by
``+alpha~ . dL`` (short-sale constraint) or ``-alpha~ . dL`` (budget
constraint).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import CoefficientSet, coefficients_at
from .config import MarketConfig
from .paths import STREAM_PANEL, PathGrid, path_rng, run_chunks
from .skorokhod import ReflectionSpec, solve_discrete_skorokhod_oblique


@dataclass(frozen=True)
class SderState:
    t: float
    X: np.ndarray  # (P,)
    phi_or_W: np.ndarray  # (P, N)
    L: np.ndarray  # (P, N1)


@dataclass(frozen=True)
class BrownianPanel:
    """Brownian increments on ``steps`` steps of size ``1/n``.

    Increments are drawn lazily per path at the base resolution
    ``n * factor`` from the stream ``(master_seed, STREAM_PANEL, path)`` and
    summed in blocks of ``factor``, so coarsened panels share the fine
    panel's Brownian paths.  ``fixed`` holds explicit increments instead,
    shape ``(P, steps, N)``.
    """

    master_seed: int
    n: int
    steps: int
    n_agents: int
    factor: int = 1
    stream: int = STREAM_PANEL
    fixed: np.ndarray | None = None

    @classmethod
    def for_config(cls, config: MarketConfig, stream=STREAM_PANEL):
        return cls(config.master_seed, config.n, config.steps, config.roster.n_agents, 1, stream)

    @classmethod
    def from_array(cls, increments, n):
        inc = np.asarray(increments, dtype=float)
        if inc.ndim == 2:
            inc = inc[None]
        return cls(0, int(n), inc.shape[1], inc.shape[2], 1, -1, inc)

    @property
    def dt(self):
        return 1.0 / self.n

    @property
    def n_paths(self):
        return None if self.fixed is None else self.fixed.shape[0]

    def coarsen(self, factor: int) -> "BrownianPanel":
        """Same Brownian paths observed every ``factor`` steps."""
        if self.n % factor or self.steps % factor:
            raise ValueError(f"cannot coarsen n={self.n}, steps={self.steps} by {factor}")
        if self.fixed is not None:
            P, K, N = self.fixed.shape
            return BrownianPanel.from_array(self.fixed.reshape(P, K // factor, factor, N).sum(axis=2), self.n // factor)
        return BrownianPanel(
            self.master_seed, self.n // factor, self.steps // factor, self.n_agents, self.factor * factor, self.stream
        )

    def increments(self, path_indices) -> np.ndarray:
        if self.fixed is not None:
            return self.fixed[np.asarray(path_indices)]
        fine_n = self.n * self.factor
        fine_steps = self.steps * self.factor
        P, N = len(path_indices), self.n_agents
        z = np.empty((P, fine_steps, N))
        for r, p in enumerate(path_indices):
            z[r] = path_rng(self.master_seed, p, self.stream).standard_normal((fine_steps, N))
        z *= np.sqrt(1.0 / fine_n)
        if self.factor == 1:
            return z
        return z.reshape(P, self.steps, self.factor, N).sum(axis=2)

    def lineage(self):
        return {"master_seed": self.master_seed, "stream": self.stream, "base_n": self.n * self.factor, "factor": self.factor}


def assemble_drift_diffusion(coeffs: CoefficientSet, model: str = "I"):
    """Price and position coefficients of the limit equation.

    Returns ``b_hat`` of shape ``(..., 1+N)`` (entry 0 for the price) and
    ``sigma_hat`` of shape ``(1+N, N)``.  Agent rows are negated for the
    budget-constrained model, where positions are cash.
    """
    alpha = np.asarray(coeffs.alpha, dtype=float)
    abar = coeffs.alpha_bar
    bt = np.asarray(coeffs.beta_tilde, dtype=float)
    sigma = np.asarray(coeffs.sigma, dtype=float)

    b0 = bt.sum(axis=-1, keepdims=True) / abar
    b_agents = bt - alpha * b0
    s0 = sigma.sum(axis=0, keepdims=True) / abar
    s_agents = sigma - alpha[:, None] * s0
    if model == "II":
        b_agents, s_agents = -b_agents, -s_agents
    elif model != "I":
        raise ValueError(f"model must be 'I' or 'II', got {model!r}")
    return np.concatenate([b0, b_agents], axis=-1), np.concatenate([s0, s_agents], axis=0)


def _diffuse(X, pos, b_hat, s_hat, dB, dt):
    """Unreflected Euler–Maruyama update shared by every integrator here."""
    incr = b_hat * dt + dB @ s_hat.T
    return X + incr[:, 0], pos + incr[:, 1:]


def _reflect(phi_old, phi_pred, coeffs: CoefficientSet, spec: ReflectionSpec | None):
    """Minimal ``dL >= 0`` making the constrained block of ``phi_pred`` feasible."""
    n1 = coeffs.n_constrained
    P = phi_pred.shape[0]
    dL = np.zeros((P, n1))
    if n1 == 0:
        return dL
    head = phi_pred[:, :n1]
    hit = np.flatnonzero((head < 0).any(axis=1))
    if hit.size == 0:
        return dL
    if n1 == 1:
        dL[hit, 0] = -head[hit, 0]
        return dL
    Y = np.stack([np.maximum(phi_old[hit, :n1], 0.0), head[hit]], axis=1)
    dL[hit] = _polish(solve_discrete_skorokhod_oblique(Y, spec).L[:, 1], head[hit], spec.Q)
    return dL


def _polish(dL, pred, Qc):
    """Re-solve ``(I - Qc) dL = -pred`` exactly on each row's active set.

    The fixed-point iteration stops at a small tolerance; the direct solve
    removes that residue so positions pushed to the boundary land on it.
    """
    n1 = Qc.shape[0]
    M = np.eye(n1) - Qc
    active = dL > 0
    out = dL.copy()
    patterns, inverse = np.unique(active, axis=0, return_inverse=True)
    for k, pat in enumerate(patterns):
        if not pat.any():
            continue
        rows = np.flatnonzero(inverse.ravel() == k)
        A = M[np.ix_(pat, pat)]
        sol = np.linalg.solve(A, -pred[np.ix_(rows, pat)].T).T
        cand = out[rows]
        cand[:, pat] = sol
        slack = pred[rows] + cand @ M.T
        ok = (sol >= 0).all(axis=1) & (slack[:, ~pat] >= -1e-12).all(axis=1)
        out[rows[ok]] = cand[ok]
    return out


def euler_step_sder(state: SderState, coeffs: CoefficientSet, dW, dt, model="I", spec=None) -> SderState:
    """One projected Euler–Maruyama step for a batch of paths."""
    b_hat, s_hat = assemble_drift_diffusion(coeffs, model)
    X = np.atleast_1d(np.asarray(state.X, dtype=float))
    pos = np.atleast_2d(np.asarray(state.phi_or_W, dtype=float))
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    b_hat = np.broadcast_to(b_hat, (X.shape[0], b_hat.shape[-1]))
    n1 = coeffs.n_constrained
    if spec is None and n1 > 1:
        spec = ReflectionSpec(coeffs.Q[:n1])

    X_pred, pos_pred = _diffuse(X, pos, b_hat, s_hat, dW, dt)
    dL = _reflect(pos, pos_pred, coeffs, spec)
    X_new, pos_new = _apply_regulator(X_pred, pos_pred, dL, coeffs, model)
    L = np.atleast_2d(np.asarray(state.L, dtype=float)) + dL
    return SderState(state.t + dt, X_new, pos_new, L)


def _apply_regulator(X, pos, dL, coeffs, model):
    n1 = coeffs.n_constrained
    if n1 == 0:
        return X, pos
    push = dL @ coeffs.alpha_tilde[:n1]
    X = X + push if model == "I" else X - push
    pos = pos - dL @ coeffs.Q.T
    pos[:, :n1] += dL
    # the regulator only acts on the boundary: snap the rounding there
    head = pos[:, :n1]
    head[(dL > 0) | ((head < 0) & (head > -1e-12))] = 0.0
    return X, pos


def _coefficient_source(config: MarketConfig):
    roster = config.roster
    if np.any(roster.drift_slope != 0):
        return lambda t, X: coefficients_at(roster, t, X)
    fixed = coefficients_at(roster, 0.0, 0.0)
    return lambda t, X: fixed


def _sder_chunk(config: MarketConfig, panel: BrownianPanel, model, path_indices):
    roster = config.roster
    dB = panel.increments(path_indices)
    P, K, N = dB.shape
    dt = panel.dt
    n1 = roster.n_constrained if model in ("I", "II") else 0
    coeff_at = _coefficient_source(config)
    c0 = coeff_at(0.0, config.x0)
    spec = ReflectionSpec(c0.Q[:n1]) if n1 > 1 else None

    X = np.empty((P, K + 1))
    X[:, 0] = config.x0
    pos = np.empty((P, K + 1, N))
    pos[:, 0] = roster.initial_cash if model == "II" else roster.initial_holdings
    dL = np.zeros((P, K, n1))
    variant = "II" if model == "II" else "I"
    for k in range(K):
        c = coeff_at(k * dt, X[:, k])
        b_hat, s_hat = assemble_drift_diffusion(c, variant)
        b_hat = np.broadcast_to(b_hat, (P, N + 1))
        Xp, posp = _diffuse(X[:, k], pos[:, k], b_hat, s_hat, dB[:, k], dt)
        if n1:
            dL[:, k] = _reflect(pos[:, k], posp, c, spec)
            Xp, posp = _apply_regulator(Xp, posp, dL[:, k], c, variant)
        X[:, k + 1] = Xp
        pos[:, k + 1] = posp

    name = {"I": "SDER_I", "II": "SDER_II"}.get(model, "Frictionless")
    return PathGrid(
        model=name,
        times=np.arange(K + 1) * dt,
        X=X,
        positions=pos,
        position_kind="cash" if model == "II" else "holdings",
        dL=dL if n1 else None,
        alpha=c0.alpha,
        path_ids=np.asarray(path_indices),
        interpolation=config.interpolation,
        meta={"scheme": "projected-euler", "dt": dt, "model": name, **panel.lineage()},
    )


def _panel_paths(panel, paths, path_offset):
    if panel.fixed is not None:
        if paths is None:
            paths = panel.n_paths
        return list(range(paths))
    return list(range(path_offset, path_offset + (paths or 1)))


def simulate_sder(
    config: MarketConfig, panel: BrownianPanel, model=None, paths=None, workers=1, chunk_size=1000, path_offset=0
) -> PathGrid:
    """Reflected limit paths driven by ``panel``; deterministic in the panel."""
    model = model or config.model.variant or "I"
    if model not in ("I", "II"):
        raise ValueError(f"model must be 'I' or 'II', got {model!r}")
    idx = _panel_paths(panel, paths, path_offset)
    return PathGrid.concat(run_chunks(_sder_chunk, (config, panel, model), idx, chunk_size, workers))


def simulate_frictionless(
    config: MarketConfig, panel: BrownianPanel, paths=None, workers=1, chunk_size=1000, path_offset=0
) -> PathGrid:
    """Unconstrained limit paths on the same panel as :func:`simulate_sder`."""
    idx = _panel_paths(panel, paths, path_offset)
    return PathGrid.concat(run_chunks(_sder_chunk, (config, panel, "frictionless"), idx, chunk_size, workers))
