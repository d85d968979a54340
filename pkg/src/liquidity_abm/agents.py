"""Agent demand models, liquidity noise and limit coefficients.

An agent's frictionless excess demand at proposed log-price ``x`` during
period ``k`` splits into a price-sensitive part and a no-move part,

    e~(x, w) = f(x - w(k/n)) + gbar / n + gtilde / sqrt(n),

where ``w(k/n)`` is the current log-price.  ``f`` vanishes at zero and has
slope in ``[-K0, -delta0]``.  ``gbar`` is deterministic (a constant plus an
optional multiple of the current price); ``gtilde`` is a mean-zero Gaussian
vector with covariance ``a``, clipped at eight standard deviations so all
moments are bounded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, StructuralError
from .skorokhod import spectral_radius_info

NOISE_CLIP = 8.0
PIVOT_TOL = 1e-12


class Group(str, enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED = "unconstrained"


class DemandKind(str, enum.Enum):
    LINEAR = "linear"
    SATURATING = "saturating"


@dataclass(frozen=True)
class DemandFamily:
    """Price-sensitive demand ``f(u)`` as a function of ``u = x - w(k/n)``.

    ``linear``:      f(u) = -alpha u
    ``saturating``:  f(u) = -delta0 u - ((K0 - delta0) / kappa) tanh(kappa u)

    The saturating slope runs from ``-K0`` at ``u = 0`` to ``-delta0`` far
    away, so its ``alpha`` (the negated slope at the current price) is ``K0``.
    """

    kind: DemandKind
    delta0: float
    K0: float
    alpha: float | None = None
    kappa: float = 1.0

    @classmethod
    def linear(cls, alpha, delta0=None, K0=None):
        return cls(DemandKind.LINEAR, alpha if delta0 is None else delta0, alpha if K0 is None else K0, alpha=alpha)

    @classmethod
    def saturating(cls, delta0, K0, kappa=1.0):
        return cls(DemandKind.SATURATING, delta0, K0, kappa=kappa)

    def __post_init__(self):
        object.__setattr__(self, "kind", DemandKind(self.kind))
        if self.kind is DemandKind.LINEAR and self.alpha is None:
            raise ConfigurationError("linear demand needs alpha")

    def violations(self):
        out = []
        if not self.delta0 > 0:
            out.append(f"[A1] delta0 must be positive, got {self.delta0}")
        if self.delta0 > self.K0:
            out.append(f"[A1] slope bounds out of order: delta0={self.delta0} > K0={self.K0}")
        if self.kind is DemandKind.LINEAR and not (self.delta0 <= self.alpha <= self.K0):
            out.append(f"[A1] linear alpha={self.alpha} outside [delta0, K0]=[{self.delta0}, {self.K0}]")
        if self.kind is DemandKind.SATURATING and not self.kappa > 0:
            out.append(f"saturating demand needs kappa > 0, got {self.kappa}")
        return out

    @property
    def slope_range(self):
        """Admissible values of the negated slope, used for the [A5] envelope."""
        if self.kind is DemandKind.LINEAR:
            return self.alpha, self.alpha
        return self.delta0, self.K0

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is DemandKind.LINEAR:
            return -self.alpha * u
        return -self.delta0 * u - (self.K0 - self.delta0) / self.kappa * np.tanh(self.kappa * u)

    def slope(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is DemandKind.LINEAR:
            return np.full_like(u, -self.alpha)
        with np.errstate(over="ignore"):
            return -self.delta0 - (self.K0 - self.delta0) / np.cosh(self.kappa * u) ** 2

    def curvature(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind is DemandKind.LINEAR:
            return np.zeros_like(u)
        t = np.tanh(self.kappa * u)
        return 2.0 * (self.K0 - self.delta0) * self.kappa * t * (1.0 - t * t)


@dataclass(frozen=True)
class AgentSpec:
    id: int
    group: Group
    demand: DemandFamily
    initial_holdings: float = 0.0
    initial_cash: float = 0.0
    drift: float = 0.0  # gbar = drift + drift_slope * w(k/n)
    drift_slope: float = 0.0
    noise_cov: tuple = ()  # this agent's row of the covariance of gtilde

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))
        object.__setattr__(self, "noise_cov", tuple(float(c) for c in self.noise_cov))

    @property
    def constrained(self) -> bool:
        return self.group is Group.CONSTRAINED


@dataclass(frozen=True)
class NoiseDraw:
    gbar: np.ndarray
    gtilde: np.ndarray
    step: int = 0

    def liquidity_demand(self, n):
        """``g = gbar / n + gtilde / sqrt(n)``."""
        return self.gbar / n + self.gtilde / np.sqrt(n)


def psd_factor(a, tol=PIVOT_TOL):
    """Lower-triangular ``s`` with ``s @ s.T == a`` for a PSD matrix.

    Cholesky with zero pivots allowed: a pivot below ``tol`` (relative to the
    largest diagonal entry) zeroes its column, provided the rest of that
    column vanishes too.  Anything else that is not PSD raises.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ConfigurationError(f"covariance must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-14 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ConfigurationError("covariance matrix is not symmetric")
    scale = max(1.0, float(np.abs(np.diag(a)).max(initial=0.0)))
    s = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - s[j, :j] @ s[j, :j]
        col = a[j + 1 :, j] - s[j + 1 :, :j] @ s[j, :j]
        if d < -tol * scale:
            raise ConfigurationError(f"covariance matrix is not positive semidefinite (pivot {j}: {d:.3g})")
        if d <= tol * scale:
            if np.any(np.abs(col) > np.sqrt(tol) * scale):
                raise ConfigurationError(f"covariance matrix is not positive semidefinite (zero pivot {j})")
            continue
        s[j, j] = np.sqrt(d)
        s[j + 1 :, j] = col / s[j, j]
    if np.abs(s @ s.T - a).max(initial=0.0) > 1e-10 * scale:
        raise ConfigurationError("covariance factorisation residual exceeds 1e-10")
    return s


class Roster:
    """An ordered, immutable set of agents with vectorised parameters.

    Constrained agents must come first, so that the constrained group is
    ``{0, ..., N1-1}`` in zero-based indexing.
    """

    def __init__(self, agents: Sequence[AgentSpec]):
        agents = tuple(agents)
        if not agents:
            raise ConfigurationError("roster is empty")
        flags = [a.constrained for a in agents]
        n1 = sum(flags)
        if flags != [True] * n1 + [False] * (len(agents) - n1):
            raise ConfigurationError("constrained agents must be listed before unconstrained ones")
        self.agents = agents
        self.n_agents = len(agents)
        self.n_constrained = n1

        fam = [a.demand for a in agents]
        self.is_linear = np.array([f.kind is DemandKind.LINEAR for f in fam])
        self.alpha_linear = np.array([f.alpha if f.alpha is not None else 0.0 for f in fam], dtype=float)
        self.delta0 = np.array([f.delta0 for f in fam], dtype=float)
        self.K0 = np.array([f.K0 for f in fam], dtype=float)
        self.kappa = np.array([f.kappa for f in fam], dtype=float)
        self.drift = np.array([a.drift for a in agents], dtype=float)
        self.drift_slope = np.array([a.drift_slope for a in agents], dtype=float)
        self.initial_holdings = np.array([a.initial_holdings for a in agents], dtype=float)
        self.initial_cash = np.array([a.initial_cash for a in agents], dtype=float)
        for arr in vars(self).values():
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)

    def __len__(self):
        return self.n_agents

    def __eq__(self, other):
        return isinstance(other, Roster) and self.agents == other.agents

    def __hash__(self):
        return hash(self.agents)

    def __iter__(self):
        return iter(self.agents)

    @cached_property
    def covariance(self):
        rows = [a.noise_cov for a in self.agents]
        if all(len(r) == 0 for r in rows):
            return np.zeros((self.n_agents, self.n_agents))
        if any(len(r) != self.n_agents for r in rows):
            raise ConfigurationError(f"every noise_cov row needs {self.n_agents} entries")
        return np.array(rows, dtype=float)

    @cached_property
    def sigma(self):
        s = psd_factor(self.covariance)
        s.setflags(write=False)
        return s

    # vectorised demand evaluation; u has trailing axis N

    def f(self, u):
        u = np.asarray(u, dtype=float)
        sat = -self.delta0 * u - (self.K0 - self.delta0) / self.kappa * np.tanh(self.kappa * u)
        return np.where(self.is_linear, -self.alpha_linear * u, sat)

    def f_slope(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(over="ignore"):
            sat = -self.delta0 - (self.K0 - self.delta0) / np.cosh(self.kappa * u) ** 2
        return np.where(self.is_linear, -self.alpha_linear, sat)

    def alpha(self):
        """Negated slope of f at the current price (u = 0)."""
        return -self.f_slope(np.zeros(self.n_agents))

    def gamma(self):
        """Second derivative of f at the current price."""
        return np.array([a.demand.curvature(0.0) for a in self.agents], dtype=float)

    def gbar(self, price):
        """Deterministic liquidity demand at the current log-price (broadcasts)."""
        return self.drift + self.drift_slope * np.asarray(price, dtype=float)[..., None]

    def min_slope(self):
        return float(min(f.slope_range[0] for f in (a.demand for a in self.agents)))


def _price_at(history, step):
    h = np.asarray(history, dtype=float)
    if h.ndim != 1 or step < 0 or step >= h.shape[0] or not np.isfinite(h[step]):
        raise StructuralError(f"history does not define the price at step {step}")
    return float(h[step])


def eval_demand_no_friction(agent: AgentSpec, x, history, step: int, noise: NoiseDraw, n: int):
    """Frictionless excess demand of one agent at proposed log-price ``x``.

    ``history`` holds the grid log-prices ``w(0), w(1/n), ..., w(k/n)``;
    ``noise`` is the period's draw for the whole roster.
    """
    if n < 1:
        raise ValueError("grid resolution must be >= 1")
    wk = _price_at(history, step)
    i = agent.id
    g = noise.gbar[i] / n + noise.gtilde[i] / np.sqrt(n)
    return agent.demand.value(np.asarray(x, dtype=float) - wk) + g


def apply_constraint(agent: AgentSpec, demand, holdings_or_cash, model: str):
    """Exhibited demand after the short-sale (model I) or budget (model II) cap."""
    if not agent.constrained:
        return demand
    if model == "I":
        return np.maximum(demand, -holdings_or_cash)
    if model == "II":
        return np.minimum(demand, holdings_or_cash)
    raise ValueError(f"unknown model {model!r}; expected 'I' or 'II'")


def standard_draws(rng: np.random.Generator, shape):
    """Clipped standard normals; the unit draws behind every noise vector."""
    return np.clip(rng.standard_normal(shape), -NOISE_CLIP, NOISE_CLIP)


def sample_noise(roster: Roster, step: int, rng: np.random.Generator, price=0.0) -> NoiseDraw:
    """Liquidity demand draw for one period.

    ``gtilde = sigma @ z`` with ``z`` clipped standard normal; consecutive
    calls on one generator give independent periods.
    """
    z = standard_draws(rng, roster.n_agents)
    return NoiseDraw(gbar=roster.gbar(price), gtilde=roster.sigma @ z, step=step)


# ---------------------------------------------------------------------------
# limit coefficients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientSet:
    """Limit coefficients at one ``(t, w)``.

    ``beta``, ``gamma_tilde`` and ``beta_tilde`` may carry leading batch axes
    (one row per path); everything else is shared.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    a: np.ndarray
    sigma: np.ndarray
    n_constrained: int
    alpha_bar: float = field(init=False)
    alpha_tilde: np.ndarray = field(init=False)
    Q: np.ndarray = field(init=False)
    gamma_tilde: np.ndarray = field(init=False)
    beta_tilde: np.ndarray = field(init=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        abar = float(alpha.sum())
        gap = abar - alpha
        if np.any(gap <= 0):
            raise ConfigurationError("alpha_bar - alpha_j must be positive for every j")
        at = 1.0 / gap
        n1 = self.n_constrained
        Q = np.outer(alpha, at[:n1])
        Q[np.arange(n1), np.arange(n1)] = 0.0
        gt = np.asarray(self.gamma, dtype=float) / (2.0 * abar**2) * float(np.sum(self.a))
        bt = np.asarray(self.beta, dtype=float) + gt
        for name, val in [("alpha_bar", abar), ("alpha_tilde", at), ("Q", Q), ("gamma_tilde", gt), ("beta_tilde", bt)]:
            object.__setattr__(self, name, val)

    @property
    def n_agents(self):
        return self.alpha.shape[-1]


def coefficients_at(roster: Roster, t, price) -> CoefficientSet:
    """Limit coefficients given the current log-price ``w(t)``.

    The agent families here have n-independent coefficients that see the
    path only through its current value, so ``price`` is all that is
    needed; ``t`` is accepted for interface symmetry.  ``price`` may be an
    array of per-path values, in which case ``beta`` gains a leading axis.
    """
    del t
    return CoefficientSet(
        alpha=roster.alpha(),
        beta=roster.gbar(price),
        gamma=roster.gamma(),
        a=roster.covariance,
        sigma=roster.sigma,
        n_constrained=roster.n_constrained,
    )


# ---------------------------------------------------------------------------
# standing assumptions
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    rho_envelope: float = float("nan")
    rho_Q: float = float("nan")
    envelope: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return not self.violations


def slope_envelope(roster: Roster):
    """Dominating matrix for the constrained block of Q.

    ``V[i, j] = hi_i / sum_{m != j} lo_m`` for ``i != j``, where
    ``[lo_m, hi_m]`` is agent m's admissible negated-slope range.
    """
    n1 = roster.n_constrained
    lo = np.array([a.demand.slope_range[0] for a in roster.agents])
    hi = np.array([a.demand.slope_range[1] for a in roster.agents])
    denom = lo.sum() - lo[:n1]
    with np.errstate(divide="ignore"):
        V = np.outer(hi[:n1], 1.0 / denom)
    np.fill_diagonal(V, 0.0)
    return V


def validate_agent_set(roster: Roster | Sequence[AgentSpec]) -> ValidationReport:
    """Check the checkable standing assumptions; never raises on violations."""
    report = ValidationReport()
    if not isinstance(roster, Roster):
        try:
            roster = Roster(roster)
        except ConfigurationError as exc:
            report.violations.append(str(exc))
            return report

    N, N1 = roster.n_agents, roster.n_constrained
    v = report.violations
    if N < 2:
        v.append(f"need at least 2 agents, got {N}")
    if N1 >= N:
        v.append(
            f"N1 < N required: with N1 = N = {N} the columns of Q sum to one, so no matrix V with "
            "rho(V) < 1 can dominate Q"
        )
    for a in roster.agents:
        v.extend(f"agent {a.id}: {msg}" for msg in a.demand.violations())
        if a.initial_holdings < 0:
            v.append(f"agent {a.id}: initial holdings must be >= 0")
        if a.initial_cash < 0:
            v.append(f"agent {a.id}: initial cash must be >= 0")
    try:
        roster.sigma
    except ConfigurationError as exc:
        v.append(f"[A2] {exc}")

    if N >= 2 and not any("[A1]" in m for m in v):
        V = slope_envelope(roster)
        report.envelope = V
        info = spectral_radius_info(V)
        report.rho_envelope = info.value
        if not info.converged:
            v.append(f"[A5] spectral radius did not converge; norm bound {info.value:.6g} used")
        if info.value >= 1.0:
            v.append(f"[A5] spectral radius of the dominating matrix V is {info.value:.6g} >= 1")
        if N1 < N:
            alpha = roster.alpha()
            Q = np.outer(alpha[:N1], 1.0 / (alpha.sum() - alpha[:N1]))
            np.fill_diagonal(Q, 0.0)
            report.rho_Q = spectral_radius_info(Q).value
    return report
