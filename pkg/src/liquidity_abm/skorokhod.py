"""Discrete Skorokhod problems on the non-negative orthant.

Two solvers live here: the classical one-dimensional running-maximum map and
the oblique map in which pushing component ``j`` away from zero drags every
other component ``i`` down by ``Q[i, j]`` times the push.  Paths are arrays
with time on axis ``-2`` and the constrained components on axis ``-1``; any
leading axes are treated as a batch of independent problems.

The oblique regulator is the fixed point of

    L[k, i] = max_{l <= k} ( sum_j sum_{m < l} Q_m[i, j] dL[m, j] - Y[l, i] )_+

iterated from ``L = 0``.  With a dominating matrix ``V`` of spectral radius
below one the iteration is contractive and converges to the unique solution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, NumericalError, StructuralError

__all__ = [
    "SpectralRadius",
    "perron_weights",
    "spectral_radius",
    "spectral_radius_info",
    "ReflectionSpec",
    "SkorokhodSolution",
    "solve_discrete_skorokhod_1d",
    "solve_discrete_skorokhod_oblique",
    "oblique_fixed_point_residual",
    "regulator_push",
    "verify_prop3_bound",
    "max_modulus_ratio",
]


# ---------------------------------------------------------------------------
# spectral radius of nonnegative matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralRadius:
    value: float
    converged: bool
    iterations: int
    method: str  # "power", "eigvals" or "fallback-norm-bound"


def _perron_root(A, rtol, max_iter):
    """Perron root of an irreducible nonnegative block.

    Shifted power iteration on ``A + c I`` (the shift makes the block
    primitive), stopped on the Collatz-Wielandt bracket of ``A`` itself:
    ``min (Ax)_i / x_i <= rho(A) <= max (Ax)_i / x_i`` for any positive x.
    """
    row_bound = A.sum(axis=1).max()
    col_bound = A.sum(axis=0).max()
    shift = min(row_bound, col_bound)
    x = np.ones(A.shape[0])
    for it in range(1, max_iter + 1):
        ax = A @ x
        ratios = ax / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= rtol * hi:
            return 0.5 * (lo + hi), True, it
        y = ax + shift * x
        x = y / y.max()
    return shift, False, max_iter


def spectral_radius_info(V, rtol=1e-12, max_iter=10_000) -> SpectralRadius:
    """Spectral radius of ``|V|`` with convergence metadata.

    The matrix is split into strongly connected components; the spectral
    radius is the largest Perron root over the diagonal blocks.  A block that
    fails to converge within ``max_iter`` is handed to a dense eigenvalue
    solve; only if that fails too does it contribute the smaller of its
    maximum row and column sums, and the result is flagged.
    """
    A = np.abs(np.asarray(V, dtype=float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {A.shape}")
    if A.size == 0:
        return SpectralRadius(0.0, True, 0, "power")

    n_comp, labels = connected_components(csr_matrix(A), directed=True, connection="strong")
    rho, converged, iters, block_method = 0.0, True, 0, "power"
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        block = A[np.ix_(idx, idx)]
        method = "power"
        if len(idx) == 1:
            r, ok, it = float(block[0, 0]), True, 0
        else:
            r, ok, it = _perron_root(block, rtol, max_iter)
            if not ok:
                # nearly periodic blocks stall the power method; ask LAPACK
                ev = np.linalg.eigvals(block)
                if np.all(np.isfinite(ev)):
                    r, ok, method = float(np.abs(ev).max()), True, "eigvals"
        if r >= rho:
            rho, block_method = r, method
        converged &= ok
        iters = max(iters, it)
    if not converged:
        block_method = "fallback-norm-bound"
    return SpectralRadius(float(rho), converged, iters, block_method if n_comp else "power")


def spectral_radius(V, rtol=1e-12, max_iter=10_000) -> float:
    info = spectral_radius_info(V, rtol=rtol, max_iter=max_iter)
    if not info.converged:
        warnings.warn(
            f"power iteration did not converge in {max_iter} steps; returning norm bound {info.value:.6g}",
            RuntimeWarning,
            stacklevel=2,
        )
    return info.value


# ---------------------------------------------------------------------------
# reflection data
# ---------------------------------------------------------------------------


def perron_weights(V, eps=1e-12):
    """Positive vector ``u`` with ``V u <= (rho(V) + o(eps)) u``.

    Perron vector of ``V + eps * max(1, |V|) * ones``, which is irreducible
    even when ``V`` is not.  In the norm ``max_i |x_i| / u_i`` the matrix V
    contracts by its spectral radius.
    """
    V = np.asarray(V, dtype=float)
    n = V.shape[0]
    if n == 0:
        return np.ones(0)
    W = V + eps * max(1.0, float(V.max(initial=0.0)))
    vals, vecs = np.linalg.eig(W)
    u = np.abs(vecs[:, np.argmax(vals.real)].real)
    return u / u.max()


@dataclass(frozen=True)
class ReflectionSpec:
    """Reflection matrices for an oblique Skorokhod problem.

    ``Q`` is either a constant ``(N1, N1)`` matrix or a ``(K, N1, N1)`` stack
    with one matrix per grid step (the step's left endpoint).  ``V`` must
    dominate every ``Q`` entrywise; when omitted the entrywise maximum over
    steps is used.
    """

    Q: np.ndarray
    V: np.ndarray | None = None
    rho: float = field(init=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.ndim not in (2, 3) or Q.shape[-1] != Q.shape[-2]:
            raise ConfigurationError(f"Q must be (N1, N1) or (K, N1, N1), got {Q.shape}")
        Qmax = Q if Q.ndim == 2 else Q.max(axis=0, initial=0.0)
        V = Qmax.copy() if self.V is None else np.asarray(self.V, dtype=float)
        if V.shape != Q.shape[-2:]:
            raise ConfigurationError(f"V has shape {V.shape}, expected {Q.shape[-2:]}")

        problems = []
        if np.any(Q < 0):
            problems.append("Q has negative entries")
        diag = np.diagonal(Q, axis1=-2, axis2=-1)
        if np.any(diag != 0):
            problems.append("Q has a nonzero diagonal")
        if np.any(np.diagonal(V) != 0):
            problems.append("V has a nonzero diagonal")
        if np.any(Qmax > V + 1e-15):
            problems.append("Q is not dominated by V")
        rho = spectral_radius(V) if V.size else 0.0
        if rho >= 1.0:
            problems.append(f"spectral radius of V is {rho:.6g} >= 1")
        if problems:
            raise ConfigurationError("invalid reflection data: " + "; ".join(problems), problems)

        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "weights", perron_weights(V))

    @property
    def n_constrained(self) -> int:
        return self.Q.shape[-1]


@dataclass(frozen=True)
class SkorokhodSolution:
    L: np.ndarray  # (..., K+1, N1), nondecreasing, L[..., 0, :] = 0
    constrained_path: np.ndarray  # Y + L - int Q dL, >= 0
    iterations: int = 0
    rate: float = 0.0  # worst one-sweep contraction over the tail, Perron-weighted norm
    monotone: bool = True  # iterates nondecreasing in the iteration count


def solve_discrete_skorokhod_1d(Y):
    """Classical reflection at zero: ``Lhat_k = max_{l<=k} (-Y_l)_+``.

    Time runs along the last axis.  Returns ``(Lhat, Y + Lhat)``.
    """
    Y = np.asarray(Y, dtype=float)
    if np.any(Y[..., 0] < 0):
        raise StructuralError("initial value of Y must be nonnegative")
    Lhat = np.maximum.accumulate(np.maximum(-Y, 0.0), axis=-1)
    return Lhat, Y + Lhat


def regulator_push(L, Q):
    """``sum_j sum_{m<l} Q_m[i, j] (L[m+1, j] - L[m, j])`` for every grid index l.

    Left-endpoint discretisation of the integral of Q against dL.
    """
    dL = np.diff(L, axis=-2)
    if Q.ndim == 2:
        incr = dL @ Q.T
    else:
        incr = np.einsum("kij,...kj->...ki", Q, dL)
    push = np.zeros_like(L)
    np.cumsum(incr, axis=-2, out=push[..., 1:, :])
    return push


def _skorokhod_map(L, Y, Q):
    push = regulator_push(L, Q)
    return np.maximum.accumulate(np.maximum(push - Y, 0.0), axis=-2)


def _check_oblique_input(Y, spec):
    Y = np.asarray(Y, dtype=float)
    if Y.ndim < 2:
        raise StructuralError("Y must have shape (..., K+1, N1)")
    if Y.shape[-1] != spec.n_constrained:
        raise StructuralError(f"Y has {Y.shape[-1]} components, reflection data has {spec.n_constrained}")
    if spec.Q.ndim == 3 and spec.Q.shape[0] != Y.shape[-2] - 1:
        raise StructuralError(f"Q path has {spec.Q.shape[0]} steps, Y has {Y.shape[-2] - 1}")
    if np.any(Y[..., 0, :] < 0):
        raise StructuralError("initial value of Y must be nonnegative")
    return Y


def solve_discrete_skorokhod_oblique(Y, spec: ReflectionSpec, tol=1e-12, max_iter=10_000) -> SkorokhodSolution:
    """Minimal regulator of the oblique discrete Skorokhod problem.

    Fixed-point iteration of the max formula from ``L = 0``; stops once
    successive iterates agree to ``tol`` (scaled by ``max(1, |Y|)``) in the
    max norm.  Raises :class:`NumericalError` after ``max_iter`` sweeps.
    """
    Y = _check_oblique_input(Y, spec)
    Q = spec.Q
    scale = max(1.0, float(np.abs(Y).max(initial=0.0)))
    thresh = tol * scale

    L = np.zeros_like(Y)
    diffs, weighted = [], []
    monotone = True
    lead = tuple(range(Y.ndim - 1))
    for it in range(1, max_iter + 1):
        L_new = _skorokhod_map(L, Y, Q)
        step = L_new - L
        per_comp = np.abs(step).max(axis=lead, initial=0.0) if step.size else np.zeros(0)
        d = float(per_comp.max(initial=0.0))
        if step.min(initial=0.0) < -thresh:
            monotone = False
        L = L_new
        diffs.append(d)
        weighted.append(float((per_comp / spec.weights).max(initial=0.0)))
        if d < thresh:
            break
    else:
        raise NumericalError(f"oblique Skorokhod iteration did not converge in {max_iter} sweeps (last change {d:.3g})")

    phi = Y + L - regulator_push(L, Q)
    return SkorokhodSolution(L, phi, it, _tail_rate(diffs, weighted, thresh), monotone)


def _tail_rate(diffs, weighted, floor, window=20):
    """Largest one-sweep contraction over the last ``window`` sweeps.

    Changes are measured in the Perron-weighted norm, where each sweep of a
    constant-Q problem contracts by at most rho(V); sweeps whose change has
    sunk to within 1e3 of the rounding floor are ignored.
    """
    keep = [w for d, w in zip(diffs, weighted) if d > 1e3 * floor][-(window + 1) :]
    ratios = [b / a for a, b in zip(keep, keep[1:]) if a > 0]
    return max(ratios, default=0.0)


def oblique_fixed_point_residual(Y, L, spec: ReflectionSpec) -> float:
    """Max-norm gap between ``L`` and the max formula evaluated at ``L``."""
    Y = _check_oblique_input(Y, spec)
    return float(np.abs(_skorokhod_map(np.asarray(L, float), Y, spec.Q) - L).max(initial=0.0))


# ---------------------------------------------------------------------------
# regulator modulus
# ---------------------------------------------------------------------------


def verify_prop3_bound(Y, solution: SkorokhodSolution, l: int, k: int):
    """Both sides of the regulator modulus bound between grid steps l <= k.

    Returns ``(sum_i |L_k - L_l|^2, max_{l<=m<=k} sum_i |Y_m - Y_l|^2)``; the
    constant relating them depends only on the dominating matrix and is left
    to the caller.
    """
    if not 0 <= l <= k:
        raise ValueError("need 0 <= l <= k")
    Y = np.asarray(Y, dtype=float)
    L = solution.L
    lhs = float(np.sum((L[..., k, :] - L[..., l, :]) ** 2))
    seg = Y[..., l : k + 1, :] - Y[..., l : l + 1, :]
    rhs = float(np.max(np.sum(seg**2, axis=-1)))
    return lhs, rhs


def max_modulus_ratio(Y, L, eps=1e-12) -> float:
    """Largest ``lhs / rhs_raw`` of the modulus bound over all pairs ``l < k``.

    Works on one problem, ``Y`` and ``L`` of shape ``(K+1, N1)``.
    """
    Y = np.asarray(Y, dtype=float)
    L = np.asarray(L, dtype=float)
    K1 = Y.shape[0]
    dy = np.sum((Y[None, :, :] - Y[:, None, :]) ** 2, axis=-1)  # [l, m]
    dy = np.triu(dy)
    rhs = np.maximum.accumulate(dy, axis=1)  # [l, k] = max_{l<=m<=k}
    lhs = np.sum((L[None, :, :] - L[:, None, :]) ** 2, axis=-1)
    mask = np.triu(np.ones((K1, K1), dtype=bool), 1) & (rhs > eps)
    if not mask.any():
        return 0.0
    return float(np.max(lhs[mask] / rhs[mask]))
