"""Simulated trajectories, per-path random streams and CSV serialisation."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

FLOAT_FMT = "%.17g"

# independent random streams inside one scenario
STREAM_MARKET = 0
STREAM_PANEL = 1
STREAM_REFERENCE = 2


def path_rng(master_seed: int, path_index: int, stream: int = STREAM_MARKET) -> np.random.Generator:
    """Generator for one path, keyed by ``(master_seed, stream, path_index)``.

    Every path owns its stream, so results do not depend on how paths are
    batched or distributed over workers.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(path_index)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class PathGrid:
    """A batch of ``P`` trajectories on the grid ``t_k = k dt``, k = 0..K.

    ``positions`` holds share holdings (models I and frictionless, reflected
    model I) or cash (model II).  ``dL`` are the regulator increments that
    build ``L``; for discrete paths they are the rescaled clamp gaps and
    ``eta_hat`` the raw ones.
    """

    model: str
    times: np.ndarray  # (K+1,)
    X: np.ndarray  # (P, K+1)
    positions: np.ndarray | None = None  # (P, K+1, N)
    position_kind: str = "holdings"
    dL: np.ndarray | None = None  # (P, K, N1)
    eta_hat: np.ndarray | None = None  # (P, K, N1)
    z_incr: np.ndarray | None = None  # (P, K, N), discrete paths only
    residual: np.ndarray | None = None  # (P, K) clearing residual
    residual_scale: np.ndarray | None = None  # (P, K)
    alpha: np.ndarray | None = None  # (N,) negated demand slopes at the current price
    path_ids: np.ndarray | None = None
    interpolation: str = "linear"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.path_ids is None:
            self.path_ids = np.arange(self.X.shape[0])

    @property
    def n_paths(self):
        return self.X.shape[0]

    @property
    def n_steps(self):
        return self.X.shape[1] - 1

    @property
    def n_constrained(self):
        return 0 if self.dL is None else self.dL.shape[-1]

    @staticmethod
    def _cumulate(incr):
        out = np.zeros(incr.shape[:-2] + (incr.shape[-2] + 1, incr.shape[-1]))
        np.cumsum(incr, axis=-2, out=out[..., 1:, :])
        return out

    @property
    def L(self):
        """Cumulative regulator at grid points, ``(P, K+1, N1)``."""
        if self.dL is None:
            return np.zeros(self.X.shape + (0,))
        return self._cumulate(self.dL)

    @property
    def L_hat(self):
        if self.eta_hat is None:
            return None
        return self._cumulate(self.eta_hat)

    def __getitem__(self, p):
        idx = slice(p, p + 1) if isinstance(p, (int, np.integer)) else p

        def cut(a):
            return None if a is None else a[idx]

        return replace(
            self,
            X=self.X[idx],
            positions=cut(self.positions),
            dL=cut(self.dL),
            eta_hat=cut(self.eta_hat),
            z_incr=cut(self.z_incr),
            residual=cut(self.residual),
            residual_scale=cut(self.residual_scale),
            path_ids=self.path_ids[idx],
            meta=dict(self.meta),
        )

    def at(self, t, interpolation=None):
        """Interpolated ``(X, positions, L)`` at time ``t``; leading axis is the path."""
        mode = interpolation or self.interpolation
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else 1.0
        s = np.clip(t / dt, 0.0, self.n_steps)
        k = min(int(np.floor(s)), max(self.n_steps - 1, 0))
        frac = s - k if mode == "linear" else float(s >= self.n_steps)

        def interp(a):
            if a is None:
                return None
            if self.n_steps == 0:
                return a[:, 0]
            return (1.0 - frac) * a[:, k] + frac * a[:, k + 1]

        return interp(self.X), interp(self.positions), interp(self.L)

    @classmethod
    def concat(cls, grids):
        grids = list(grids)
        first = grids[0]

        def cat(name):
            vals = [getattr(g, name) for g in grids]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        return replace(
            first,
            X=cat("X"),
            positions=cat("positions"),
            dL=cat("dL"),
            eta_hat=cat("eta_hat"),
            z_incr=cat("z_incr"),
            residual=cat("residual"),
            residual_scale=cat("residual_scale"),
            path_ids=cat("path_ids"),
        )

    # ------------------------------------------------------------------ csv

    def csv_columns(self):
        cols = ["path", "time", "X"]
        sym = "W" if self.position_kind == "cash" else "phi"
        if self.positions is not None:
            cols += [f"{sym}_{i + 1}" for i in range(self.positions.shape[-1])]
        if self.eta_hat is not None:
            cols += [f"Lhat_{i + 1}" for i in range(self.n_constrained)]
        if self.dL is not None:
            cols += [f"L_{i + 1}" for i in range(self.n_constrained)]
        return cols

    def to_rows(self):
        """Long-format numeric matrix, one row per (path, grid time)."""
        P, K1 = self.X.shape
        blocks = [
            np.repeat(self.path_ids.astype(float), K1)[:, None],
            np.tile(self.times, P)[:, None],
            self.X.reshape(-1, 1),
        ]
        if self.positions is not None:
            blocks.append(self.positions.reshape(P * K1, -1))
        if self.eta_hat is not None:
            blocks.append(self.L_hat.reshape(P * K1, -1))
        if self.dL is not None:
            blocks.append(self.L.reshape(P * K1, -1))
        return np.hstack(blocks)

    def to_csv(self, target):
        """Write the long-format CSV (17 significant digits) to a path or text stream."""
        rows = self.to_rows()
        own = not hasattr(target, "write")
        fh = open(target, "w", newline="") if own else target
        try:
            fh.write(",".join(self.csv_columns()) + "\n")
            np.savetxt(fh, rows, fmt=FLOAT_FMT, delimiter=",")
        finally:
            if own:
                fh.close()

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def read_csv_matrix(path):
    """Numeric CSV with a header row -> ``(header, array)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data


def write_csv_matrix(path, header, data):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, np.atleast_2d(data), fmt=FLOAT_FMT, delimiter=",")


def chunked(indices, size):
    indices = list(indices)
    return [indices[i : i + size] for i in range(0, len(indices), size)]


def run_chunks(func, args, path_indices, chunk_size=1000, workers=1):
    """Apply ``func(*args, chunk)`` over path-index chunks, in order.

    ``workers > 1`` fans chunks out to processes; the chunk order, and hence
    the concatenated result, is the same either way.
    """
    chunks = chunked(path_indices, chunk_size)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(chunks) <= 1:
        return [func(*args, c) for c in chunks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(func, *args, c) for c in chunks]
        return [f.result() for f in futures]
