"""Scenario description: parsing, validation and canonical serialisation.

Scenarios are YAML documents.  Top-level keys::

    model: ModelI | ModelII | Frictionless | FSBaseline | SDER_I | SDER_II
    x0: 0.0              # initial log-price
    T: 1.0               # horizon
    n: 256               # grid steps per unit time (dt = 1/n for SDER models)
    paths: 1
    master_seed: 0
    interpolation: linear  # or step
    workers: null        # null -> all cores
    agents:              # constrained agents first
      - group: constrained
        demand: {kind: linear, alpha: 1.0}
        # or {kind: saturating, delta0: 0.5, K0: 2.0, kappa: 1.0}
        initial_holdings: 1.0   # model I
        initial_cash: 0.0       # model II
        drift: 0.0              # gbar = drift + drift_slope * current log-price
        drift_slope: 0.0
        noise_cov: [1.0, 0.0]   # this agent's row of the noise covariance
    fs: {beta_bar: -1.0, F_bar: 0.0, sigma_bar: 0.5}   # FSBaseline only
    outputs: {dir: out, write_paths: true}
    diagnostics: {levels: [16, 64, 256], reference_n: 4096, paths: 10000}

Only ``model`` and ``agents`` (or ``fs`` for FSBaseline) are required.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace

import yaml

from .agents import AgentSpec, DemandFamily, DemandKind, Group, Roster, validate_agent_set
from .errors import ConfigurationError


class Model(str, enum.Enum):
    MODEL_I = "ModelI"
    MODEL_II = "ModelII"
    FRICTIONLESS = "Frictionless"
    FS_BASELINE = "FSBaseline"
    SDER_I = "SDER_I"
    SDER_II = "SDER_II"

    @property
    def constrained(self):
        return self in (Model.MODEL_I, Model.MODEL_II, Model.SDER_I, Model.SDER_II)

    @property
    def is_sder(self):
        return self in (Model.SDER_I, Model.SDER_II)

    @property
    def variant(self):
        """``"I"``, ``"II"`` or ``None`` for unconstrained models."""
        if self in (Model.MODEL_I, Model.SDER_I):
            return "I"
        if self in (Model.MODEL_II, Model.SDER_II):
            return "II"
        return None


@dataclass(frozen=True)
class FSParams:
    """Continuous-time constants of the linear-demand baseline."""

    beta_bar: float
    F_bar: float
    sigma_bar: float


@dataclass(frozen=True)
class MarketConfig:
    roster: Roster | None
    model: Model
    x0: float = 0.0
    T: float = 1.0
    n: int = 256
    master_seed: int = 0
    interpolation: str = "linear"
    fs: FSParams | None = None

    @property
    def steps(self) -> int:
        return int(math.floor(self.n * self.T + 1e-9))

    @property
    def dt(self) -> float:
        return 1.0 / self.n

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class ScenarioConfig:
    market: MarketConfig
    paths: int = 1
    workers: int | None = None
    out_dir: str | None = None
    write_paths: bool = True
    levels: tuple = (16, 64, 256)
    reference_n: int = 4096
    diagnostic_paths: int = 10_000


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _require(d, key, where):
    if key not in d:
        raise ConfigurationError(f"missing required key '{key}' in {where}", [f"missing key: {key}"])
    return d[key]


def _agent_from_dict(i, d):
    where = f"agents[{i}]"
    dem = _require(d, "demand", where)
    kind = DemandKind(_require(dem, "kind", f"{where}.demand"))
    if kind is DemandKind.LINEAR:
        fam = DemandFamily.linear(
            float(_require(dem, "alpha", f"{where}.demand")),
            delta0=dem.get("delta0"),
            K0=dem.get("K0"),
        )
    else:
        fam = DemandFamily.saturating(
            float(_require(dem, "delta0", f"{where}.demand")),
            float(_require(dem, "K0", f"{where}.demand")),
            float(dem.get("kappa", 1.0)),
        )
    return AgentSpec(
        id=i,
        group=Group(_require(d, "group", where)),
        demand=fam,
        initial_holdings=float(d.get("initial_holdings", 0.0)),
        initial_cash=float(d.get("initial_cash", 0.0)),
        drift=float(d.get("drift", 0.0)),
        drift_slope=float(d.get("drift_slope", 0.0)),
        noise_cov=tuple(d.get("noise_cov", ())),
    )


def config_from_dict(d) -> ScenarioConfig:
    """Build and validate a scenario; raises :class:`ConfigurationError`."""
    if not isinstance(d, dict):
        raise ConfigurationError("scenario must be a mapping")
    try:
        model = Model(_require(d, "model", "scenario"))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc

    roster = None
    if model is not Model.FS_BASELINE or "agents" in d:
        agents = _require(d, "agents", "scenario")
        try:
            roster = Roster([_agent_from_dict(i, a) for i, a in enumerate(agents)])
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad agent description: {exc}") from exc

    fs = None
    if model is Model.FS_BASELINE:
        f = _require(d, "fs", "scenario")
        fs = FSParams(
            float(_require(f, "beta_bar", "fs")), float(_require(f, "F_bar", "fs")), float(_require(f, "sigma_bar", "fs"))
        )

    out = d.get("outputs") or {}
    diag = d.get("diagnostics") or {}
    market = MarketConfig(
        roster=roster,
        model=model,
        x0=float(d.get("x0", 0.0)),
        T=float(d.get("T", 1.0)),
        n=int(d.get("n", 256)),
        master_seed=int(d.get("master_seed", 0)),
        interpolation=str(d.get("interpolation", "linear")),
        fs=fs,
    )
    cfg = ScenarioConfig(
        market=market,
        paths=int(d.get("paths", 1)),
        workers=d.get("workers"),
        out_dir=out.get("dir"),
        write_paths=bool(out.get("write_paths", True)),
        levels=tuple(int(v) for v in diag.get("levels", (16, 64, 256))),
        reference_n=int(diag.get("reference_n", 4096)),
        diagnostic_paths=int(diag.get("paths", 10_000)),
    )
    violations = validate_config(cfg)
    if violations:
        raise ConfigurationError("invalid scenario:\n  " + "\n  ".join(violations), violations)
    return cfg


def validate_config(cfg: ScenarioConfig):
    m = cfg.market
    v = []
    if not m.T > 0:
        v.append(f"T must be positive, got {m.T}")
    if m.n < 1:
        v.append(f"resolution n must be >= 1, got {m.n}")
    if cfg.paths < 1:
        v.append(f"paths must be >= 1, got {cfg.paths}")
    if m.interpolation not in ("linear", "step"):
        v.append(f"interpolation must be 'linear' or 'step', got {m.interpolation!r}")
    if not 0 <= m.master_seed < 2**64:
        v.append("master_seed must be a 64-bit unsigned integer")
    if m.roster is not None:
        report = validate_agent_set(m.roster)
        for msg in report.violations:
            # N1 and [A5] only matter when the constraints are in force
            if not m.model.constrained and (msg.startswith("N1 < N") or msg.startswith("[A5]")):
                continue
            v.append(msg)
    if m.model is Model.FS_BASELINE and m.fs is not None and m.fs.sigma_bar < 0:
        v.append("fs.sigma_bar must be >= 0")
    return v


def parse_config(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            d = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"could not parse {path}: {exc}") from exc
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def _agent_to_dict(a: AgentSpec):
    dem = {"kind": a.demand.kind.value}
    if a.demand.kind is DemandKind.LINEAR:
        dem.update(alpha=a.demand.alpha, delta0=a.demand.delta0, K0=a.demand.K0)
    else:
        dem.update(delta0=a.demand.delta0, K0=a.demand.K0, kappa=a.demand.kappa)
    return {
        "group": a.group.value,
        "demand": dem,
        "initial_holdings": a.initial_holdings,
        "initial_cash": a.initial_cash,
        "drift": a.drift,
        "drift_slope": a.drift_slope,
        "noise_cov": list(a.noise_cov),
    }


def config_to_dict(cfg: ScenarioConfig) -> dict:
    m = cfg.market
    d = {
        "model": m.model.value,
        "x0": m.x0,
        "T": m.T,
        "n": m.n,
        "paths": cfg.paths,
        "master_seed": m.master_seed,
        "interpolation": m.interpolation,
        "workers": cfg.workers,
    }
    if m.roster is not None:
        d["agents"] = [_agent_to_dict(a) for a in m.roster.agents]
    if m.fs is not None:
        d["fs"] = {"beta_bar": m.fs.beta_bar, "F_bar": m.fs.F_bar, "sigma_bar": m.fs.sigma_bar}
    d["outputs"] = {"dir": cfg.out_dir, "write_paths": cfg.write_paths}
    d["diagnostics"] = {"levels": list(cfg.levels), "reference_n": cfg.reference_n, "paths": cfg.diagnostic_paths}
    return d


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def config_hash(cfg: ScenarioConfig) -> str:
    """SHA-256 of the canonical JSON form; output location and worker count excluded."""
    d = config_to_dict(cfg)
    d.pop("workers", None)
    d["outputs"].pop("dir", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
