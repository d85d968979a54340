import os
from pathlib import Path

import numpy as np
import pytest

from liquidity_abm.agents import AgentSpec, DemandFamily, Roster
from liquidity_abm.config import MarketConfig, Model, parse_config

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def linear_roster(alphas, n_constrained, holdings=None, cash=None, drift=None, cov=None, drift_slope=None):
    N = len(alphas)
    holdings = np.ones(N) if holdings is None else holdings
    cash = np.ones(N) if cash is None else cash
    drift = np.zeros(N) if drift is None else drift
    drift_slope = np.zeros(N) if drift_slope is None else drift_slope
    cov = np.zeros((N, N)) if cov is None else np.asarray(cov)
    return Roster(
        AgentSpec(
            id=i,
            group="constrained" if i < n_constrained else "unconstrained",
            demand=DemandFamily.linear(float(alphas[i])),
            initial_holdings=float(holdings[i]),
            initial_cash=float(cash[i]),
            drift=float(drift[i]),
            drift_slope=float(drift_slope[i]),
            noise_cov=tuple(cov[i]),
        )
        for i in range(N)
    )


def market(roster, model=Model.MODEL_I, **kw):
    return MarketConfig(roster=roster, model=model, **kw)


@pytest.fixture
def demo():
    return parse_config(SCENARIOS / "model_I_demo.yaml")


@pytest.fixture
def scenario():
    return lambda name: parse_config(SCENARIOS / f"{name}.yaml")


@pytest.fixture(autouse=True)
def _no_default_out(monkeypatch, tmp_path):
    monkeypatch.setenv("LIQUIDITY_ABM_OUT", os.fspath(tmp_path / "default_out"))


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
