"""Temporary-equilibrium stock market with short-sale and budget constraints.

Discrete-time market clearing, discrete Skorokhod solvers, the reflected
SDE limits and the Monte Carlo diagnostics that tie them together.
"""

__version__ = "0.1.0"

from .agents import AgentSpec, CoefficientSet, DemandFamily, Group, Roster, coefficients_at, validate_agent_set
from .clearing import simulate_discrete, simulate_discrete_path, simulate_fs, solve_temporary_equilibrium
from .config import MarketConfig, Model, ScenarioConfig, parse_config
from .errors import ConfigurationError, NumericalError, StructuralError
from .paths import PathGrid
from .sder import BrownianPanel, assemble_drift_diffusion, simulate_frictionless, simulate_sder
from .skorokhod import (
    ReflectionSpec,
    solve_discrete_skorokhod_1d,
    solve_discrete_skorokhod_oblique,
    spectral_radius,
)

__all__ = [
    "AgentSpec",
    "BrownianPanel",
    "CoefficientSet",
    "ConfigurationError",
    "DemandFamily",
    "Group",
    "MarketConfig",
    "Model",
    "NumericalError",
    "PathGrid",
    "ReflectionSpec",
    "Roster",
    "ScenarioConfig",
    "StructuralError",
    "assemble_drift_diffusion",
    "coefficients_at",
    "parse_config",
    "simulate_discrete",
    "simulate_discrete_path",
    "simulate_frictionless",
    "simulate_fs",
    "simulate_sder",
    "solve_discrete_skorokhod_1d",
    "solve_discrete_skorokhod_oblique",
    "solve_temporary_equilibrium",
    "spectral_radius",
    "validate_agent_set",
]
