"""Analytic and Monte Carlo UE rates for carrier-aggregation HetNets on Poisson layouts."""

from .model import (
    Band,
    ConfigError,
    DeploymentMatrix,
    NetworkConfig,
    Tier,
    ValidationReport,
    k_star,
    orthogonal,
    universal,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "Band",
    "ConfigError",
    "DeploymentMatrix",
    "NetworkConfig",
    "Tier",
    "ValidationReport",
    "k_star",
    "orthogonal",
    "universal",
    "validate",
    "__version__",
]
