"""Radner equilibria with quadratic transaction costs.

Submodules: :mod:`matrix_kit` (dense linear algebra helpers), :mod:`market`
(parameters and the frictionless benchmark), :mod:`riccati` (the coupled
matrix ODEs), :mod:`equilibrium` (prices, strategies, simulation and
verification), :mod:`asymptotics` (small-cost expansions) and
:mod:`calibration`.
"""

__version__ = "0.1.0"

from .errors import ArtifactError, NumericalError, ValidationError  # noqa: E402
from .market import ModelParams, risk_aggregates, validate  # noqa: E402
from .riccati import solve_riccati  # noqa: E402

__all__ = [
    "ArtifactError",
    "ModelParams",
    "NumericalError",
    "ValidationError",
    "__version__",
    "risk_aggregates",
    "solve_riccati",
    "validate",
]
