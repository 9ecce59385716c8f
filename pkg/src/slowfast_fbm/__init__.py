"""Simulation and limit theorems for slow-fast SDEs driven by fractional Brownian motion."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    ExpressionError,
    NumericalError,
    PreconditionError,
    SimulationError,
    SlowFastError,
)
from .fbm_noise import HurstParameter, covariance_rh, fgn_autocovariance, h_inner_product, sample_fbm  # noqa: E402
from .model import ModelSpec, ScaleParams, get_model  # noqa: E402
