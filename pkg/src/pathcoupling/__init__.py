"""Couplings and rotation-based transports between SDE laws on path space.

The package simulates coupled Brownian drivers with a prescribed
instantaneous correlation, transports them through Euler–Maruyama
Itô maps, builds rotation-integral Monge couplings, evaluates adapted
transport costs (including a closed form for separable costs), and
ships statistical diagnostics for the structural properties a coupling
claims to have.
"""

__version__ = "0.1.0"

from . import linalg  # noqa: F401
from .errors import (  # noqa: F401
    ConfigError,
    DimensionError,
    DomainError,
    PathCouplingError,
    SingularDiffusionError,
)
