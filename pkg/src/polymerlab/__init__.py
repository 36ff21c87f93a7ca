"""polymerlab: Monte Carlo laboratory for mollified continuum directed polymers."""

from .rng import SeedStream
from .mollifier import Mollifier, CovarianceKernel, phi_value, kernel_value, kernel_integral

__version__ = "0.1.0"

__all__ = [
    "SeedStream",
    "Mollifier",
    "CovarianceKernel",
    "phi_value",
    "kernel_value",
    "kernel_integral",
]
