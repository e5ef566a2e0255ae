"""Identification of distributed PDE coefficients with adaptively reduced
Gauss-Newton iterations."""

__version__ = "0.1.0"

from .fem import Counters, StructuredGrid, interpolate
from .model import ForwardModel, ProblemKind, generate_noisy_data

__all__ = [
    "Counters",
    "ForwardModel",
    "ProblemKind",
    "StructuredGrid",
    "generate_noisy_data",
    "interpolate",
    "__version__",
]
