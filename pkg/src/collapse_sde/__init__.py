"""Simulation tools for stochastic spontaneous-collapse dynamics of a free particle."""
from .errors import CollapseError
from .noise import NoisePath
from .records import TrajectoryRecord
from .state import GaussianState, GridSpec, PhysicalParams, WaveFunction, normalize, observables, render_gaussian

__all__ = [
    "CollapseError",
    "GaussianState",
    "GridSpec",
    "NoisePath",
    "PhysicalParams",
    "TrajectoryRecord",
    "WaveFunction",
    "normalize",
    "observables",
    "render_gaussian",
]
__version__ = "0.1.0"
