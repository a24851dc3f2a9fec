"""Screening single-line failures in oscillator power-grid models.

Stages: scenario generation, swing-equation failure simulation, static line
features, tree-ensemble classifiers and their evaluation.
"""
from ._backend import BACKEND
from .grid import (
    DCFlow,
    PowerGrid,
    SteadyState,
    build_laplacian,
    connectivity_components,
    solve_dc_flow,
    solve_steady_state,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DCFlow",
    "PowerGrid",
    "SteadyState",
    "build_laplacian",
    "connectivity_components",
    "solve_dc_flow",
    "solve_steady_state",
]
