"""Builders for the test systems used throughout the package."""

from __future__ import annotations

import numpy as np

from .geometry import MetricField, OneFormField, PeriodicGrid, PotentialField
from .hj_solver import MagneticSystem


def pendulum(n: int) -> MagneticSystem:
    """Circle with ``V = cos(2 pi x) - 1``, flat metric, no magnetic term."""
    grid = PeriodicGrid(1, n)
    x = grid.coords()[..., 0]
    return MagneticSystem(
        grid, MetricField.flat(grid), OneFormField.zero(grid),
        PotentialField(grid, np.cos(2.0 * np.pi * x) - 1.0), "pendulum",
    )


def magnetic_circle(n: int, a: float = 1.0) -> MagneticSystem:
    """Circle with the non-exact form ``a dx`` and ``V = 0``."""
    grid = PeriodicGrid(1, n)
    return MagneticSystem(
        grid, MetricField.flat(grid), OneFormField.constant(grid, [a]),
        PotentialField.zero(grid), "magnetic-1d",
    )


def magnetic_torus(n: int, omega=(0.3, 0.0), amplitude: float = 0.5) -> MagneticSystem:
    """2-torus with constant ``omega`` and ``V = -A (1 - cos 2 pi x)(1 - cos 2 pi y)``."""
    grid = PeriodicGrid(2, n)
    xy = grid.coords()
    V = -amplitude * (1.0 - np.cos(2.0 * np.pi * xy[..., 0])) * (1.0 - np.cos(2.0 * np.pi * xy[..., 1]))
    return MagneticSystem(
        grid, MetricField.flat(grid), OneFormField.constant(grid, omega),
        PotentialField(grid, V), "magnetic-2d",
    )


def flat_torus(n: int) -> MagneticSystem:
    """Flat 2-torus with ``omega = 0``, ``V = 0``; used for distance functions."""
    grid = PeriodicGrid(2, n)
    return MagneticSystem(
        grid, MetricField.flat(grid), OneFormField.zero(grid), PotentialField.zero(grid),
        "torus-distance",
    )
