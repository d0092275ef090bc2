"""Uniform-grid helpers shared by the solver and spectral modules.

Every edge is parametrized over [0, 1] with n cells, n + 1 nodes, and
dx = 1/n. All spatial quadrature is composite trapezoid on this grid.
"""

from __future__ import annotations

import numpy as np


def grid_points(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n + 1)


def trapezoid_weights(n: int) -> np.ndarray:
    """Weights w with sum(w * f) = trapezoid integral of f over [0, 1]."""
    w = np.full(n + 1, 1.0 / n)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def cumulative_trapezoid(values: np.ndarray, dx: float) -> np.ndarray:
    """Running trapezoid integral with the same length as `values`; [0] = 0."""
    out = np.zeros(len(values), dtype=np.result_type(values, float))
    np.cumsum(0.5 * dx * (values[1:] + values[:-1]), out=out[1:])
    return out
