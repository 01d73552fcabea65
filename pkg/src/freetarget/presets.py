"""Initial densities and ceilings for the worked examples, sampled as cell
averages so that discontinuities falling on a node get the fractional value."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .grid import DensityField, GridSpec


def cell_average(grid: GridSpec, func: Callable[..., np.ndarray], sub: int = 8) -> np.ndarray:
    """Average ``func`` over the dual cell ``[x - h/2, x + h/2]^d`` of each node.

    Uses ``sub`` midpoint samples per axis; for indicators of intervals whose
    endpoints sit on nodes or cell faces this is exact when ``sub`` is even.
    """
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    mesh = grid.mesh()
    acc = np.zeros(grid.shape)
    if grid.dim == 1:
        for a in offs:
            acc += func(mesh[0] + a * grid.h[0])
        return acc / sub
    for a in offs:
        for b in offs:
            acc += func(mesh[0] + a * grid.h[0], mesh[1] + b * grid.h[1])
    return acc / sub ** 2


def box_indicator(lo: float, hi: float, height: float = 1.0):
    return lambda x: np.where((x >= lo) & (x <= hi), height, 0.0)


def ball_indicator(radius: float, height: float = 1.0, center=(0.0, 0.0)):
    cx, cy = center
    return lambda x, y: np.where((x - cx) ** 2 + (y - cy) ** 2 <= radius * radius, height, 0.0)


def density(grid: GridSpec, func, sub: int = 8) -> DensityField:
    return DensityField(grid, cell_average(grid, func, sub))


def constant(grid: GridSpec, value: float) -> DensityField:
    return DensityField(grid, np.full(grid.shape, float(value)))


def benchmark_1d(h: float = 1 / 64, half_width: float = 4.0,
                 f_value: float = 1.0) -> tuple[GridSpec, DensityField, DensityField]:
    """``mu = 2 chi_[-1,1]``, constant ceiling. For ``f = 1`` the target is ``chi_[-2,2]``."""
    g = GridSpec.uniform(-half_width, half_width, h, 1)
    return g, density(g, box_indicator(-1.0, 1.0, 2.0)), constant(g, f_value)


def ball_2d(h: float = 1 / 32, half_width: float = 4.0,
            sub: int = 8) -> tuple[GridSpec, DensityField, DensityField]:
    """``mu = 4 chi_{B_1}``, ``f = 1``; the target is ``chi_{B_2}``."""
    g = GridSpec.uniform(-half_width, half_width, h, 2)
    return g, density(g, ball_indicator(1.0, 4.0), sub), constant(g, 1.0)


def k_complement_2d(h: float = 1 / 32, half_width: float = 2.0, k_radius: float = 1.0,
                    mu_radius: float = 0.5, sub: int = 8):
    """``f = chi_{K^c}`` with ``K`` the closed disc of radius ``k_radius``;
    ``mu`` uniform on a smaller disc with unit mass. Returns ``(grid, mu, f, K mask)``."""
    g = GridSpec.uniform(-half_width, half_width, h, 2)
    height = 1.0 / (math.pi * mu_radius ** 2)
    mu = density(g, ball_indicator(mu_radius, height), sub)
    k_frac = cell_average(g, ball_indicator(k_radius, 1.0), sub)
    f = DensityField(g, 1.0 - k_frac)
    return g, mu, f, g.radius() <= k_radius


def pair_1d(ordered: bool = True, h: float = 1 / 64, half_width: float = 4.0):
    """Two 1D densities with ``f = 1``. Ordered: the benchmark ``mu`` and the
    same plus a box on ``[1.5, 2]``. Unordered: the benchmark ``mu`` and a copy
    shifted right by ``1/2``."""
    g = GridSpec.uniform(-half_width, half_width, h, 1)
    mu1 = density(g, box_indicator(-1.0, 1.0, 2.0))
    if ordered:
        mu2 = DensityField(g, mu1.values + density(g, box_indicator(1.5, 2.0, 1.0)).values)
    else:
        mu2 = density(g, box_indicator(-0.5, 1.5, 2.0))
    return g, mu1, mu2, constant(g, 1.0)
