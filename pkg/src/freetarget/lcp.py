"""Projected SOR for grid linear complementarity problems.

Solves: find ``lo <= w <= up`` with ``A w + q`` >= 0 where ``w > lo``,
<= 0 where ``w < up`` and = 0 in between, for a symmetric M-matrix stencil
``A`` with homogeneous Dirichlet data on the box faces. With ``lo = 0`` and
no upper bound this is the classical LCP ``w >= 0, Aw + q >= 0,
w (Aw + q) = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NonConvergence
from .grid import GridSpec, ScalarField

DEFAULT_OMEGA = 1.5
DEFAULT_TOL = 1e-10


@dataclass(frozen=True)
class StencilOperator:
    """``(A w)_i = diag * w_i + sum_k off[k] * (w_{i+e_k} + w_{i-e_k})``."""

    grid: GridSpec
    diag: float
    off: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.diag <= 0:
            raise ValueError("diagonal must be positive")
        if any(c > 0 for c in self.off):
            raise ValueError("off-diagonal coefficients must be <= 0 (M-matrix)")
        if self.diag < 2 * sum(-c for c in self.off) * (1 - 1e-12):
            raise ValueError("stencil is not diagonally dominant")

    @classmethod
    def neg_laplacian(cls, grid: GridSpec) -> "StencilOperator":
        return cls(grid, sum(2.0 / (h * h) for h in grid.h),
                   tuple(-1.0 / (h * h) for h in grid.h))

    @classmethod
    def heat_step(cls, grid: GridSpec, dt: float) -> "StencilOperator":
        """``I - (dt/2) Delta_h``: one implicit Euler step of ``w_t = Delta w / 2``."""
        return cls(grid, 1.0 + sum(dt / (h * h) for h in grid.h),
                   tuple(-0.5 * dt / (h * h) for h in grid.h))

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        out = np.zeros_like(w)
        inner = (slice(1, -1),) * self.grid.dim
        out[inner] = self.diag * w[inner]
        for ax, c in enumerate(self.off):
            fwd = [slice(1, -1)] * self.grid.dim
            bwd = [slice(1, -1)] * self.grid.dim
            fwd[ax] = slice(2, None)
            bwd[ax] = slice(None, -2)
            out[inner] += c * (w[tuple(fwd)] + w[tuple(bwd)])
        return out

    def sor_omega(self) -> float:
        """Optimal SOR factor for the unconstrained problem on the full box."""
        rho = sum(-2.0 * c * math.cos(math.pi / (k - 1))
                  for c, k in zip(self.off, self.grid.n)) / self.diag
        rho = min(rho, 1.0 - 1e-15)
        return 2.0 / (1.0 + math.sqrt(1.0 - rho * rho))


@dataclass(frozen=True)
class LcpProblem:
    A: StencilOperator
    q: ScalarField
    tolerance: float = DEFAULT_TOL
    max_sweeps: int = 200_000
    omega: float = DEFAULT_OMEGA
    lower: np.ndarray | None = field(default=None, repr=False)
    upper: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.omega < 2:
            raise ValueError(f"relaxation factor must lie in (0, 2), got {self.omega}")
        if self.q.grid != self.A.grid:
            raise ValueError("q and A live on different grids")


@dataclass
class LcpSolution:
    w: ScalarField
    sweeps: int
    residual: float
    history: list[float]


def natural_residual(A: StencilOperator, q: np.ndarray, w: np.ndarray,
                     lower: np.ndarray | None = None,
                     upper: np.ndarray | None = None) -> np.ndarray:
    """``w - clip(w - (Aw + q), lower, upper)`` at interior nodes.

    For ``lower = 0`` and no upper bound this is ``min(w, Aw + q)``.
    """
    lo = np.zeros_like(w) if lower is None else lower
    up = np.full_like(w, np.inf) if upper is None else upper
    r = w - np.clip(w - (A.apply(w) + q), lo, up)
    r[~A.grid.interior_mask()] = 0.0
    return r


def solve_lcp(problem: LcpProblem, w_init: ScalarField | np.ndarray | None = None,
              check_every: int = 10) -> LcpSolution:
    """Projected SOR with lexicographic sweep order.

    Raises ``NonConvergence`` (carrying the final residual) if the max-norm of
    the natural residual is still above tolerance after ``max_sweeps``.
    """
    A = problem.A
    g = A.grid
    q = np.ascontiguousarray(problem.q.values, dtype=float)
    lo = (np.zeros(g.shape) if problem.lower is None
          else np.ascontiguousarray(problem.lower, dtype=float))
    up = (np.full(g.shape, np.inf) if problem.upper is None
          else np.ascontiguousarray(problem.upper, dtype=float))
    if w_init is None:
        w = np.zeros(g.shape)
    else:
        w = np.array(getattr(w_init, "values", w_init), dtype=float)
    w = np.clip(w, lo, up)
    boundary = ~g.interior_mask()
    w[boundary] = 0.0

    if g.dim == 1:
        sweep = lambda k: _psor_1d(w, q, lo, up, A.diag, A.off[0], problem.omega, k)
        resid = lambda: _resid_1d(w, q, lo, up, A.diag, A.off[0])
    else:
        sweep = lambda k: _psor_2d(w, q, lo, up, A.diag, A.off[0], A.off[1],
                                   problem.omega, k)
        resid = lambda: _resid_2d(w, q, lo, up, A.diag, A.off[0], A.off[1])

    history = [resid()]
    sweeps = 0
    while history[-1] > problem.tolerance:
        if sweeps >= problem.max_sweeps:
            raise NonConvergence(
                f"PSOR: residual {history[-1]:.3e} > {problem.tolerance:.1e} "
                f"after {sweeps} sweeps", residual=history[-1])
        k = min(check_every, problem.max_sweeps - sweeps)
        sweep(k)
        sweeps += k
        history.append(resid())
    return LcpSolution(ScalarField(g, w), sweeps, history[-1], history)


@numba.njit(cache=True)
def _psor_1d(w, q, lo, up, d, c, omega, nsweeps):
    n = w.shape[0]
    for _ in range(nsweeps):
        for i in range(1, n - 1):
            r = d * w[i] + c * (w[i - 1] + w[i + 1]) + q[i]
            v = w[i] - omega * r / d
            if v < lo[i]:
                v = lo[i]
            elif v > up[i]:
                v = up[i]
            w[i] = v


@numba.njit(cache=True)
def _resid_1d(w, q, lo, up, d, c):
    n = w.shape[0]
    m = 0.0
    for i in range(1, n - 1):
        r = d * w[i] + c * (w[i - 1] + w[i + 1]) + q[i]
        v = w[i] - r
        if v < lo[i]:
            v = lo[i]
        elif v > up[i]:
            v = up[i]
        e = abs(w[i] - v)
        if e > m:
            m = e
    return m


@numba.njit(cache=True)
def _psor_2d(w, q, lo, up, d, cx, cy, omega, nsweeps):
    n1, n2 = w.shape
    for _ in range(nsweeps):
        for i in range(1, n1 - 1):
            for j in range(1, n2 - 1):
                r = (d * w[i, j] + cx * (w[i - 1, j] + w[i + 1, j])
                     + cy * (w[i, j - 1] + w[i, j + 1]) + q[i, j])
                v = w[i, j] - omega * r / d
                if v < lo[i, j]:
                    v = lo[i, j]
                elif v > up[i, j]:
                    v = up[i, j]
                w[i, j] = v


@numba.njit(cache=True)
def _resid_2d(w, q, lo, up, d, cx, cy):
    n1, n2 = w.shape
    m = 0.0
    for i in range(1, n1 - 1):
        for j in range(1, n2 - 1):
            r = (d * w[i, j] + cx * (w[i - 1, j] + w[i + 1, j])
                 + cy * (w[i, j - 1] + w[i, j + 1]) + q[i, j])
            v = w[i, j] - r
            if v < lo[i, j]:
                v = lo[i, j]
            elif v > up[i, j]:
                v = up[i, j]
            e = abs(w[i, j] - v)
            if e > m:
                m = e
    return m
