"""Optimal free target from the elliptic obstacle problem.

Given an initial density ``mu`` and a ceiling ``f``, the potential gap
``w0 = U_nu - U_mu`` solves

    w0 >= 0,   -Lap w0 + (f - mu) >= 0,   w0 * (-Lap w0 + f - mu) = 0,

and the target is read off as ``nu = mu + Lap_h w0``: it equals ``f`` on
``E = {w0 > 0}`` and stays between ``mu`` and ``f`` elsewhere. The same
``nu`` is produced for either monotonicity type of the running cost.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import DomainTooSmall, GridMismatch, SolverError
from .grid import (DensityField, GridSpec, ScalarField, integrate, laplacian, mass)
from .lcp import DEFAULT_TOL, LcpProblem, LcpSolution, StencilOperator, solve_lcp

log = logging.getLogger(__name__)

#: nodes with positive values must stay this many cells inside the box
MARGIN_CELLS = 2


class CostType(str, Enum):
    TYPE_I = "I"
    TYPE_II = "II"

    @classmethod
    def parse(cls, value) -> "CostType":
        if isinstance(value, cls):
            return value
        s = str(value).strip().upper().replace("TYPE", "").strip("_ -")
        return cls(s)


@dataclass(frozen=True)
class Lagrangian:
    """Running cost ``L(x, t)``; only its time dependence is used here."""

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __call__(self, t, x=None):
        return self.func(np.asarray(t, dtype=float))

    @classmethod
    def linear(cls) -> "Lagrangian":
        return cls("t", lambda t: t)

    @classmethod
    def exp_decay(cls) -> "Lagrangian":
        return cls("exp(-t)", lambda t: np.exp(-t))

    @classmethod
    def table(cls, times, values) -> "Lagrangian":
        ts = np.asarray(times, dtype=float)
        vs = np.asarray(values, dtype=float)
        if ts.ndim != 1 or ts.shape != vs.shape or np.any(np.diff(ts) <= 0):
            raise ValueError("table needs increasing times and matching values")
        return cls("table", lambda t: np.interp(t, ts, vs))

    @classmethod
    def default_for(cls, cost_type: CostType) -> "Lagrangian":
        return cls.linear() if cost_type is CostType.TYPE_I else cls.exp_decay()

    def check_monotone(self, cost_type: CostType, horizon: float = 10.0) -> None:
        t = np.linspace(0.0, horizon, 257)
        d = np.diff(self(t))
        ok = np.all(d > 0) if cost_type is CostType.TYPE_I else np.all(d < 0)
        if not ok:
            want = "increasing" if cost_type is CostType.TYPE_I else "decreasing"
            raise ValueError(f"Lagrangian {self.name!r} must be strictly {want} in t "
                             f"for cost type {cost_type.value}")


@dataclass(frozen=True)
class ProblemSpec:
    grid: GridSpec
    mu: DensityField
    f: DensityField
    cost_type: CostType = CostType.TYPE_I
    lagrangian: Lagrangian | None = None
    tolerance: float = DEFAULT_TOL
    omega: float | None = None      # None: optimal SOR factor for the box
    max_sweeps: int = 500_000
    f_cap: float = 1e6

    def __post_init__(self) -> None:
        object.__setattr__(self, "cost_type", CostType.parse(self.cost_type))
        if self.lagrangian is None:
            object.__setattr__(self, "lagrangian", Lagrangian.default_for(self.cost_type))
        self.lagrangian.check_monotone(self.cost_type)
        if self.mu.grid != self.grid or self.f.grid != self.grid:
            raise GridMismatch("mu and f must live on the problem grid")
        if not mass(self.mu) > 0:
            raise ValueError("initial density has zero mass")
        if self.f.values.max() > self.f_cap:
            raise ValueError(f"ceiling exceeds cap {self.f_cap}")
        near = self.grid.boundary_distance() < MARGIN_CELLS + 1
        if np.any(self.mu.values[near] > 0):
            raise ValueError(f"mu must vanish within {MARGIN_CELLS + 1} cells of the box")

    @property
    def eps_active(self) -> float:
        return active_threshold(self.tolerance)

    def lcp_omega(self, A: StencilOperator) -> float:
        return A.sor_omega() if self.omega is None else self.omega


def active_threshold(tolerance: float) -> float:
    """Positivity threshold for ``{w > 0}``.

    At an inactive node the natural residual equals ``w`` itself, so anything
    below the LCP tolerance is indistinguishable from zero.
    """
    return 10.0 * tolerance


@dataclass(frozen=True)
class FreeTargetResult:
    w0: ScalarField
    E: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    nu: DensityField = field(repr=False)
    instant_mass: DensityField = field(repr=False)
    cost_type: CostType = CostType.TYPE_I
    eps_active: float = 0.0
    sweeps: int = 0
    residual: float = 0.0
    mass_defect: float = 0.0
    universality_gap: float = 0.0

    @property
    def grid(self) -> GridSpec:
        return self.w0.grid


def check_margin(grid: GridSpec, positive: np.ndarray, what: str = "free boundary") -> None:
    if np.any(positive & (grid.boundary_distance() < MARGIN_CELLS + 1)):
        raise DomainTooSmall(f"{what} comes within {MARGIN_CELLS} cells of the box; enlarge it")


def target_from_gap(mu: np.ndarray, f: np.ndarray, w: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``nu = mu + Lap_h w`` clipped to ``[0, f]`` (the clip only removes roundoff)."""
    nu = mu + laplacian(grid, w)
    return np.clip(nu, 0.0, f)


def _obstacle(spec: ProblemSpec, q: np.ndarray, w_init=None) -> LcpSolution:
    A = StencilOperator.neg_laplacian(spec.grid)
    prob = LcpProblem(A, ScalarField(spec.grid, q), tolerance=spec.tolerance,
                      max_sweeps=spec.max_sweeps, omega=spec.lcp_omega(A))
    return solve_lcp(prob, w_init)


def solve_free_target(spec: ProblemSpec) -> FreeTargetResult:
    g = spec.grid
    mu, f = spec.mu.values, spec.f.values
    eps = spec.eps_active
    sol = _obstacle(spec, f - mu)
    w0 = sol.w.values
    E = w0 > eps
    check_margin(g, E)

    nu = target_from_gap(mu, f, w0, g)
    m_mu = mass(spec.mu)
    m_nu = integrate(g, nu)
    defect = abs(m_nu - m_mu) / m_mu
    if 0 < defect <= 1e-6:
        nu = nu * (m_mu / m_nu)
    elif defect > 1e-6:
        log.warning("target mass off by %.2e (relative)", defect)

    # type (II) split: f^mu stops at t = 0, the rest is solved from
    # (mu - f^mu, f - f^mu); both routes must give the same nu
    inst2 = np.minimum(f, mu)
    sol2 = _obstacle(spec, (f - inst2) - (mu - inst2), w_init=w0)
    nu2 = inst2 + target_from_gap(mu - inst2, f - inst2, sol2.w.values, g)
    gap = float(np.max(np.abs(nu2 - target_from_gap(mu, f, w0, g))))
    if gap > 1e-6 * max(1.0, float(f.max())):
        raise SolverError(f"type I and type II targets differ by {gap:.3e}")

    F = (~E) & (mu > 0)
    if spec.cost_type is CostType.TYPE_I:
        instant = np.where(F, mu, 0.0)
    else:
        instant = inst2
    return FreeTargetResult(
        w0=sol.w, E=E, F=F, nu=DensityField.clipped(g, nu),
        instant_mass=DensityField.clipped(g, instant), cost_type=spec.cost_type,
        eps_active=eps, sweeps=sol.sweeps, residual=sol.residual,
        mass_defect=defect, universality_gap=gap)


# ------------------------------------------------------------ subharmonic order

@dataclass
class SubharmonicReport:
    passed: bool
    min_difference: float
    min_relative: float
    worst: str
    n_functions: int
    tolerance: float


def subharmonic_family(grid: GridSpec, size: int = 5):
    """Smooth subharmonic test functions as ``(label, values)`` pairs:
    squared distances to ``size`` centers per axis, exponentials ``exp(k.x)``
    with ``|k| <= 2`` and hinges ``max(0, k.x + b)``."""
    mesh = grid.mesh()
    axes = [np.linspace(a, b, size + 2)[1:-1] for a, b in zip(grid.lo, grid.hi)]
    if grid.dim == 1:
        centers = [(a,) for a in axes[0]]
        dirs = [(1.0,), (-1.0,)]
    else:
        centers = [(a, b) for a in axes[0] for b in axes[1]]
        dirs = [(math.cos(t), math.sin(t)) for t in np.arange(8) * math.pi / 4]
    out = []
    for c in centers:
        v = sum((m - ci) ** 2 for m, ci in zip(mesh, c))
        out.append((f"|x-{tuple(round(x, 3) for x in c)}|^2", v))
    for d in dirs:
        proj = sum(m * di for m, di in zip(mesh, d))
        for k in (0.5, 1.0, 2.0):
            out.append((f"exp({k}*{tuple(round(x, 3) for x in d)}.x)", np.exp(k * proj)))
        for b in np.linspace(-2.0, 2.0, size):
            out.append((f"max(0,{tuple(round(x, 3) for x in d)}.x+{b:.2f})",
                        np.maximum(0.0, proj + b)))
    return out


def subharmonic_order_check(mu: DensityField, nu: DensityField, test_family_size: int = 5,
                            tolerance: float = 1e-6, mass_tolerance: float = 1e-6
                            ) -> SubharmonicReport:
    """Check ``int phi dmu <= int phi dnu`` on a finite subharmonic family."""
    if mu.grid != nu.grid:
        raise GridMismatch("mu and nu on different grids")
    m1, m2 = mass(mu), mass(nu)
    if abs(m1 - m2) > mass_tolerance * max(m1, m2, 1e-300):
        raise ValueError(f"masses differ: {m1} vs {m2}")
    g = mu.grid
    wq = g.quadrature_weights()
    best = (math.inf, math.inf, "")
    fam = subharmonic_family(g, test_family_size)
    passed = True
    for label, phi in fam:
        diff = float(np.sum(phi * (nu.values - mu.values) * wq))
        scale = float(np.sum(np.abs(phi) * (nu.values + mu.values) * wq)) or 1.0
        rel = diff / scale
        if diff < -tolerance * scale:
            passed = False
        if rel < best[1]:
            best = (diff, rel, label)
    return SubharmonicReport(passed, best[0], best[1], best[2], len(fam), tolerance)
