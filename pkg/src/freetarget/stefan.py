"""Stefan problems: an enthalpy solver for the melting problem, weak-form
residuals for both Stefan problems, and assembly of the supercooled
solution from the potential flow.

Melting (St2) in enthalpy form: ``e = eta + nu chi_{eta>0}``,
``e_t = Lap beta(e) / 2`` with ``beta(e) = max(e - nu, 0)``. Cells holding
``0 < e <= nu`` are mushy: no heat, but partial enthalpy is remembered.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import testfuncs
from .errors import DomainTooSmall, NonExtinction
from .flow import (SpaceTimeFlow, eulerian_residual, evolve_type1, extract_barrier,
                   mass_budget)
from .free_target import (CostType, FreeTargetResult, MARGIN_CELLS, ProblemSpec,
                          active_threshold, solve_free_target, subharmonic_order_check)
from .grid import (BarrierField, DensityField, GridSpec, ScalarField, hausdorff_distance,
                   integrate, laplacian, mass)
from .lcp import DEFAULT_TOL, LcpProblem, StencilOperator, solve_lcp

log = logging.getLogger(__name__)


@dataclass
class EnthalpyRun:
    grid: GridSpec
    dt: float
    times: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)       # (N, *shape): eta on [t_n, t_{n+1}]
    e_final: np.ndarray = field(repr=False)
    nu_weight: DensityField = field(repr=False)
    melted: np.ndarray = field(repr=False)    # latched flags, accumulated set
    melted_history: np.ndarray = field(repr=False)  # (N, *shape) flags at step ends
    phase: np.ndarray = field(repr=False)     # (N, *shape): melted fraction per interval
    mu: DensityField = field(repr=False, default=None)
    eps_active: float = 0.0

    @property
    def E_bar(self) -> np.ndarray:
        return self.melted

    def weak_residual(self, detail: bool = False):
        """St2 defect with the melted fraction standing in for the indicator."""
        e0 = self.mu.values
        eta0 = np.maximum(e0 - self.nu_weight.values, 0.0)
        chi0 = melted_fraction(e0, eta0, self.nu_weight.values)
        return stefan_weak_residual(self.times, self.eta, self.nu_weight,
                                    DensityField(self.grid, eta0), chi0, "St2",
                                    active=self.phase, detail=detail)


def melted_fraction(e: np.ndarray, u: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """``chi`` in ``e = u + nu chi``: 1 where hot, ``e / nu`` in mushy cells."""
    chi = np.divide(e - u, nu, out=(u > 0).astype(float), where=nu > 0)
    return np.where(u > 0, 1.0, np.clip(chi, 0.0, 1.0))


def st2_enthalpy_solve(mu: DensityField, nu_weight: DensityField, dt: float, t_end: float,
                       *, tolerance: float = DEFAULT_TOL, omega: float | None = None,
                       store_every: int = 1, heat_tol: float | None = None) -> EnthalpyRun:
    """Implicit enthalpy scheme ``(e' - e)/dt = Lap_h beta(e') / 2`` from ``e = mu``.

    Written in the heat ``u = beta(e')`` each step is the complementarity
    problem ``u >= 0``, ``(1 + a) u - c * (neighbour sum) + nu - e >= 0``,
    ``u * (...) = 0`` with ``a = dt sum_k 1/h_k^2``, ``c = dt / (2 h_k^2)``,
    solved by projected nonlinear Gauss-Seidel/SOR; then
    ``e' = e + dt Lap_h u / 2`` conserves enthalpy exactly. A node is flagged
    melted once its heat exceeds ``eps`` and stays flagged.

    Stops at ``t_end``, or earlier once the total heat drops below ``heat_tol``.
    """
    g = mu.grid
    eps = active_threshold(tolerance)
    a = dt * sum(1.0 / (h * h) for h in g.h)
    A = StencilOperator(g, 1.0 + a, tuple(-0.5 * dt / (h * h) for h in g.h))
    om = A.sor_omega() if omega is None else omega
    nu = nu_weight.values
    e = np.array(mu.values, dtype=float)
    u = np.maximum(e - nu, 0.0)
    u[~g.interior_mask()] = 0.0
    melted = u > eps
    times, etas, hist, phases = [0.0], [], [], []
    block_eta = np.zeros(g.shape)
    block_chi = np.zeros(g.shape)
    n_max = int(np.ceil(t_end / dt - 1e-9))
    wq = g.quadrature_weights()
    t = 0.0
    for n in range(n_max):
        sol = solve_lcp(LcpProblem(A, ScalarField(g, nu - e), tolerance=tolerance,
                                   omega=om), w_init=u)
        u = np.array(sol.w.values)
        e = e + 0.5 * dt * laplacian(g, u)
        melted |= u > eps
        t += dt
        block_eta += u
        block_chi += melted_fraction(e, u, nu)
        done = heat_tol is not None and float(np.sum(u * wq)) <= heat_tol
        if (n + 1) % store_every == 0 or n + 1 == n_max or done:
            k = round((t - times[-1]) / dt)
            etas.append(block_eta / k)
            phases.append(block_chi / k)
            hist.append(melted.copy())
            times.append(t)
            block_eta = np.zeros(g.shape)
            block_chi = np.zeros(g.shape)
        if np.any(melted & (g.boundary_distance() < MARGIN_CELLS + 1)):
            raise DomainTooSmall("melted region reached the box boundary")
        if done:
            break
    shape = (len(etas),) + g.shape
    return EnthalpyRun(g, dt, np.array(times), np.array(etas).reshape(shape), e,
                       nu_weight, melted, np.array(hist).reshape(shape),
                       np.array(phases).reshape(shape), mu, eps)


def stefan_weak_residual(times: np.ndarray, eta: np.ndarray, nu: DensityField,
                         eta0: DensityField, E_mask: np.ndarray, variant: str = "St1",
                         active: np.ndarray | None = None, detail: bool = False):
    """Weak-form defect of ``(eta -/+ nu chi_{eta>0})_t = Lap eta / 2``.

    ``St1`` takes the minus sign (freezing), ``St2`` the plus sign (melting).
    For each test function the defect is

        intint [(eta -/+ nu chi) phi_t + eta Lap phi / 2] + int (eta0 -/+ nu chi_E) phi(., 0),

    normalised by the initial enthalpy ``int eta0 + [St2] int nu chi_E`` times
    ``sup |phi| = 1``. ``eta`` is piecewise constant on the intervals of
    ``times``; ``active`` (same shape, values in [0, 1]) is the fraction of
    each interval with ``eta > 0`` and defaults to ``eta > 0`` itself.
    ``E_mask`` may likewise be fractional.
    """
    variant = variant.upper().replace("ST", "St")
    if variant not in ("St1", "St2"):
        raise ValueError(f"unknown variant {variant!r}")
    sign = -1.0 if variant == "St1" else 1.0
    g = nu.grid
    E = np.asarray(E_mask, dtype=float)
    scale = mass(eta0) + (integrate(g, nu.values * E) if sign > 0 else 0.0)
    if len(eta) == 0 or scale == 0:
        r = 0.0
        return (r, np.zeros(0)) if detail else r
    if active is None:
        active = (eta > 0).astype(float)
    family = testfuncs.standard_family(g)
    B, L = testfuncs.space_table(g, family)
    dpsi, ipsi, psi0 = testfuncs.time_tables(family, times)
    N = len(eta)
    H = eta.reshape(N, -1)
    X = (active.reshape(N, -1) * nu.values.ravel()[None, :])
    lhs = np.sum(((H + sign * X) @ B) * dpsi + 0.5 * (H @ L) * ipsi, axis=0)
    init = ((eta0.values.ravel() + sign * nu.values.ravel() * E.ravel()) @ B) * psi0
    D = np.abs(lhs + init) / scale
    return (float(D.max()), D) if detail else float(D.max())


def barrier_occupancy(times: np.ndarray, s: BarrierField) -> np.ndarray:
    """Fraction of each interval ``[t_n, t_{n+1}]`` lying before ``s(x)``."""
    t0, t1 = times[:-1], times[1:]
    sv = s.values[None, ...]
    shp = (-1,) + (1,) * s.grid.dim
    frac = (np.minimum(sv, t1.reshape(shp)) - t0.reshape(shp)) / (t1 - t0).reshape(shp)
    return np.clip(frac, 0.0, 1.0)


@dataclass
class St1Bundle:
    target: FreeTargetResult
    flow: SpaceTimeFlow
    s: BarrierField
    E_mask: np.ndarray
    report: dict

    @property
    def eta(self) -> np.ndarray:
        return self.flow.eta

    @property
    def times(self) -> np.ndarray:
        return self.flow.times


def assemble_st1_solution(spec: ProblemSpec, dt: float | None = None, t_end: float = 50.0,
                          k_mask: np.ndarray | None = None,
                          horizons: tuple[float, ...] | None = None,
                          store_every: int = 1) -> St1Bundle:
    """Supercooled Stefan solution: free target -> decreasing potential flow ->
    barrier, with diagnostics.

    ``k_mask`` marks a frozen set ``K`` (ceiling ``f = chi_{K^c}``); the flow
    then never goes extinct, so the run stops at ``t_end`` and the report
    records, for each of ``horizons``, whether ``eta`` is still positive on
    ``K`` and how far the active set is from ``K``.
    """
    g = spec.grid
    if dt is None:
        dt = min(g.h)
    target = solve_free_target(spec)
    flow = evolve_type1(target.w0, target.nu, dt, t_end, tolerance=spec.tolerance,
                        omega=spec.omega, eps_active=target.eps_active,
                        store_every=store_every)
    if not flow.extinct and k_mask is None and float(spec.f.values.min()) > 0.0:
        # f >= delta > 0 everywhere forces finite extinction
        raise NonExtinction(
            f"flow still active at t_end={t_end:g} (max w = {flow.w[-1].max():.3e}) "
            f"although f >= {float(spec.f.values.min()):.3g} > 0")
    s = extract_barrier(flow, allow_incomplete=k_mask is not None)
    eul = eulerian_residual(flow, spec.mu, s)
    occ = barrier_occupancy(flow.times, s)
    st1 = stefan_weak_residual(flow.times, flow.eta, target.nu, spec.mu, target.E,
                               "St1", active=occ)
    budget = mass_budget(flow, target.w0)
    report = {
        "mass_mu": mass(spec.mu),
        "mass_nu": mass(target.nu),
        "mass_defect": target.mass_defect,
        "eta_time_integral": budget["eta_time_integral"],
        "two_w0_integral": budget["two_w0_integral"],
        "eta_budget_gap": budget["relative_gap"],
        "extinct": flow.extinct,
        "extinction_time": flow.extinction_time,
        "max_barrier_on_E": float(np.max(s.values[target.E])) if target.E.any() else 0.0,
        "eulerian_residual": eul,
        "st1_residual": st1,
        "n_steps": flow.n_steps,
        "dt": dt,
        "testfunction_family": testfuncs.FAMILY_VERSION,
    }
    f = spec.f.values
    if np.all(np.isclose(f, 0.0) | np.isclose(f, 1.0)):
        sigma = target.E & (f > 0.5)
        rep = subharmonic_order_check(spec.mu, target.nu)
        report["subharmonic_order_pass"] = rep.passed
        report["target_is_indicator_gap"] = float(
            np.max(np.abs(target.nu.values - sigma)[interior_of(target.E)], initial=0.0))
    if k_mask is not None:
        report.update(_k_checks(flow, target, k_mask, horizons or (t_end / 2, t_end)))
    return St1Bundle(target, flow, s, target.E, report)


def interior_of(mask: np.ndarray, cells: int = 2) -> np.ndarray:
    from scipy.ndimage import binary_erosion

    if not mask.any():
        return mask.copy()
    return binary_erosion(mask, iterations=cells, border_value=0)


def _k_checks(flow: SpaceTimeFlow, target: FreeTargetResult, k_mask: np.ndarray,
              horizons) -> dict:
    g = flow.grid
    band = 2 * max(g.h)
    # nodes on the rim of K carry a fractional ceiling; judge K by its interior
    core = interior_of(k_mask, 1)
    out = {"nu_max_on_K": float(target.nu.values[core].max(initial=0.0))}
    rows = []
    for T in horizons:
        n = int(np.searchsorted(flow.times, T - 1e-12))
        n = min(max(n, 1), flow.n_steps)
        eta_n = flow.eta[n - 1]
        active = flow.w[n] > flow.eps_active
        rows.append({
            "T": float(flow.times[n]),
            "eta_positive_on_K": bool(np.all(eta_n[core] > 0)),
            "min_eta_on_K": float(eta_n[core].min(initial=np.inf)),
            "hausdorff_active_to_K": hausdorff_distance(g, active, k_mask),
        })
        rows[-1]["pass"] = (rows[-1]["eta_positive_on_K"]
                            and rows[-1]["hausdorff_active_to_K"] <= band)
    out["horizons"] = rows
    out["k_checks_pass"] = out["nu_max_on_K"] <= 1e-9 and all(r["pass"] for r in rows)
    return out
