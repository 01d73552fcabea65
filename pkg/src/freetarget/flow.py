"""Potential flows, stopping barriers and Eulerian densities.

Type (I) costs: ``w = U_nu - U_{mu_t}`` starts from the elliptic gap ``w0``
and decreases,

    w_t - Lap w / 2 = -nu chi_{w>0} / 2,   w >= 0,

Type (II) costs: ``w = U_{mu_t} - U_mu`` starts from zero and increases,

    w_t - Lap w / 2 = (mu - nu chi_{w>0}) / 2,   w >= 0,

with ``mu, nu`` the parts left after the instant stops. In both cases the
alive density is ``eta = 2 |w_t|`` and the canonical barrier is the zero set
of ``w``. Each implicit Euler step is a complementarity problem for the
M-matrix ``I - (dt/2) Lap_h``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainTooSmall, IncompleteFlow
from .free_target import CostType, MARGIN_CELLS, active_threshold
from .grid import BarrierField, DensityField, GridSpec, ScalarField, integrate, laplacian, mass
from .lcp import DEFAULT_TOL, LcpProblem, StencilOperator, solve_lcp
from . import testfuncs

log = logging.getLogger(__name__)

#: consecutive steps with ``max w <= eps`` required to declare extinction
EXTINCTION_STEPS = 3


@dataclass
class SpaceTimeFlow:
    grid: GridSpec
    dt: float
    cost_type: CostType
    times: np.ndarray = field(repr=False)       # t_0 .. t_N
    w: np.ndarray = field(repr=False)           # (N+1, *shape)
    eta: np.ndarray = field(repr=False)         # (N, *shape), eta on [t_n, t_{n+1}]
    nu: DensityField = field(repr=False)        # weight released where w vanishes
    mu: DensityField = field(repr=False)        # eta(., 0)
    instant_mass: DensityField = field(repr=False)
    eps_active: float = 0.0
    extinct: bool = False
    extinction_time: float = float("inf")
    converged: bool = False
    sweeps: list[int] = field(default_factory=list, repr=False)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def w_field(self, n: int) -> ScalarField:
        return ScalarField(self.grid, self.w[n])

    def eta_field(self, n: int) -> DensityField:
        return DensityField.clipped(self.grid, self.eta[n])

    @property
    def first_zero_time(self) -> np.ndarray:
        """Per node: first snapshot time with ``w <= eps`` (type I) or inf."""
        hit = self.w <= self.eps_active
        first = np.argmax(hit, axis=0)
        return np.where(hit.any(axis=0), self.times[first], np.inf)

    @property
    def rho_accum(self) -> DensityField:
        """Stopped mass accumulated over the run."""
        if self.cost_type is CostType.TYPE_I:
            done = np.isfinite(self.first_zero_time)
            return DensityField.clipped(self.grid, np.where(done, self.nu.values, 0.0))
        reached = (self.w[-1] > self.eps_active)
        return DensityField.clipped(
            self.grid, self.instant_mass.values + np.where(reached, self.nu.values, 0.0))

    def eta_mass(self) -> np.ndarray:
        wq = self.grid.quadrature_weights()
        return np.tensordot(self.eta, wq, axes=self.grid.dim)


def _step_operator(grid: GridSpec, dt: float, omega: float | None):
    A = StencilOperator.heat_step(grid, dt)
    return A, (A.sor_omega() if omega is None else omega)


def evolve_type1(w0: ScalarField, nu: DensityField, dt: float, t_end: float, *,
                 tolerance: float = DEFAULT_TOL, omega: float | None = None,
                 eps_active: float | None = None, store_every: int = 1) -> SpaceTimeFlow:
    """Implicit Euler for the decreasing flow, run until extinction or ``t_end``.

    Each step solves ``0 <= w' <= w`` complementary to
    ``(I - dt Lap_h / 2) w' - w + dt nu / 2``. The upper bound ``w' <= w`` is
    implied by the comparison principle; imposing it only removes
    roundoff-level monotonicity violations. With ``store_every = k`` only every
    k-th snapshot is kept and ``eta`` is averaged over each block of k steps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = w0.grid
    eps = active_threshold(tolerance) if eps_active is None else eps_active
    A, om = _step_operator(g, dt, omega)
    nu_v = nu.values
    w = np.array(w0.values, dtype=float)
    mu0 = DensityField.clipped(g, nu_v - laplacian(g, w))
    ws, etas, times, sweeps = [w.copy()], [], [0.0], []
    quiet = 0 if w.max() > eps else EXTINCTION_STEPS
    t, k = 0.0, 0
    n_max = int(np.ceil(t_end / dt - 1e-9))
    for _ in range(n_max):
        if quiet >= EXTINCTION_STEPS:
            break
        q = ScalarField(g, 0.5 * dt * nu_v - w)
        sol = solve_lcp(LcpProblem(A, q, tolerance=tolerance, omega=om,
                                   upper=w), w_init=w)
        w_new = sol.w.values
        w = np.array(w_new)
        t += dt
        k += 1
        sweeps.append(sol.sweeps)
        quiet = quiet + 1 if w.max() <= eps else 0
        if k % store_every == 0 or quiet >= EXTINCTION_STEPS or k == n_max:
            etas.append(2.0 * (ws[-1] - w) / (t - times[-1]))
            ws.append(w.copy())
            times.append(t)
    extinct = quiet >= EXTINCTION_STEPS
    flow = SpaceTimeFlow(
        grid=g, dt=dt, cost_type=CostType.TYPE_I, times=np.array(times),
        w=np.array(ws), eta=np.array(etas).reshape((len(etas),) + g.shape),
        nu=nu, mu=mu0, instant_mass=DensityField(g, np.zeros(g.shape)),
        eps_active=eps, extinct=extinct, sweeps=sweeps)
    if extinct:
        alive = flow.w.reshape(len(times), -1).max(axis=1) > eps
        flow.extinction_time = (float(times[int(np.flatnonzero(alive).max()) + 1])
                                if alive.any() else 0.0)
    else:
        log.info("type I flow not extinct at t=%.3g (max w = %.3e)", t, w.max())
    return flow


def evolve_type2(mu_active: DensityField, nu_active: DensityField, dt: float,
                 t_end: float, *, tolerance: float = DEFAULT_TOL,
                 omega: float | None = None, eps_active: float | None = None,
                 instant_mass: DensityField | None = None,
                 w_ref: ScalarField | None = None, ref_tol: float = 1e-3,
                 check_times: list[float] | None = None,
                 store_every: int = 1) -> SpaceTimeFlow:
    """Implicit Euler for the increasing flow from ``w = 0``.

    The indicator ``chi_{w>0}`` of each step is settled by solving the step as
    a complementarity problem with lower obstacle ``w^n``: at nodes with
    ``w' > 0`` the equation holds with ``nu`` switched on, at nodes that stay
    at zero the enthalpy inequality holds instead.

    If ``w_ref`` is given, the run stops at the first of ``check_times``
    (default: doubling from ``1``) where ``max |w - w_ref| <= ref_tol`` and the
    flow is marked converged.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = mu_active.grid
    eps = active_threshold(tolerance) if eps_active is None else eps_active
    A, om = _step_operator(g, dt, omega)
    src = 0.5 * dt * (nu_active.values - mu_active.values)
    w = np.zeros(g.shape)
    ws, etas, times, sweeps = [w.copy()], [], [0.0], []
    if check_times is None:
        check_times = [2.0 ** k for k in range(0, 20)]
    checks = sorted(c for c in check_times if c <= t_end + 1e-12)
    converged = w_ref is not None and np.max(np.abs(w_ref.values)) <= ref_tol
    t = 0.0
    n_max = int(np.ceil(t_end / dt - 1e-9))
    if mu_active.values.max() > 0:
        for n in range(n_max):
            q = ScalarField(g, src - w)
            sol = solve_lcp(LcpProblem(A, q, tolerance=tolerance, omega=om,
                                       lower=w), w_init=w)
            w = np.array(sol.w.values)
            t += dt
            sweeps.append(sol.sweeps)
            at_check = bool(checks) and t >= checks[0] - 1e-12
            if (n + 1) % store_every == 0 or at_check or n + 1 == n_max:
                etas.append(2.0 * (w - ws[-1]) / (t - times[-1]))
                ws.append(w.copy())
                times.append(t)
            if np.any((w > eps) & (g.boundary_distance() < MARGIN_CELLS + 1)):
                raise DomainTooSmall("type II flow reached the box boundary")
            if w_ref is not None and at_check:
                while checks and t >= checks[0] - 1e-12:
                    checks.pop(0)
                if np.max(np.abs(w - w_ref.values)) <= ref_tol:
                    converged = True
                    break
    else:
        converged = True
    return SpaceTimeFlow(
        grid=g, dt=dt, cost_type=CostType.TYPE_II, times=np.array(times),
        w=np.array(ws), eta=np.array(etas).reshape((len(etas),) + g.shape),
        nu=nu_active, mu=mu_active,
        instant_mass=(instant_mass if instant_mass is not None
                      else DensityField(g, np.zeros(g.shape))),
        eps_active=eps, converged=converged, sweeps=sweeps)


def extract_barrier(flow: SpaceTimeFlow, allow_incomplete: bool = False) -> BarrierField:
    """Barrier from the zero set of ``w``.

    Type I: first time ``w <= eps``, interpolated linearly in time between
    the bracketing snapshots; ``inf`` where ``w`` never vanishes (only
    possible for an incomplete run). Type II: last time ``w <= eps``,
    interpolated likewise; ``inf`` where ``w`` never becomes positive.
    """
    if flow.cost_type is CostType.TYPE_I and not flow.extinct and not allow_incomplete:
        raise IncompleteFlow("type I flow has not reached extinction")
    if flow.n_steps == 0 and flow.cost_type is CostType.TYPE_II and not allow_incomplete \
            and not flow.converged:
        raise IncompleteFlow("type II flow has no steps")
    eps, t, W = flow.eps_active, flow.times, flow.w
    zero = W <= eps
    if flow.cost_type is CostType.TYPE_I:
        hit = zero.any(axis=0)
        n = np.argmax(zero, axis=0)
        s = np.full(flow.grid.shape, np.inf)
        s[hit & (n == 0)] = 0.0
        sel = hit & (n > 0)
        nn = n[sel]
        a = np.take_along_axis(W, n[None] - 1, 0)[0][sel]
        b = np.take_along_axis(W, n[None], 0)[0][sel]
        frac = np.clip((a - eps) / np.maximum(a - b, 1e-300), 0.0, 1.0)
        s[sel] = t[nn - 1] + frac * (t[nn] - t[nn - 1])
        return BarrierField(flow.grid, s)
    pos = ~zero
    ever = pos.any(axis=0)
    # last zero snapshot = one before the first positive one (w is nondecreasing)
    first_pos = np.argmax(pos, axis=0)
    s = np.full(flow.grid.shape, np.inf)
    sel = ever
    m = first_pos[sel]
    a = np.take_along_axis(W, np.maximum(first_pos - 1, 0)[None], 0)[0][sel]
    b = np.take_along_axis(W, first_pos[None], 0)[0][sel]
    frac = np.clip((eps - a) / np.maximum(b - a, 1e-300), 0.0, 1.0)
    s[sel] = t[np.maximum(m - 1, 0)] + frac * (t[m] - t[np.maximum(m - 1, 0)])
    return BarrierField(flow.grid, s)


@dataclass
class ResidualReport:
    max_defect: float
    defects: np.ndarray = field(repr=False)
    n_functions: int = 0
    family_version: int = testfuncs.FAMILY_VERSION


def _eta_terms(grid, times, eta, family):
    B, L = testfuncs.space_table(grid, family)
    dpsi, ipsi, psi0 = testfuncs.time_tables(family, times)
    E = eta.reshape(len(eta), B.shape[0])
    eb, el = E @ B, E @ L
    return B, psi0, np.sum(eb * dpsi + 0.5 * el * ipsi, axis=0)


def eulerian_residual(flow: SpaceTimeFlow, mu: DensityField,
                      barrier: BarrierField | None = None,
                      detail: bool = False) -> float | ResidualReport:
    """Weak-form defect of ``rho + eta_t = Lap eta / 2`` with ``eta(., 0) = mu``.

    For every test function ``phi`` the defect is
    ``int phi drho - int mu phi(., 0) - intint eta (phi_t + Lap phi / 2)``,
    divided by ``mass(mu) * sup|phi|``; ``rho`` releases ``nu`` at the barrier
    time ``s(x)`` plus the instant mass at ``t = 0``. Returns the max over the
    fixed family.
    """
    g = flow.grid
    m = mass(mu)
    if m == 0 and not np.any(flow.eta):
        return ResidualReport(0.0, np.zeros(0)) if detail else 0.0
    family = testfuncs.standard_family(g)
    if barrier is None:
        barrier = extract_barrier(flow, allow_incomplete=True)
    B, psi0, eta_term = _eta_terms(g, flow.times, flow.eta, family)
    s = barrier.values.ravel()
    rho_w = flow.nu.values.ravel()
    if flow.cost_type is CostType.TYPE_II:
        rho_w = rho_w * (flow.w[-1].ravel() > flow.eps_active)
    Ps = testfuncs.psi_at(family, s)
    rho_term = np.sum(B * (rho_w[:, None] * Ps), axis=0)
    rho_term += (flow.instant_mass.values.ravel() @ B) * psi0
    init_term = (mu.values.ravel() @ B) * psi0
    D = np.abs(rho_term - init_term - eta_term) / max(m, 1e-300)
    rep = ResidualReport(float(D.max()) if D.size else 0.0, D, len(family))
    return rep if detail else rep.max_defect


def mass_budget(flow: SpaceTimeFlow, w0: ScalarField | None = None) -> dict:
    """Time-integrated alive mass versus ``2 int w0`` (type I) and stopped mass."""
    g = flow.grid
    total_eta = float(np.diff(flow.times) @ flow.eta_mass()) if flow.n_steps else 0.0
    out = {"eta_time_integral": total_eta,
           "rho_mass": mass(flow.rho_accum),
           "nu_mass": mass(flow.nu) + mass(flow.instant_mass)}
    if w0 is not None:
        two_w = 2.0 * integrate(g, w0.values)
        out["two_w0_integral"] = two_w
        out["relative_gap"] = abs(total_eta - two_w) / two_w if two_w > 0 else abs(total_eta)
    return out
