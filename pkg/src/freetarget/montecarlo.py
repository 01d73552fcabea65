"""Brownian particles stopped at a space-time barrier.

Particles start from ``mu``, move by exact Gaussian increments of variance
``dt_mc`` per axis (generator ``Lap / 2``) and stop when they hit the barrier:
type I at the first ``t >= s(X_t)``, type II at the first ``t > 0`` with
``t <= s(X_t)``. Crossings between steps are located by linear interpolation
of ``t - s(X_t)``.

Random numbers come in fixed blocks of ``BLOCK`` particles, each with its
own Philox stream keyed by ``(seed, block)``, so an ensemble depends only on
``(seed, N, dt_mc, barrier)`` and not on how blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import BoxEscape, GridMismatch
from .free_target import CostType, Lagrangian
from .grid import BarrierField, DensityField, GridSpec, mass

BLOCK = 4096
CHUNK = 128  # time steps drawn at once per block

_START_KEY, _INSTANT_KEY, _PATH_KEY = 0, 1, 2


def _rng(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------- sampling

def sample_initial(mu: DensityField, N: int, seed: int) -> np.ndarray:
    """``N`` points from ``mu`` read as piecewise constant on node-centred cells.

    1D uses the inverse CDF; 2D picks cells with probability proportional to
    their mass and jitters uniformly inside the cell. Shape ``(N, dim)``.
    """
    g = mu.grid
    w = (mu.values * g.quadrature_weights()).ravel()
    total = w.sum()
    if not total > 0:
        raise ValueError("cannot sample from a zero-mass density")
    rng = _rng(seed, _START_KEY)
    h = np.array(g.h)
    if g.dim == 1:
        cdf = np.concatenate([[0.0], np.cumsum(w) / total])
        u = rng.random(N)
        i = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, w.size - 1)
        frac = (u - cdf[i]) / np.maximum(cdf[i + 1] - cdf[i], 1e-300)
        x = g.lo[0] + (i - 0.5 + frac) * h[0]
        return x[:, None]
    idx = rng.choice(w.size, size=N, p=w / total)
    ij = np.stack(np.unravel_index(idx, g.shape), axis=1)
    jitter = rng.random((N, g.dim)) - 0.5
    return np.array(g.lo) + (ij + jitter) * h


# ------------------------------------------------------------------ simulation

@dataclass
class ParticleEnsemble:
    grid: GridSpec
    cost_type: CostType
    seed: int
    dt_mc: float
    mass: float
    start: np.ndarray = field(repr=False)     # (N, dim)
    tau: np.ndarray = field(repr=False)       # stop times; inf while alive
    stop: np.ndarray = field(repr=False)      # (N, dim) stop points (last position if alive)
    alive: np.ndarray = field(repr=False)
    instant: np.ndarray = field(repr=False)   # stopped at t = 0 by randomisation
    slack: np.ndarray = field(repr=False)     # spread of s over each particle's last step
    record_times: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    record_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)), repr=False)

    @property
    def N(self) -> int:
        return len(self.tau)

    def to_csv(self, path: str | Path, meta: dict | None = None) -> None:
        d = self.grid.dim
        names = [f"start{k}" for k in range(d)] + [f"stop{k}" for k in range(d)] + ["tau", "alive"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(names)
            for a, b, t, al in zip(self.start, self.stop, self.tau, self.alive):
                wr.writerow([repr(float(v)) for v in a] + [repr(float(v)) for v in b]
                            + [repr(float(t)), int(al)])
            for k, v in (meta or {}).items():
                fh.write(f"# {k}={v}\n")


@njit(cache=True)
def _s_at(sv, lo0, lo1, h0, h1, n0, n1, dim, x0, x1):
    """Multilinear barrier value at ``(x0[, x1])``; inf if any corner is inf,
    nan outside the box. Scalars only: array arguments cost a refcount per call."""
    u0 = (x0 - lo0) / h0
    i0 = int(math.floor(u0))
    if i0 == n0 - 1 and u0 <= n0 - 1:
        i0 -= 1
    if i0 < 0 or i0 >= n0 - 1:
        return np.nan
    a0 = u0 - i0
    if dim == 1:
        v0 = sv[i0]
        v1 = sv[i0 + 1]
        if math.isinf(v0) or math.isinf(v1):
            return np.inf
        return (1.0 - a0) * v0 + a0 * v1
    u1 = (x1 - lo1) / h1
    i1 = int(math.floor(u1))
    if i1 == n1 - 1 and u1 <= n1 - 1:
        i1 -= 1
    if i1 < 0 or i1 >= n1 - 1:
        return np.nan
    a1 = u1 - i1
    m = n1
    v00 = sv[i0 * m + i1]
    v01 = sv[i0 * m + i1 + 1]
    v10 = sv[(i0 + 1) * m + i1]
    v11 = sv[(i0 + 1) * m + i1 + 1]
    if math.isinf(v00) or math.isinf(v01) or math.isinf(v10) or math.isinf(v11):
        return np.inf
    return ((1 - a0) * (1 - a1) * v00 + (1 - a0) * a1 * v01
            + a0 * (1 - a1) * v10 + a0 * a1 * v11)


@njit(cache=True)
def _s_many(sv, lo, h, n, pts):
    out = np.empty(pts.shape[0])
    dim = pts.shape[1]
    lo0, lo1, h0, h1, n0, n1 = lo[0], lo[dim - 1], h[0], h[dim - 1], n[0], n[dim - 1]
    for p in range(pts.shape[0]):
        out[p] = _s_at(sv, lo0, lo1, h0, h1, n0, n1, dim, pts[p, 0], pts[p, dim - 1])
    return out


@njit(cache=True)
def _gap(t, s, type1):
    """Signed distance to the stopping region; >= 0 means stop."""
    if type1:
        return t - s
    return s - t


@njit(cache=True)
def _advance(x, gprev, tau, stopx, alive, slack, normals, k0, dt, sdt, sv, lo, h, n, type1,
             rec_steps, rec_pos):
    """Move every live particle through ``normals.shape[1]`` steps starting at
    step ``k0``. Returns 0, or 1 if a particle left the box."""
    npart, nsteps, dim = normals.shape
    lo0, lo1, h0, h1, n0, n1 = lo[0], lo[dim - 1], h[0], h[dim - 1], n[0], n[dim - 1]
    for p in range(npart):
        if not alive[p]:
            continue
        x0 = x[p, 0]
        x1 = x[p, dim - 1]
        g0 = gprev[p]
        for j in range(nsteps):
            k = k0 + j
            for r in range(rec_steps.shape[0]):
                if rec_steps[r] == k:
                    rec_pos[p, r, 0] = x0
                    rec_pos[p, r, dim - 1] = x1
            y0 = x0 + sdt * normals[p, j, 0]
            y1 = x1 + sdt * normals[p, j, dim - 1]
            s1 = _s_at(sv, lo0, lo1, h0, h1, n0, n1, dim, y0, y1)
            if math.isnan(s1):
                return 1
            g1 = _gap((k + 1) * dt, s1, type1)
            if g1 >= 0.0:
                if g0 < 0.0 and not math.isinf(g0) and not math.isinf(g1):
                    th = -g0 / (g1 - g0)
                else:
                    th = 1.0
                tau[p] = (k + th) * dt
                x0 = x0 + th * (y0 - x0)
                x1 = x1 + th * (y1 - x1)
                alive[p] = False
                # spread of s over the last step bounds the crossing error
                sa = k * dt - g0 if type1 else g0 + k * dt
                sb = _s_at(sv, lo0, lo1, h0, h1, n0, n1, dim, x0, x1)
                if math.isinf(sa) or math.isinf(s1) or math.isinf(sb):
                    slack[p] = np.inf
                else:
                    slack[p] = max(sa, s1, sb) - min(sa, s1, sb)
                break
            g0 = g1
            x0 = y0
            x1 = y1
        x[p, 0] = x0
        x[p, dim - 1] = x1
        gprev[p] = g0
        if not alive[p]:
            stopx[p, 0] = x0
            stopx[p, dim - 1] = x1
    return 0


def default_horizon(s: BarrierField, cost_type: CostType) -> float:
    fin = s.values[np.isfinite(s.values)]
    smax = float(fin.max()) if fin.size else 0.0
    return smax + 1.0 if cost_type is CostType.TYPE_I else 2.0 * smax + 1.0


def simulate_stop(start: np.ndarray, s: BarrierField, cost_type, dt_mc: float, seed: int,
                  *, instant_stop_prob: DensityField | None = None, t_max: float | None = None,
                  mass_total: float = 1.0, record_times=()) -> ParticleEnsemble:
    """Run particles from ``start`` until they hit the barrier or ``t_max``.

    Type II needs ``instant_stop_prob``: the probability ``(f ^ mu) / mu`` of
    stopping at ``t = 0``; the other particles are first checked at ``dt_mc``.
    Positions of live particles at ``record_times`` (snapped down to the
    time grid) are kept for occupation estimates.
    """
    cost_type = CostType.parse(cost_type)
    if dt_mc <= 0:
        raise ValueError("dt_mc must be positive")
    g = s.grid
    start = np.asarray(start, dtype=float).reshape(len(start), g.dim)
    N = len(start)
    type1 = cost_type is CostType.TYPE_I
    if t_max is None:
        t_max = default_horizon(s, cost_type)
    n_steps = int(math.ceil(t_max / dt_mc - 1e-9))
    sv = np.ascontiguousarray(s.values, dtype=float).ravel()
    lo, h, nn = np.array(g.lo), np.array(g.h), np.array(g.n, dtype=np.int64)
    rec_times = np.asarray(record_times, dtype=float)
    rec_steps = np.floor(rec_times / dt_mc + 1e-9).astype(np.int64)

    tau = np.full(N, np.inf)
    stopx = start.copy()
    alive = np.ones(N, dtype=bool)
    instant = np.zeros(N, dtype=bool)
    s0 = _s_many(sv, lo, h, nn, start)
    if np.any(np.isnan(s0)):
        raise BoxEscape("a start point lies outside the grid")
    gprev = -s0 if type1 else s0.copy()
    if type1:
        instant = gprev >= 0.0
    else:
        if instant_stop_prob is None:
            raise ValueError("type II simulation needs instant_stop_prob")
        if instant_stop_prob.grid != g:
            raise GridMismatch("instant_stop_prob on a different grid")
        pv = np.ascontiguousarray(instant_stop_prob.values, dtype=float).ravel()
        prob = _s_many(pv, lo, h, nn, start)
        u = _rng(seed, _INSTANT_KEY).random(N)
        instant = u < np.clip(prob, 0.0, 1.0)
        gprev[:] = np.minimum(gprev, 0.0)  # clock starts at dt_mc
    tau[instant] = 0.0
    alive[instant] = False
    rec_pos = np.full((N, len(rec_steps), g.dim), np.nan)
    slack = np.zeros(N)

    sdt = math.sqrt(dt_mc)
    for b0 in range(0, N, BLOCK):
        sl = slice(b0, min(b0 + BLOCK, N))
        rng = _rng(seed, _PATH_KEY, b0 // BLOCK)
        x = start[sl].copy()
        al = alive[sl].copy()
        t_b, sx_b, gp_b = tau[sl].copy(), stopx[sl].copy(), gprev[sl].copy()
        sk_b = slack[sl].copy()
        rp = np.full((sl.stop - sl.start, len(rec_steps), g.dim), np.nan)
        k = 0
        while k < n_steps and al.any():
            # normals only for live particles: the draw sequence still depends
            # on nothing outside this block
            live = np.flatnonzero(al)
            m = min(CHUNK, n_steps - k)
            z = rng.standard_normal((live.size, m, g.dim))
            xl, gl, tl, sxl, all_, skl = (x[live], gp_b[live], t_b[live], sx_b[live],
                                          al[live], sk_b[live])
            rpl = rp[live]
            if _advance(xl, gl, tl, sxl, all_, skl, z, k, dt_mc, sdt, sv, lo, h, nn,
                        type1, rec_steps, rpl):
                raise BoxEscape("a particle left the grid box; enlarge the domain")
            x[live], gp_b[live], t_b[live], sx_b[live], al[live], sk_b[live] = (
                xl, gl, tl, sxl, all_, skl)
            rp[live] = rpl
            k += m
        sx_b[al] = x[al]
        tau[sl], stopx[sl], alive[sl], rec_pos[sl], slack[sl] = t_b, sx_b, al, rp, sk_b
    # records taken at or after the stop step belong to dead particles
    for r, t in enumerate(rec_times):
        rec_pos[tau <= rec_steps[r] * dt_mc, r] = np.nan
    return ParticleEnsemble(g, cost_type, int(seed), dt_mc, float(mass_total), start, tau,
                            stopx, alive, instant, slack, rec_steps * dt_mc, rec_pos)


def run_ensemble(mu: DensityField, s: BarrierField, cost_type, N: int, dt_mc: float,
                 seed: int, **kw) -> ParticleEnsemble:
    """``sample_initial`` followed by ``simulate_stop`` with ``mass(mu)`` attached."""
    start = sample_initial(mu, N, seed)
    return simulate_stop(start, s, cost_type, dt_mc, seed, mass_total=mass(mu), **kw)


# ------------------------------------------------------------------ estimators

def histogram(points: np.ndarray, grid: GridSpec, weight: float, bin_cells: int = 1
              ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Density histogram of ``points`` with each point carrying ``weight``.

    ``bin_cells = 1`` uses node-centred cells (one value per node). Larger
    values use bins of ``bin_cells`` grid cells aligned with ``grid.lo``.
    Returns ``(density, edges)``.
    """
    edges = []
    for lo, hi, h, k in zip(grid.lo, grid.hi, grid.h, grid.n):
        if bin_cells == 1:
            edges.append(lo + (np.arange(k + 1) - 0.5) * h)
        else:
            if (k - 1) % bin_cells:
                raise ValueError("bin_cells must divide the number of cells")
            edges.append(lo + np.arange(0, k, bin_cells) * h)
    pts = np.asarray(points, dtype=float).reshape(-1, grid.dim)
    counts, _ = np.histogramdd(pts, bins=edges)
    vol = math.prod(np.diff(e)[0] for e in edges)
    return counts * weight / vol, edges


def bin_average(field: DensityField, bin_cells: int) -> np.ndarray:
    """Average of the piecewise-linear interpolant over ``bin_cells``-wide bins."""
    g = field.grid
    v = field.values
    h = g.h
    for ax in range(g.dim):
        v = np.moveaxis(v, ax, 0)
        cell = 0.5 * (v[1:] + v[:-1])
        nb = cell.shape[0] // bin_cells
        v = cell.reshape((nb, bin_cells) + cell.shape[1:]).mean(axis=1)
        v = np.moveaxis(v, 0, ax)
    return v


@dataclass
class EmpiricalMeasures:
    nu_hat: np.ndarray
    edges: list[np.ndarray]
    eta_hat: np.ndarray       # (n_records, *bins)
    times: np.ndarray
    bin_cells: int

    def as_field(self, grid: GridSpec) -> DensityField:
        if self.bin_cells != 1:
            raise ValueError("only node-centred histograms map onto the grid")
        return DensityField(grid, self.nu_hat)


def empirical_measures(ens: ParticleEnsemble, bin_cells: int = 1) -> EmpiricalMeasures:
    """Stopped-point and occupation histograms normalised to ``mass(mu)``.

    Particles still alive at the horizon are left out of ``nu_hat``.
    """
    wgt = ens.mass / ens.N
    done = ~ens.alive
    nu_hat, edges = histogram(ens.stop[done], ens.grid, wgt, bin_cells)
    etas = []
    for r in range(len(ens.record_times)):
        pos = ens.record_pos[:, r]
        ok = ~np.isnan(pos[:, 0])
        etas.append(histogram(pos[ok], ens.grid, wgt, bin_cells)[0])
    shape = (len(etas),) + nu_hat.shape
    return EmpiricalMeasures(nu_hat, edges, np.array(etas).reshape(shape),
                             ens.record_times.copy(), bin_cells)


def nu_l1_error(ens: ParticleEnsemble, nu: DensityField, bin_cells: int = 1) -> float:
    """``L1`` distance between the stop histogram and ``nu`` on the same bins."""
    em = empirical_measures(ens, bin_cells)
    if bin_cells == 1:
        ref = nu.values
    else:
        ref = bin_average(nu, bin_cells)
    vol = math.prod(np.diff(e)[0] for e in em.edges)
    return float(np.sum(np.abs(em.nu_hat - ref)) * vol)


def wasserstein1_1d(samples: np.ndarray, nu: DensityField) -> float:
    """``W1`` between the empirical law of ``samples`` and ``nu / mass(nu)`` in 1D,
    as ``int |F_hat - F|`` with ``F`` the CDF of the piecewise-linear ``nu``."""
    g = nu.grid
    if g.dim != 1:
        raise ValueError("W1 by CDFs is one-dimensional")
    x = g.axes()[0]
    v = nu.values
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(x))])
    cum /= cum[-1]
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    pts = np.union1d(s, x)
    mid = 0.5 * (pts[1:] + pts[:-1])
    Fh = np.searchsorted(s, mid, side="right") / s.size
    F = np.interp(mid, x, cum)
    return float(np.sum(np.abs(Fh - F) * np.diff(pts)))


def stop_on_barrier(ens: ParticleEnsemble, s: BarrierField) -> tuple[float, np.ndarray]:
    """Fraction of stopped particles with ``|tau - s(stop)| <= dt_mc + slack``.

    The slack is the spread of the barrier over the particle's last step
    (endpoints and stop point), which linear crossing interpolation cannot
    resolve. Type II particles stopped at ``t = 0`` by randomisation are
    exempt. Returns ``(fraction, per-particle defect)``.
    """
    g = s.grid
    sel = ~ens.alive & ~(ens.instant & (ens.cost_type is CostType.TYPE_II))
    pts = np.ascontiguousarray(ens.stop[sel])
    sv = np.ascontiguousarray(s.values).ravel()
    lo, h, nn = np.array(g.lo), np.array(g.h), np.array(g.n, dtype=np.int64)
    sval = _s_many(sv, lo, h, nn, pts)
    with np.errstate(invalid="ignore"):
        d = np.abs(ens.tau[sel] - sval)
    d = np.where(np.isnan(d), np.inf, d)
    ok = d <= ens.dt_mc + ens.slack[sel] + 1e-12
    return (float(ok.mean()) if ok.size else 1.0), d


# ------------------------------------------------------------------------ cost

def _time_integral(L: Lagrangian, upto: np.ndarray, n_fine: int = 4096) -> np.ndarray:
    """``int_0^t L`` at each finite ``t`` in ``upto`` (cumulative trapezoid)."""
    upto = np.asarray(upto, dtype=float)
    fin = upto[np.isfinite(upto)]
    tmax = float(fin.max()) if fin.size else 0.0
    if tmax == 0.0:
        return np.zeros_like(upto)
    t = np.linspace(0.0, tmax, n_fine + 1)
    lv = L(t)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (lv[1:] + lv[:-1]) * np.diff(t))])
    return np.interp(upto, t, cum)


@dataclass
class CostEstimate:
    value: float
    sigma: float = 0.0


def cost_eulerian(times: np.ndarray, eta_mass: np.ndarray, L: Lagrangian) -> CostEstimate:
    """``sum_n mass(eta_n) int_{t_n}^{t_{n+1}} L`` for piecewise-constant ``eta``."""
    G = _time_integral(L, np.asarray(times))
    return CostEstimate(float(np.sum(np.asarray(eta_mass) * np.diff(G))))


def cost_mc(ens: ParticleEnsemble, L: Lagrangian) -> CostEstimate:
    """``(mass / N) sum_i int_0^{tau_i} L`` with its standard error."""
    if ens.alive.any():
        raise ValueError("cost needs every particle stopped")
    per = ens.mass * _time_integral(L, ens.tau)
    return CostEstimate(float(per.mean()), float(per.std(ddof=1) / math.sqrt(ens.N)))


def cost_eval(source, L: Lagrangian) -> CostEstimate:
    """Cost from a flow (anything with ``times`` and ``eta_mass()``) or an ensemble."""
    if isinstance(source, ParticleEnsemble):
        return cost_mc(source, L)
    return cost_eulerian(source.times, source.eta_mass(), L)
