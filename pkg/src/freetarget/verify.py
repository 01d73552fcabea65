"""Seeded random instances and theorem checks with JSON reports.

Each check runs a number of trials, records what it measured next to the
bound it used, and refuses to pass by vacuity: a minimum number of trials
must exercise a strictly positive left-hand side.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import presets
from .errors import FreeTargetError
from .flow import evolve_type1, evolve_type2, extract_barrier
from .free_target import ProblemSpec, solve_free_target
from .grid import DensityField, GridSpec, hausdorff_distance, l1_pos_diff, mass, tv_norm
from .stefan import interior_of, st2_enthalpy_solve

log = logging.getLogger(__name__)

SLACK_FORMULA = "C*h with C = 4*max(f)*diam(E)"


# ------------------------------------------------------------------ instances

@dataclass
class InstanceGenerator:
    """Random initial densities made of a few bumps, normalised to mass 1.

    ``shape`` is ``"box"`` (flat discs/intervals) or ``"cosine"``
    (``cos^2`` bumps). Bumps sit inside ``[-spread, spread]^dim`` and are
    small enough that ``mu`` exceeds ``f`` somewhere, so the flows are not
    trivial. ``f_mode`` is ``"one"``, ``"delta"`` (constant ``delta``) or
    ``"k_complement"`` (``f = 0`` on a disc ``K`` holding the support).
    """

    seed: int
    dim: int = 1
    n_bumps: tuple[int, int] = (1, 3)
    shape: str = "box"
    amplitude: tuple[float, float] = (1.0, 3.0)
    radius: tuple[float, float] = (0.15, 0.35)
    spread: float = 0.6
    f_mode: str = "one"
    delta: float = 0.5
    h: float = 1 / 32
    half_width: float = 3.0

    def __post_init__(self) -> None:
        if self.shape not in ("box", "cosine"):
            raise ValueError(f"unknown bump shape {self.shape!r}")
        if self.f_mode not in ("one", "delta", "k_complement"):
            raise ValueError(f"unknown f mode {self.f_mode!r}")
        self.rng = np.random.default_rng(self.seed)

    @property
    def grid(self) -> GridSpec:
        return GridSpec.uniform(-self.half_width, self.half_width, self.h, self.dim)

    def _bumps(self, k: int):
        r = self.rng
        out = []
        for _ in range(k):
            c = r.uniform(-self.spread, self.spread, self.dim)
            out.append((c, r.uniform(*self.radius), r.uniform(*self.amplitude)))
        return out

    def _render(self, bumps) -> np.ndarray:
        def func(*xs):
            tot = 0.0
            for c, rad, amp in bumps:
                d2 = sum((x - ci) ** 2 for x, ci in zip(xs, c))
                if self.shape == "box":
                    tot = tot + amp * (d2 < rad * rad)
                else:
                    u = np.sqrt(d2) / rad
                    tot = tot + amp * np.where(u < 1, np.cos(0.5 * np.pi * u) ** 2, 0.0)
            return tot
        return presets.cell_average(self.grid, func)

    def bumps(self):
        return self._bumps(int(self.rng.integers(self.n_bumps[0], self.n_bumps[1] + 1)))

    def density(self, bumps, total: float | None = 1.0) -> DensityField:
        v = self._render(bumps)
        if total is not None:
            v = v * (total / float(np.sum(v * self.grid.quadrature_weights())))
        return DensityField(self.grid, v)

    def ceiling(self, mu: DensityField) -> DensityField:
        g = self.grid
        if self.f_mode == "one":
            return presets.constant(g, 1.0)
        if self.f_mode == "delta":
            return presets.constant(g, self.delta)
        pos = mu.values > 0
        rad = float(np.max(g.radius()[pos])) + 2 * self.h if pos.any() else 0.0
        return DensityField(g, (g.radius() > rad).astype(float))

    def instance(self) -> tuple[DensityField, DensityField]:
        mu = self.density(self.bumps())
        return mu, self.ceiling(mu)

    def ordered_pair(self) -> tuple[DensityField, DensityField, DensityField]:
        """``mu1 <= mu2``: ``mu2`` adds one to three bumps to ``mu1``."""
        base = self.bumps()
        mu1 = self.density(base)
        extra = self.density(self._bumps(int(self.rng.integers(1, 4))),
                             total=float(self.rng.uniform(0.2, 0.6)))
        mu2 = DensityField(self.grid, mu1.values + extra.values)
        return mu1, mu2, self.ceiling(mu2)

    def near_pair(self) -> tuple[DensityField, DensityField, DensityField]:
        """Unordered pair: ``mu2`` moves a fraction of ``mu1``'s mass to new bumps."""
        mu1 = self.density(self.bumps())
        other = self.density(self.bumps())
        a = float(self.rng.uniform(0.1, 0.5))
        mu2 = DensityField(self.grid, (1 - a) * mu1.values + a * other.values)
        if self.f_mode == "k_complement":
            f = self.ceiling(DensityField(self.grid, mu1.values + other.values))
        else:
            f = self.ceiling(mu1)
        return mu1, mu2, f


# -------------------------------------------------------------------- reports

@dataclass
class Trial:
    inputs: dict
    measured: dict
    bound: dict
    passed: bool
    lhs: float = 0.0      # magnitude of the bounded quantity (non-vacuity)
    error: str | None = None

    def as_dict(self) -> dict:
        d = {"inputs": self.inputs, "measured": self.measured, "bound": self.bound,
             "pass": self.passed, "lhs": self.lhs}
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class TheoremReport:
    theorem: str
    seed: int
    trials: list[Trial] = field(default_factory=list)
    slack: str = SLACK_FORMULA
    min_nonvacuous: int = 1

    @property
    def nonvacuous(self) -> int:
        return sum(1 for t in self.trials if t.lhs > 0)

    @property
    def passed(self) -> bool:
        return (bool(self.trials) and all(t.passed for t in self.trials)
                and self.nonvacuous >= self.min_nonvacuous)

    def as_dict(self) -> dict:
        return {"theorem": self.theorem, "seed": self.seed, "slack": self.slack,
                "min_nonvacuous": self.min_nonvacuous, "nonvacuous": self.nonvacuous,
                "trials": [t.as_dict() for t in self.trials], "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _diameter(grid: GridSpec, mask: np.ndarray) -> float:
    if not mask.any():
        return 0.0
    pts = grid.points()[mask.ravel()]
    ext = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(ext))


def slack_constant(f: DensityField, *masks: np.ndarray) -> float:
    m = np.zeros(f.grid.shape, dtype=bool)
    for k in masks:
        m |= k
    return 4.0 * float(f.values.max()) * _diameter(f.grid, m)


def _failed(inputs: dict, exc: Exception) -> Trial:
    return Trial(inputs, {}, {}, False, 0.0, f"{type(exc).__name__}: {exc}")


# --------------------------------------------------------------------- checks

def _solve(mu, f, tol):
    return solve_free_target(ProblemSpec(mu.grid, mu, f, tolerance=tol))


def _barrier(res, dt, tol, t_end=200.0):
    flow = evolve_type1(res.w0, res.nu, dt, t_end, tolerance=tol, eps_active=res.eps_active,
                        store_every=1)
    return extract_barrier(flow)


def monotonicity_trial(mu1: DensityField, mu2: DensityField, f: DensityField, *,
                       dt: float | None = None, tolerance: float = 1e-10,
                       inputs: dict | None = None) -> Trial:
    """One ordered pair: ``nu1 <= nu2`` up to ``C h`` and ``s1 <= s2`` on
    ``{nu1 > 0}`` up to ``dt + C h``. Raises ``ValueError`` if ``mu1 <= mu2``
    fails anywhere."""
    if np.any(mu1.values > mu2.values):
        raise ValueError("monotonicity needs mu1 <= mu2 at every node")
    h = min(mu1.grid.h)
    dt = h if dt is None else dt
    r1, r2 = _solve(mu1, f, tolerance), _solve(mu2, f, tolerance)
    s1, s2 = _barrier(r1, dt, tolerance), _barrier(r2, dt, tolerance)
    C = slack_constant(f, r1.E, r2.E)
    nu_excess = float(np.max(r1.nu.values - r2.nu.values))
    on = r1.nu.values > 0
    s_excess = float(np.max((s1.values - s2.values)[on], initial=-np.inf))
    nu_gap = float(np.sum((r2.nu.values - r1.nu.values) * mu1.grid.quadrature_weights()))
    s_gap = float(np.max((s2.values - s1.values)[on], initial=0.0))
    b_nu, b_s = C * h, dt + C * h
    ok = nu_excess <= b_nu and s_excess <= b_s
    return Trial(
        dict(inputs or {}, h=h, dt=dt),
        {"max(nu1-nu2)": nu_excess, "max(s1-s2) on supp nu1": s_excess,
         "int(nu2-nu1)": nu_gap, "max(s2-s1) on supp nu1": s_gap,
         "mass_mu1": mass(mu1), "mass_mu2": mass(mu2), "C": C},
        {"nu": b_nu, "s": b_s}, ok, max(nu_gap, 0.0))


def check_monotonicity(seed: int, trials: int = 20, *, dim: int = 2, h: float = 1 / 32,
                       dt: float | None = None, tolerance: float = 1e-10,
                       min_nonvacuous: int = 5, **gen) -> TheoremReport:
    """``mu1 <= mu2`` implies ``nu1 <= nu2`` and, for type I, ``s1 <= s2`` on
    ``{nu1 > 0}``, each up to the declared slack."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rep = TheoremReport("monotonicity", seed, min_nonvacuous=min_nonvacuous)
    for k in range(trials):
        ig = InstanceGenerator(seed=_trial_seed(seed, k), dim=dim, h=h, **gen)
        inputs = {"trial": k, "generator_seed": ig.seed, "dim": dim, "f_mode": ig.f_mode}
        try:
            mu1, mu2, f = ig.ordered_pair()
            rep.trials.append(monotonicity_trial(mu1, mu2, f, dt=dt, tolerance=tolerance,
                                                 inputs=inputs))
        except (FreeTargetError, ValueError) as exc:
            rep.trials.append(_failed(inputs, exc))
    return rep


def contraction_trial(mu1: DensityField, mu2: DensityField, f: DensityField, *,
                      tolerance: float = 1e-10, inputs: dict | None = None) -> Trial:
    """One pair: ``L1`` contraction of positive parts, and the ``TV`` bound
    when ``f`` is constant."""
    h = min(mu1.grid.h)
    r1, r2 = _solve(mu1, f, tolerance), _solve(mu2, f, tolerance)
    C = slack_constant(f, r1.E, r2.E)
    lhs = l1_pos_diff(r1.nu, r2.nu)
    rhs = l1_pos_diff(mu1, mu2)
    measured = {"l1_pos(nu1-nu2)": lhs, "l1_pos(mu1-mu2)": rhs, "C": C}
    bound = {"contraction": rhs + C * h}
    ok = lhs <= rhs + C * h
    if np.ptp(f.values) == 0:
        for i, (mu, r) in enumerate(((mu1, r1), (mu2, r2)), 1):
            tn, tm = tv_norm(r.nu), tv_norm(mu)
            measured[f"tv(nu{i})"], measured[f"tv(mu{i})"] = tn, tm
            bound[f"bv{i}"] = tm + C * h
            ok = ok and tn <= tm + C * h
    return Trial(dict(inputs or {}, h=h), measured, bound, ok, lhs)


def check_contraction_bv(seed: int, trials: int = 20, *, dim: int = 2, h: float = 1 / 32,
                         tolerance: float = 1e-10, min_nonvacuous: int = 5,
                         **gen) -> TheoremReport:
    """``||(nu1-nu2)+|| <= ||(mu1-mu2)+||`` and, for constant ``f``,
    ``TV(nu) <= TV(mu)``, each up to the declared slack."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rep = TheoremReport("contraction_bv", seed, min_nonvacuous=min_nonvacuous)
    for k in range(trials):
        ig = InstanceGenerator(seed=_trial_seed(seed, k), dim=dim, h=h, **gen)
        inputs = {"trial": k, "generator_seed": ig.seed, "dim": dim, "f_mode": ig.f_mode}
        try:
            mu1, mu2, f = ig.near_pair()
            rep.trials.append(contraction_trial(mu1, mu2, f, tolerance=tolerance,
                                                inputs=inputs))
        except (FreeTargetError, ValueError) as exc:
            rep.trials.append(_failed(inputs, exc))
    return rep


@dataclass
class UniversalityCase:
    name: str
    mu: DensityField
    f: DensityField
    dt_flow: float
    dt_melt: float


def universality_case(name: str, mu: DensityField, f: DensityField, *, tolerance: float = 1e-10,
                      dt_flow: float | None = None, dt_melt: float | None = None,
                      store_every: int = 8) -> Trial:
    """Type I set from the obstacle problem, type II set from the long-time
    increasing potential flow, and the melted set of the enthalpy solver,
    compared pairwise in Hausdorff distance; plus interior saturation."""
    g = mu.grid
    h = min(g.h)
    dt_flow = 4 * h if dt_flow is None else dt_flow
    dt_melt = 4 * h if dt_melt is None else dt_melt
    res = _solve(mu, f, tolerance)
    inst = np.minimum(f.values, mu.values)
    mu_a = DensityField.clipped(g, mu.values - inst)
    f_a = DensityField.clipped(g, f.values - inst)
    t_end = 4096.0
    flow2 = evolve_type2(mu_a, f_a, dt_flow, t_end, tolerance=tolerance,
                         eps_active=res.eps_active, instant_mass=DensityField(g, inst),
                         w_ref=res.w0, store_every=store_every)
    E2 = flow2.w[-1] > res.eps_active
    melt = st2_enthalpy_solve(mu_a, f_a, dt_melt, t_end, tolerance=tolerance,
                              store_every=store_every, heat_tol=1e-9 * max(mass(mu_a), 1e-300))
    E3 = melt.E_bar
    d12 = hausdorff_distance(g, res.E, E2)
    d13 = hausdorff_distance(g, res.E, E3)
    d23 = hausdorff_distance(g, E2, E3)
    core = interior_of(res.E, 2)
    sat = float(np.max(np.abs(res.nu.values - f.values)[core], initial=0.0))
    band = 2 * h
    ok = d12 <= band and d13 <= band and d23 <= band and sat <= 1e-6 and flow2.converged
    return Trial(
        {"case": name, "h": h, "dt_flow": dt_flow, "dt_melt": dt_melt},
        {"hausdorff_I_II": d12, "hausdorff_I_melt": d13, "hausdorff_II_melt": d23,
         "saturation_gap": sat, "type_II_converged": flow2.converged,
         "target_gap_I_II": res.universality_gap, "E_nodes": int(res.E.sum()),
         "melt_time": float(melt.times[-1])},
        {"hausdorff": band, "saturation": 1e-6}, ok, float(res.E.sum()))


def check_universality_and_saturation(seed: int, trials: int = 10, *, dim: int = 2,
                                      h: float | None = None, benchmarks: bool = True,
                                      tolerance: float = 1e-10, **gen) -> TheoremReport:
    """The two benchmarks (if requested) plus ``trials`` random instances."""
    rep = TheoremReport("universality_saturation", seed, slack="2h Hausdorff band",
                        min_nonvacuous=1)
    cases = []
    if benchmarks:
        g, mu, f = presets.benchmark_1d()
        cases.append(("benchmark_1d", mu, f))
        g, mu, f = presets.ball_2d()
        cases.append(("ball_2d", mu, f))
    hh = (1 / 64 if dim == 1 else 1 / 32) if h is None else h
    for k in range(trials):
        ig = InstanceGenerator(seed=_trial_seed(seed, k), dim=dim, h=hh, **gen)
        cases.append((f"random_{k}", *ig.instance()))
    for name, mu, f in cases:
        try:
            rep.trials.append(universality_case(name, mu, f, tolerance=tolerance))
        except (FreeTargetError, ValueError) as exc:
            rep.trials.append(_failed({"case": name}, exc))
    return rep


MC_BOUNDS = {"nu_l1": 0.05, "w1": 0.03, "stop_on_barrier": 0.999, "cost_sigmas": 3.0}


def check_mc_consistency(seed: int, *, N: int = 200_000, h: float = 1 / 64,
                         dt: float = 1 / 2048, dt_mc: float | None = None,
                         bin_width: float = 0.5, rerun_N: int = 20_000) -> TheoremReport:
    """PDE versus particles on the 1D benchmark, plus the constant-barrier
    Gaussian law."""
    from . import montecarlo as mc
    from .free_target import Lagrangian
    from .stefan import assemble_st1_solution

    dt_mc = dt / 4 if dt_mc is None else dt_mc
    rep = TheoremReport("mc_consistency", seed, slack="pilot-calibrated bounds",
                        min_nonvacuous=1)
    g, mu, f = presets.benchmark_1d(h=h)
    bundle = assemble_st1_solution(ProblemSpec(g, mu, f), dt=dt)
    ens = mc.run_ensemble(mu, bundle.s, "I", N, dt_mc, seed)
    bins = int(round(bin_width / h))
    L = Lagrangian.linear()
    ce, cm = mc.cost_eval(bundle.flow, L), mc.cost_eval(ens, L)
    l1 = mc.nu_l1_error(ens, bundle.target.nu, bins)
    w1 = mc.wasserstein1_1d(ens.stop[:, 0], bundle.target.nu)
    frac, _ = mc.stop_on_barrier(ens, bundle.s)
    a = mc.run_ensemble(mu, bundle.s, "I", rerun_N, dt_mc, seed)
    b = mc.run_ensemble(mu, bundle.s, "I", rerun_N, dt_mc, seed)
    same = (a.tau.tobytes() == b.tau.tobytes() and a.stop.tobytes() == b.stop.tobytes())
    zc = abs(ce.value - cm.value) / cm.sigma
    ok = (l1 <= MC_BOUNDS["nu_l1"] and w1 <= MC_BOUNDS["w1"]
          and frac >= MC_BOUNDS["stop_on_barrier"] and zc <= MC_BOUNDS["cost_sigmas"] and same)
    rep.trials.append(Trial(
        {"case": "benchmark_1d", "N": N, "h": h, "dt": dt, "dt_mc": dt_mc,
         "bin_width": bin_width, "seed": seed},
        {"nu_l1": l1, "w1": w1, "stop_on_barrier": frac, "cost_eulerian": ce.value,
         "cost_mc": cm.value, "cost_sigma": cm.sigma, "cost_z": zc,
         "alive": int(ens.alive.sum()), "rerun_identical": same},
        dict(MC_BOUNDS), ok, l1))
    rep.trials.append(gaussian_law_trial(seed))
    return rep


def gaussian_law_trial(seed: int, N: int = 100_000, T: float = 0.5, dt_mc: float = 1 / 256
                       ) -> Trial:
    """Constant barrier ``s = T`` from a point mass: stops are ``Normal(0, T)``."""
    from . import montecarlo as mc
    from .grid import BarrierField

    g = GridSpec.uniform(-6.0, 6.0, 1 / 64, 1)
    s = BarrierField(g, np.full(g.shape, T))
    ens = mc.simulate_stop(np.zeros((N, 1)), s, "I", dt_mc, seed)
    var = float(np.var(ens.stop[:, 0]))
    band = 3 * T * math.sqrt(2 / N)
    tau_ok = bool(np.all(np.abs(ens.tau - T) <= dt_mc + 1e-12))
    ok = abs(var - T) <= band and tau_ok
    return Trial({"case": "constant_barrier", "N": N, "T": T, "dt_mc": dt_mc},
                 {"variance": var, "tau_on_T": tau_ok}, {"variance": band}, ok, var)


SUITES = ("monotonicity", "contraction_bv", "universality_saturation", "mc_consistency")


def run_suite(name: str, seed: int, **kw) -> list[TheoremReport]:
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed, **kw.get(s, {}))]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {SUITES + ('all',)}")
    fn = {"monotonicity": check_monotonicity, "contraction_bv": check_contraction_bv,
          "universality_saturation": check_universality_and_saturation,
          "mc_consistency": check_mc_consistency}[name]
    return [fn(seed, **kw)]


def _trial_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])
