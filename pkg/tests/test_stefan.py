import numpy as np
import pytest
from hypothesis import given, strategies as st

from freetarget import presets
from freetarget.errors import DomainTooSmall, NonExtinction
from freetarget.flow import evolve_type1, extract_barrier
from freetarget.free_target import ProblemSpec, solve_free_target
from freetarget.grid import BarrierField, DensityField, GridSpec, ScalarField, integrate, mass
from freetarget.stefan import (assemble_st1_solution, barrier_occupancy, interior_of,
                               melted_fraction, st2_enthalpy_solve, stefan_weak_residual)


@pytest.fixture(scope="module")
def st1():
    g, mu, f = presets.benchmark_1d(h=1 / 64)
    return assemble_st1_solution(ProblemSpec(g, mu, f), dt=1 / 256)


def test_st1_report_on_benchmark(st1):
    r = st1.report
    assert r["extinct"]
    assert r["eulerian_residual"] <= 0.02
    assert r["st1_residual"] <= 0.02
    assert r["eta_budget_gap"] <= 0.02
    assert r["subharmonic_order_pass"]
    assert r["target_is_indicator_gap"] <= 1e-6
    assert r["max_barrier_on_E"] <= r["extinction_time"]
    assert r["mass_nu"] == pytest.approx(r["mass_mu"], rel=1e-9)


def test_st1_bundle_exposes_flow(st1):
    assert st1.eta.shape[0] == len(st1.times) - 1
    assert st1.E_mask is st1.target.E


def test_melting_reaches_the_target_set():
    g, mu, f = presets.benchmark_1d(h=1 / 32)
    res = solve_free_target(ProblemSpec(g, mu, f))
    run = st2_enthalpy_solve(mu, f, 1 / 8, 4096.0, heat_tol=1e-12)
    assert np.array_equal(run.E_bar, res.E)
    assert run.weak_residual() <= 0.02


def test_enthalpy_is_conserved():
    g, mu, f = presets.benchmark_1d(h=1 / 32)
    run = st2_enthalpy_solve(mu, f, 1 / 16, 2.0)
    assert integrate(g, run.e_final) == pytest.approx(mass(mu), rel=1e-8)


def test_melted_flags_latch():
    g, mu, f = presets.benchmark_1d(h=1 / 32)
    run = st2_enthalpy_solve(mu, f, 1 / 16, 4.0)
    h = run.melted_history
    assert np.all(~h[:-1] | h[1:])
    assert np.all(run.phase >= 0) and np.all(run.phase <= 1)


def test_melting_in_small_box_raises():
    g, mu, f = presets.benchmark_1d(h=1 / 32, half_width=2.0)
    with pytest.raises(DomainTooSmall):
        st2_enthalpy_solve(mu, f, 1 / 8, 100.0, heat_tol=1e-12)


def test_unknown_variant_rejected(st1):
    with pytest.raises(ValueError):
        stefan_weak_residual(st1.times, st1.eta, st1.target.nu, st1.target.nu,
                             st1.E_mask, "St3")


def test_frozen_set_persists():
    g, mu, f, K = presets.k_complement_2d(h=1 / 16)
    b = assemble_st1_solution(ProblemSpec(g, mu, f), dt=1 / 16, t_end=4.0, k_mask=K,
                              horizons=(2.0, 4.0))
    r = b.report
    assert r["nu_max_on_K"] <= 1e-9
    for row in r["horizons"]:
        assert row["eta_positive_on_K"]
        assert row["hausdorff_active_to_K"] <= 2 / 16
    assert r["k_checks_pass"]


def test_occupancy_integrates_to_barrier():
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    s = BarrierField(g, np.array([0.0, 0.3, 1.0, 2.5, np.inf]))
    times = np.linspace(0.0, 2.0, 9)
    occ = barrier_occupancy(times, s)
    assert np.all((occ >= 0) & (occ <= 1))
    assert np.allclose(np.diff(times) @ occ, np.minimum(s.values, 2.0))


def test_interior_of_erodes():
    m = np.zeros(11, dtype=bool)
    m[2:9] = True
    assert interior_of(m, 2).sum() == 3
    assert not interior_of(np.zeros(5, dtype=bool)).any()


@given(e=st.floats(0, 10), nu=st.floats(0, 5))
def test_melted_fraction_in_unit_interval(e, nu):
    u = max(e - nu, 0.0)
    chi = melted_fraction(np.array([e]), np.array([u]), np.array([nu]))[0]
    assert 0.0 <= chi <= 1.0
    if nu > 0 and u == 0:
        assert chi == pytest.approx(min(e / nu, 1.0))
    if u > 0:
        assert chi == pytest.approx(1.0, rel=1e-12)


@given(seed=st.integers(0, 2**32 - 1))
def test_random_melts_conserve_enthalpy(seed):
    from freetarget.verify import InstanceGenerator

    mu, f = InstanceGenerator(seed=seed, dim=1, h=1 / 32).instance()
    run = st2_enthalpy_solve(mu, f, 1 / 8, 2.0)
    assert integrate(mu.grid, run.e_final) == pytest.approx(mass(mu), rel=1e-7)
    assert np.all(run.e_final >= -1e-9)


def test_plateau_st1_residual_small():
    h, dt, c = 1 / 32, 1 / 128, 0.5
    g = GridSpec.uniform(-4.0, 4.0, h)
    w0 = np.full(g.shape, c)
    w0[[0, -1]] = 0.0
    nu = DensityField(g, np.ones(g.shape))
    flow = evolve_type1(ScalarField(g, w0), nu, dt, 10.0)
    s = extract_barrier(flow)
    r = stefan_weak_residual(flow.times, flow.eta, nu, flow.mu, w0 > flow.eps_active,
                             "St1", active=barrier_occupancy(flow.times, s))
    assert r <= 2 * (h * h + dt)


def test_weak_residual_of_nothing_is_zero():
    g = GridSpec.uniform(-2.0, 2.0, 1 / 16)
    zero = DensityField(g, np.zeros(g.shape))
    eta = np.zeros((4,) + g.shape)
    times = np.linspace(0.0, 1.0, 5)
    for variant in ("St1", "St2"):
        assert stefan_weak_residual(times, eta, zero, zero, np.zeros(g.shape, bool),
                                    variant) == 0.0


def test_mass_below_ceiling_gives_empty_bundle():
    g, mu, _ = presets.benchmark_1d(h=1 / 32)
    f = presets.constant(g, 3.0)
    b = assemble_st1_solution(ProblemSpec(g, mu, f), dt=1 / 32)
    assert not b.E_mask.any()
    assert not np.any(b.flow.eta) and not np.any(b.s.values)
    assert np.allclose(b.target.nu.values, mu.values)


def test_short_horizon_with_positive_ceiling_raises():
    g, mu, f = presets.benchmark_1d(h=1 / 32)
    with pytest.raises(NonExtinction):
        assemble_st1_solution(ProblemSpec(g, mu, f), dt=1 / 32, t_end=0.5)


def test_no_superheat_means_no_melting():
    g = GridSpec.uniform(-4.0, 4.0, 1 / 32)
    x = g.axes()[0]
    mu = DensityField(g, (np.abs(x) <= 1).astype(float))
    run = st2_enthalpy_solve(mu, presets.constant(g, 1.0), 1 / 16, 4.0)
    assert not np.any(run.eta)
    assert not run.E_bar.any()


@given(seed=st.integers(0, 2**32 - 1))
def test_melting_is_monotone_in_mu(seed):
    from freetarget.verify import InstanceGenerator

    mu1, f = InstanceGenerator(seed=seed, dim=1, h=1 / 32).instance()
    extra, _ = InstanceGenerator(seed=seed + 1, dim=1, h=1 / 32).instance()
    mu2 = DensityField(mu1.grid, mu1.values + 0.5 * extra.values)
    r1 = st2_enthalpy_solve(mu1, f, 1 / 8, 2.0)
    r2 = st2_enthalpy_solve(mu2, f, 1 / 8, 2.0)
    n = min(len(r1.eta), len(r2.eta))
    assert np.all(r1.eta[:n] <= r2.eta[:n] + 1e-7)
