import numpy as np
import pytest
from hypothesis import given, strategies as st

from freetarget import presets
from freetarget.errors import IncompleteFlow
from freetarget.flow import (eulerian_residual, evolve_type1, evolve_type2, extract_barrier,
                             mass_budget)
from freetarget.free_target import ProblemSpec, solve_free_target
from freetarget.grid import DensityField, GridSpec, ScalarField, hausdorff_distance, mass
from freetarget.verify import InstanceGenerator

# First time the gap vanishes at x = 0 for the 1D benchmark, from the explicit
# projected scheme in tests/oracles.py at h = 1/512, dt = h^2/2.
S_ORIGIN = 1.2367477416992188

H, DT = 1 / 32, 1 / 128


@pytest.fixture(scope="module")
def bench():
    g, mu, f = presets.benchmark_1d(h=H)
    res = solve_free_target(ProblemSpec(g, mu, f))
    flow = evolve_type1(res.w0, res.nu, DT, 50.0, eps_active=res.eps_active)
    return mu, res, flow


def test_gap_decreases_exactly(bench):
    _, _, flow = bench
    assert np.all(np.diff(flow.w, axis=0) <= 0.0)


def test_active_sets_nested(bench):
    _, res, flow = bench
    act = flow.w > res.eps_active
    assert np.all(~act[1:] | act[:-1])


def test_flow_goes_extinct(bench):
    _, _, flow = bench
    assert flow.extinct and np.isfinite(flow.extinction_time)


def test_barrier_at_origin_matches_fine_scheme(bench):
    _, res, flow = bench
    s = extract_barrier(flow)
    mid = s.grid.n[0] // 2
    assert abs(s.values[mid] - S_ORIGIN) <= 3 * (H + DT)
    assert np.all(s.values[~res.E] == 0.0)
    assert np.all(np.isfinite(s.values))
    assert s.values[res.E].max() <= flow.extinction_time + 1e-12


def test_alive_mass_budget(bench):
    _, res, flow = bench
    b = mass_budget(flow, res.w0)
    assert b["relative_gap"] <= 0.02
    assert b["rho_mass"] == pytest.approx(mass(res.nu), rel=1e-9)


def test_initial_eta_is_mu(bench):
    mu, _, flow = bench
    assert np.allclose(flow.mu.values, mu.values, atol=1e-8)


def test_eulerian_residual_small(bench):
    mu, _, flow = bench
    assert eulerian_residual(flow, mu) <= 0.02


def test_block_storage_keeps_time_integral(bench):
    _, res, flow = bench
    coarse = evolve_type1(res.w0, res.nu, DT, 50.0, eps_active=res.eps_active, store_every=4)
    full = float(np.diff(flow.times) @ flow.eta_mass())
    part = float(np.diff(coarse.times) @ coarse.eta_mass())
    assert part == pytest.approx(full, rel=1e-10)
    assert np.array_equal(coarse.w[-1], flow.w[-1])


def test_incomplete_type_one_flow_raises(bench):
    _, res, _ = bench
    short = evolve_type1(res.w0, res.nu, DT, 0.1, eps_active=res.eps_active)
    assert not short.extinct
    with pytest.raises(IncompleteFlow):
        extract_barrier(short)
    s = extract_barrier(short, allow_incomplete=True)
    assert np.isinf(s.values).any()


def test_type_two_flow_reaches_gap():
    g, mu, f = presets.benchmark_1d(h=H)
    res = solve_free_target(ProblemSpec(g, mu, f))
    inst = np.minimum(mu.values, f.values)
    flow = evolve_type2(DensityField.clipped(g, mu.values - inst),
                        DensityField.clipped(g, f.values - inst), 4 * H, 4096.0,
                        eps_active=res.eps_active, instant_mass=DensityField(g, inst),
                        w_ref=res.w0, store_every=8)
    assert flow.converged
    assert np.all(np.diff(flow.w, axis=0) >= 0.0)
    E2 = flow.w[-1] > res.eps_active
    assert hausdorff_distance(g, res.E, E2) <= 2 * H
    s = extract_barrier(flow)
    assert np.all(np.isinf(s.values[~E2]))
    assert np.all(np.isfinite(s.values[E2]))


def test_nonpositive_step_rejected(bench):
    _, res, _ = bench
    with pytest.raises(ValueError):
        evolve_type1(res.w0, res.nu, 0.0, 1.0)


@given(seed=st.integers(0, 2**32 - 1))
def test_random_flows_are_monotone_and_nested(seed):
    ig = InstanceGenerator(seed=seed, dim=1, h=1 / 32)
    mu, f = ig.instance()
    res = solve_free_target(ProblemSpec(mu.grid, mu, f))
    flow = evolve_type1(res.w0, res.nu, 1 / 32, 200.0, eps_active=res.eps_active)
    assert np.all(np.diff(flow.w, axis=0) <= 0.0)
    act = flow.w > res.eps_active
    assert np.all(~act[1:] | act[:-1])
    if res.E.any():
        b = mass_budget(flow, res.w0)
        assert b["relative_gap"] <= 0.05


def _plateau(h, dt, c=0.5):
    g = GridSpec.uniform(-4.0, 4.0, h)
    w0 = np.full(g.shape, c)
    w0[[0, -1]] = 0.0
    return evolve_type1(ScalarField(g, w0), DensityField(g, np.ones(g.shape)), dt, 10.0)


@pytest.mark.parametrize("h,dt", [(1 / 16, 1 / 64), (1 / 32, 1 / 128)])
def test_plateau_empties_at_twice_its_height(h, dt):
    # away from the walls Lap w = 0 and each step removes dt/2 exactly
    c = 0.5
    flow = _plateau(h, dt, c)
    s = extract_barrier(flow)
    core = np.abs(flow.grid.axes()[0]) <= 1.0
    assert np.all(np.abs(s.values[core] - 2 * c) <= dt)
    assert eulerian_residual(flow, flow.mu, s) <= 2 * (h * h + dt)


def test_zero_gap_flow_is_trivial():
    g = GridSpec.uniform(-2.0, 2.0, 1 / 16)
    zero = np.zeros(g.shape)
    flow = evolve_type1(ScalarField(g, zero), DensityField(g, np.ones(g.shape)), 1 / 16, 1.0)
    assert flow.extinct and flow.extinction_time == 0.0
    assert not np.any(flow.w) and not np.any(flow.eta)
    assert not np.any(extract_barrier(flow).values)
    assert eulerian_residual(flow, DensityField(g, zero)) == 0.0


def test_benchmark_barrier_shape(bench):
    _, _, flow = bench
    s = extract_barrier(flow).values
    x = flow.grid.axes()[0]
    assert np.allclose(s, s[::-1], atol=1e-9)
    right = s[(x >= 0) & (x <= 2 + 1e-12)]
    assert np.all(np.diff(right) <= 1e-9)
    assert s[np.argmin(np.abs(x - 2))] <= 2 * flow.dt
    assert s[np.argmin(np.abs(x + 2))] <= 2 * flow.dt


def _type2_barrier(mu, f, dt):
    g = mu.grid
    res = solve_free_target(ProblemSpec(g, mu, f))
    inst = np.minimum(mu.values, f.values)
    flow = evolve_type2(DensityField.clipped(g, mu.values - inst),
                        DensityField.clipped(g, f.values - inst), dt, 4096.0,
                        eps_active=res.eps_active, instant_mass=DensityField(g, inst),
                        w_ref=res.w0, store_every=4)
    assert flow.converged
    return res.E, extract_barrier(flow).values


def test_type_two_barriers_are_ordered():
    h, dt = 1 / 32, 1 / 32
    g, mu1, mu2, f = presets.pair_1d(ordered=True, h=h)
    E1, s1 = _type2_barrier(mu1, f, dt)
    E2, s2 = _type2_barrier(mu2, f, dt)
    assert np.all(~E1 | E2)
    assert np.all(s1[E1] >= s2[E1] - (dt + 2 * h))
