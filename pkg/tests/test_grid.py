import numpy as np
import pytest
from hypothesis import given, strategies as st

from freetarget.errors import GridMismatch
from freetarget.grid import (BarrierField, DensityField, GridSpec, ScalarField, boundary_nodes,
                             hausdorff_distance, integrate, interp_eval, l1_diff, l1_pos_diff,
                             laplacian, mass, read_field, read_meta, tv_norm, write_field)


def test_uniform_grid_counts_nodes():
    g = GridSpec.uniform(-4.0, 4.0, 1 / 64, 1)
    assert g.n == (513,)
    assert g.h == (1 / 64,)
    g2 = GridSpec.uniform(-1.0, 1.0, 0.25, 2)
    assert g2.shape == (9, 9)
    assert g2.points().shape == (81, 2)


def test_spacing_must_divide_box():
    with pytest.raises(ValueError):
        GridSpec.uniform(0.0, 1.0, 0.3, 1)


def test_density_rejects_negative_values():
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    with pytest.raises(ValueError):
        DensityField(g, np.array([0, 1, -1, 0, 0.0]))


def test_barrier_allows_infinity():
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    s = BarrierField(g, np.array([0, 1, np.inf, 2, 0.0]))
    assert np.isinf(s.values[2])


def test_trapezoid_mass_of_constant():
    g = GridSpec.uniform(-1.0, 1.0, 1 / 16, 2)
    assert mass(DensityField(g, np.ones(g.shape))) == pytest.approx(4.0, rel=1e-12)


def test_differences_require_same_grid():
    a = DensityField(GridSpec.uniform(0.0, 1.0, 0.25, 1), np.ones(5))
    b = DensityField(GridSpec.uniform(0.0, 1.0, 0.125, 1), np.ones(9))
    with pytest.raises(GridMismatch):
        l1_diff(a, b)


def test_l1_pos_is_one_sided():
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    a = DensityField(g, np.array([0, 2, 0, 0, 0.0]))
    b = DensityField(g, np.array([0, 0, 0, 3, 0.0]))
    assert l1_pos_diff(a, b) == pytest.approx(0.5)
    assert l1_pos_diff(b, a) == pytest.approx(0.75)
    assert l1_diff(a, b) == pytest.approx(1.25)


def test_tv_of_box_counts_jumps():
    g = GridSpec.uniform(-2.0, 2.0, 1 / 8, 1)
    x = g.axes()[0]
    f = DensityField(g, 3.0 * (np.abs(x) <= 1))
    assert tv_norm(f) == pytest.approx(6.0)


def test_laplacian_exact_on_quadratics():
    g = GridSpec.uniform(-1.0, 1.0, 1 / 8, 2)
    X, Y = g.mesh()
    lap = laplacian(g, X**2 + 3 * Y**2)
    inner = g.interior_mask()
    assert np.allclose(lap[inner], 8.0)


def test_interpolation_is_exact_on_bilinear():
    g = GridSpec.uniform(-1.0, 1.0, 1 / 4, 2)
    X, Y = g.mesh()
    f = ScalarField(g, 1 + 2 * X - Y + X * Y)
    pts = np.array([[0.1, -0.3], [0.77, 0.41]])
    expect = 1 + 2 * pts[:, 0] - pts[:, 1] + pts[:, 0] * pts[:, 1]
    assert np.allclose(interp_eval(f, pts), expect)


def test_interpolation_with_infinite_corner_is_infinite():
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    s = BarrierField(g, np.array([0, 1, np.inf, 2, 0.0]))
    assert np.isinf(interp_eval(s, [0.3]))
    assert interp_eval(s, [0.125]) == pytest.approx(0.5)


def test_hausdorff_of_shifted_intervals():
    g = GridSpec.uniform(-2.0, 2.0, 1 / 16, 1)
    x = g.axes()[0]
    assert hausdorff_distance(g, np.abs(x) <= 1, np.abs(x - 0.25) <= 1) == pytest.approx(0.25)
    assert hausdorff_distance(g, x > 9, x > 9) == 0.0
    assert np.isinf(hausdorff_distance(g, x > 0, x > 9))


def test_boundary_nodes_of_square():
    m = np.zeros((7, 7), dtype=bool)
    m[2:5, 2:5] = True
    b = boundary_nodes(m)
    assert b.sum() == 8 and not b[3, 3]


def test_csv_metadata_lines_are_skipped(tmp_path):
    g = GridSpec.uniform(0.0, 1.0, 0.25, 1)
    f = ScalarField(g, np.arange(5.0))
    p = tmp_path / "f.csv"
    write_field(p, f, {"config_hash": "abc"})
    assert read_meta(p) == {"config_hash": "abc"}
    assert np.array_equal(read_field(p).values, f.values)


@given(dim=st.integers(1, 2), n=st.integers(3, 9),
       vals=st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
                     min_size=81, max_size=81))
def test_csv_round_trip_is_bitwise(tmp_path_factory, dim, n, vals):
    g = GridSpec.uniform(-0.5, 1.5, 2.0 / (n - 1), dim)
    v = np.array(vals[: int(np.prod(g.shape))]).reshape(g.shape)
    p = tmp_path_factory.mktemp("rt") / "f.csv"
    write_field(p, ScalarField(g, v))
    back = read_field(p)
    assert back.grid == g
    assert back.values.tobytes() == v.tobytes()


@given(vals=st.lists(st.floats(0, 1e6) | st.just(float("inf")), min_size=9, max_size=9))
def test_barrier_round_trip_keeps_infinity(tmp_path_factory, vals):
    g = GridSpec.uniform(0.0, 1.0, 1 / 8, 1)
    v = np.array(vals)
    p = tmp_path_factory.mktemp("rt") / "s.csv"
    write_field(p, BarrierField(g, v))
    assert read_field(p, BarrierField).values.tobytes() == v.tobytes()


@given(st.lists(st.floats(0, 10), min_size=9, max_size=9))
def test_integrate_is_linear(vals):
    g = GridSpec.uniform(0.0, 2.0, 0.25, 1)
    v = np.array(vals)
    assert integrate(g, 2 * v) == pytest.approx(2 * integrate(g, v), abs=1e-9)
