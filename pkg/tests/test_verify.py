import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from freetarget import presets, verify as vf
from freetarget.grid import GridSpec, mass


def test_generator_is_reproducible():
    a = vf.InstanceGenerator(seed=5, dim=2, h=1 / 16).instance()
    b = vf.InstanceGenerator(seed=5, dim=2, h=1 / 16).instance()
    assert np.array_equal(a[0].values, b[0].values)
    assert mass(a[0]) == pytest.approx(1.0, rel=1e-12)


def test_generator_rejects_bad_options():
    with pytest.raises(ValueError):
        vf.InstanceGenerator(seed=0, shape="star")
    with pytest.raises(ValueError):
        vf.InstanceGenerator(seed=0, f_mode="two")


@given(seed=st.integers(0, 2**32 - 1), dim=st.integers(1, 2),
       mode=st.sampled_from(["one", "delta", "k_complement"]))
def test_ordered_pairs_are_ordered(seed, dim, mode):
    ig = vf.InstanceGenerator(seed=seed, dim=dim, h=1 / 16, f_mode=mode)
    mu1, mu2, f = ig.ordered_pair()
    assert np.all(mu1.values <= mu2.values)
    assert mass(mu2) > mass(mu1)
    if mode == "k_complement":
        assert np.all(f.values[mu2.values > 0] == 0.0)


@given(seed=st.integers(0, 2**32 - 1))
def test_near_pairs_share_mass(seed):
    mu1, mu2, _ = vf.InstanceGenerator(seed=seed, dim=1, h=1 / 32).near_pair()
    assert mass(mu1) == pytest.approx(mass(mu2), rel=1e-12)


def test_slack_constant_scales_with_diameter():
    g = GridSpec.uniform(-2.0, 2.0, 1 / 8, 1)
    x = g.axes()[0]
    f = presets.constant(g, 2.0)
    assert vf.slack_constant(f, np.abs(x) <= 1) == pytest.approx(4 * 2.0 * 2.0)
    assert vf.slack_constant(f, x > 9) == 0.0


def test_monotonicity_trial_rejects_unordered_pair():
    _, mu1, mu2, f = presets.pair_1d(ordered=False)
    with pytest.raises(ValueError):
        vf.monotonicity_trial(mu1, mu2, f)


def test_monotonicity_trial_on_ordered_pair():
    _, mu1, mu2, f = presets.pair_1d(ordered=True)
    t = vf.monotonicity_trial(mu1, mu2, f)
    assert t.passed and t.lhs > 0


def test_contraction_trial_on_shifted_pair():
    _, mu1, mu2, f = presets.pair_1d(ordered=False)
    t = vf.contraction_trial(mu1, mu2, f)
    assert t.passed
    assert "bv1" in t.bound


def test_small_suites_pass():
    m = vf.check_monotonicity(1, trials=3, dim=1, h=1 / 32, min_nonvacuous=1)
    c = vf.check_contraction_bv(1, trials=3, dim=1, h=1 / 32, min_nonvacuous=1)
    assert m.passed and c.passed
    assert m.nonvacuous == 3


def test_vacuous_suite_fails():
    rep = vf.TheoremReport("x", 0, [vf.Trial({}, {}, {}, True, 0.0)], min_nonvacuous=1)
    assert not rep.passed
    assert not vf.TheoremReport("x", 0).passed


def test_report_json_is_canonical():
    rep = vf.check_contraction_bv(2, trials=1, dim=1, h=1 / 32, min_nonvacuous=1)
    d = json.loads(rep.to_json())
    assert d["theorem"] == "contraction_bv"
    assert list(d) == sorted(d)
    assert d["trials"][0]["pass"] is True
    assert d["slack"] == vf.SLACK_FORMULA


def test_universality_on_random_one_dimensional_instances():
    rep = vf.check_universality_and_saturation(4, trials=2, dim=1, benchmarks=False)
    assert rep.passed, rep.to_json()


def test_gaussian_law_trial_passes():
    assert vf.gaussian_law_trial(3, N=20_000).passed


def test_unknown_suite_rejected():
    with pytest.raises(ValueError):
        vf.run_suite("nonsense", 0)


def test_trial_seeds_differ():
    seeds = {vf._trial_seed(0, k) for k in range(50)}
    assert len(seeds) == 50
    assert vf._trial_seed(0, 1) == vf._trial_seed(0, 1)


def test_failed_trial_records_error():
    t = vf._failed({"k": 1}, ValueError("boom"))
    assert not t.passed and "boom" in t.error
    assert t.as_dict()["error"].startswith("ValueError")
