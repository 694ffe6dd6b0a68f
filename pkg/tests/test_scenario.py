import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lunarevents.config import ConfigError, ScenarioSpec, load_config
from lunarevents.dynamics import dcm_from_euler
from lunarevents.scenario import base_spec, frame_count, sample_boundary_conditions, upsample
from lunarevents.trajopt import OptimalTrajectory

CFG = load_config(None)


def test_scenario_defaults():
    d, b, a = CFG.scenario("descent"), CFG.scenario("braking"), CFG.scenario("approach")
    assert b.descent_range == (6500.0, 4000.0) and b.initial_pitch_deg == (45.0, 60.0)
    assert a.descent_range == (3500.0, 1000.0) and a.initial_pitch_deg == (45.0, 75.0)
    assert d.descent_range == (2500.0, 100.0) and d.initial_pitch_deg == (-9.0, 9.0)
    assert b.sun == (1.496e11, 105.0, 7.0)
    assert a.sun == (1.496e11, 55.0, 15.0)
    assert d.sun == (1.496e11, 155.0, 2.0)
    assert d.target_site == (-198974.0, 49.0, 1730162.0)


@pytest.mark.parametrize("seed", range(20))
def test_descent_samples_within_ranges(seed):
    spec = sample_boundary_conditions(CFG.scenario("descent"), np.random.default_rng(seed), CFG.vehicle)
    pitch = np.rad2deg(spec.x0.euler[1])
    assert -9.0 <= pitch <= 9.0
    assert 100.0 <= -spec.x0.r[2] <= 2500.0
    assert 100.0 <= -spec.xf.r[2] <= 2500.0
    assert -spec.x0.r[2] > -spec.xf.r[2]
    np.testing.assert_array_equal(spec.xf.v, 0.0)
    np.testing.assert_array_equal(spec.xf.euler, 0.0)
    np.testing.assert_array_equal(spec.xf.omega, 0.0)
    assert spec.tf == pytest.approx(spec.range / 20.0)


def test_sampling_is_deterministic():
    sc = CFG.scenario("braking")
    a = sample_boundary_conditions(sc, np.random.default_rng(7), CFG.vehicle)
    b = sample_boundary_conditions(sc, np.random.default_rng(7), CFG.vehicle)
    assert a.summary() == b.summary()


def test_inverted_range_rejected():
    with pytest.raises(ConfigError):
        ScenarioSpec("descent", (100.0, 2500.0), (-9.0, 9.0), (1.496e11, 155.0, 2.0))


def test_base_spec_inside_ranges():
    for kind in ("braking", "approach", "descent"):
        sc = CFG.scenario(kind)
        spec = base_spec(sc, CFG.vehicle)
        hi, lo = sc.descent_range
        assert lo <= -spec.xf.r[2] < -spec.x0.r[2] <= hi


def test_frame_count():
    assert frame_count(5.0, 100.0) == 501
    assert frame_count(2.0, 100.0) == 201
    assert frame_count(0.999, 10.0) == 10


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 100.0), st.floats(1.0, 1000.0))
def test_frame_count_formula(tf, fps):
    n = frame_count(tf, fps)
    assert n - 1 <= tf * fps + 1e-6 and n > tf * fps - 1e-6


def _linear_trajectory(N=10, tf=5.0):
    t = np.linspace(0.0, tf, N + 1)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=13), rng.normal(size=13) * 0.05
    a[12] = 1000.0
    X = a + np.outer(t, b)
    return OptimalTrajectory(t, X, np.zeros((N + 1, 4))), a, b


def test_upsample_count_and_nodes():
    tr, _, _ = _linear_trajectory()
    poses = upsample(tr, 100.0)
    assert len(poses) == 501
    assert poses.timestamps[0] == 0.0 and poses.timestamps[-1] == 5.0
    table = poses.as_table()
    idx = np.round(tr.times * 100).astype(int)
    np.testing.assert_allclose(table[idx, 1:], tr.states, atol=1e-12, rtol=0)


def test_upsample_reproduces_linear_states():
    tr, a, b = _linear_trajectory()
    poses = upsample(tr, 37.0)
    exact = a + np.outer(poses.timestamps, b)
    np.testing.assert_allclose(poses.as_table()[:, 1:], exact, atol=1e-12)


def test_upsample_rotation_from_angles():
    tr, _, _ = _linear_trajectory()
    poses = upsample(tr, 50.0)
    np.testing.assert_allclose(poses.R, dcm_from_euler(poses.euler), atol=1e-15)
    np.testing.assert_allclose(np.einsum("kij,kj->ki", poses.R, poses.v_cam), poses.velocity, atol=1e-12)


def test_upsample_errors():
    t = np.linspace(0, 1, 3)
    with pytest.raises(ValueError):
        upsample(OptimalTrajectory(t, np.ones((3, 13)), np.zeros((3, 4))), 100.0)
    tr, _, _ = _linear_trajectory()
    with pytest.raises(ValueError):
        upsample(tr, 0.0)
