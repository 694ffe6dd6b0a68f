import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lunarevents.dynamics import (
    MASS,
    ControlInput,
    LanderState,
    MassDomainError,
    SingularityError,
    VehicleParams,
    dcm_from_euler,
    euler_from_dcm,
    euler_rates,
    propagate,
    state_derivative,
)

P = VehicleParams()
angles = st.floats(-np.pi, np.pi, allow_nan=False)


def rest(z=-100.0, m=1000.0):
    return LanderState([0.0, 0.0, z], np.zeros(3), np.zeros(3), np.zeros(3), m)


def test_dcm_identity():
    assert np.array_equal(dcm_from_euler([0.0, 0.0, 0.0]), np.eye(3))


def test_dcm_roll_quarter_turn():
    R = dcm_from_euler([np.pi / 2, 0.0, 0.0])
    np.testing.assert_allclose(R, [[1, 0, 0], [0, 0, -1], [0, 1, 0]], atol=1e-15)


@given(angles, angles, angles)
def test_dcm_is_rotation(phi, theta, psi):
    R = dcm_from_euler([phi, theta, psi])
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_dcm_third_row_is_optical_axis_down_component():
    # optical axis is body z; its inertial z component is cos(phi) cos(theta)
    phi, theta = 0.3, -0.4
    R = dcm_from_euler([phi, theta, 1.1])
    np.testing.assert_allclose(R[2], [-np.sin(theta), np.sin(phi) * np.cos(theta), np.cos(phi) * np.cos(theta)])


def test_euler_roundtrip():
    e = np.array([0.2, -0.7, 2.5])
    np.testing.assert_allclose(euler_from_dcm(dcm_from_euler(e)), e, atol=1e-12)


def test_euler_rates_examples():
    np.testing.assert_allclose(euler_rates([0, 0, 0], [0.1, 0.2, 0.3]), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(euler_rates([np.pi / 2, 0, 0], [0, 1, 0]), [0, 0, 1], atol=1e-15)
    with pytest.raises(SingularityError):
        euler_rates([0, np.pi / 2, 0], [0, 0, 0])


def test_hover_and_free_fall_derivatives():
    x = rest()
    uh = ControlInput(u_T=P.hover_throttle())
    d = state_derivative(x, uh, P)
    np.testing.assert_allclose(d[3:6], 0.0, atol=1e-15)
    d = state_derivative(x, ControlInput(), P)
    np.testing.assert_allclose(d[3:6], [0, 0, P.g])
    assert d[MASS] == 0.0
    d = state_derivative(x, ControlInput(u_T=1.0), P)
    assert d[MASS] == pytest.approx(-P.F_a_max / (P.Isp * P.g0), rel=1e-15)


def test_domain_errors():
    with pytest.raises(MassDomainError):
        state_derivative(np.r_[np.zeros(12), 0.0], np.zeros(4), P)
    with pytest.raises(SingularityError):
        state_derivative(np.r_[np.zeros(7), np.pi / 2, np.zeros(4), 1.0], np.zeros(4), P)
    with pytest.raises(ValueError):
        ControlInput(u_T=1.5)


def test_hover_propagation():
    # constant throttle: mass flow is constant, so the loss is exact
    u = ControlInput(u_T=P.hover_throttle())
    h = propagate(rest(), u, 10.0, 0.01, P)
    dm = P.F_a_max * u.u_T * 10.0 / (P.Isp * P.g0)
    assert h.final[MASS] == pytest.approx(1000.0 - dm, rel=1e-12)
    # a throttle that tracks the shrinking mass, m(t) = m0 exp(-g t / (Isp g0)), keeps the vehicle still
    k = P.g / (P.Isp * P.g0)
    h2 = propagate(rest(), lambda t: [P.hover_throttle(1000.0 * np.exp(-k * t)), 0, 0, 0], 10.0, 0.01, P)
    np.testing.assert_allclose(h2.final[:3], [0, 0, -100.0], atol=1e-9)
    assert h2.final[MASS] == pytest.approx(1000.0 * np.exp(-k * 10.0), rel=1e-10)


def test_free_fall():
    h = propagate(rest(0.0), ControlInput(), 1.0, 0.1, P)
    assert h.final[2] == pytest.approx(P.g / 2, abs=1e-12)
    assert np.all(h.x[:, MASS] == 1000.0)


def test_rk4_order():
    x0 = LanderState([10.0, -5.0, -800.0], [3.0, 1.0, 5.0], [0.05, 0.3, 0.1], [0.01, -0.02, 0.03], 1000.0)

    def u(t):
        return [0.6 + 0.2 * np.sin(t), 0.1 * np.cos(t), -0.05, 0.02 * t]

    ref = propagate(x0, u, 10.0, 0.0125, P).final
    e1 = np.linalg.norm(propagate(x0, u, 10.0, 0.2, P).final - ref)
    e2 = np.linalg.norm(propagate(x0, u, 10.0, 0.1, P).final - ref)
    assert 13.0 <= e1 / e2 <= 19.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_derivative_matches_short_propagation(seed):
    rng = np.random.default_rng(seed)
    x = np.r_[rng.normal(0, 100, 3), rng.normal(0, 5, 3), rng.uniform(-0.5, 0.5, 3), rng.normal(0, 0.05, 3), 900.0]
    u = np.r_[rng.uniform(0, 1), rng.uniform(-1, 1, 3)]
    dt = 1e-5

    def one_sided(h):
        return (propagate(x, u, h, h, P).final - x) / h

    # Richardson extrapolation removes the O(dt) truncation term of the one-sided difference
    fd = 2.0 * one_sided(dt / 2) - one_sided(dt)
    np.testing.assert_allclose(fd, state_derivative(x, u, P), rtol=1e-4, atol=1e-6)


def test_mass_monotone_with_nonnegative_throttles():
    x0 = rest()
    h = propagate(x0, [0.5, 0.1, 0.2, 0.0], 5.0, 0.05, P)
    assert np.all(np.diff(h.x[:, MASS]) < 0)


def test_magnitude_mass_flow_uses_absolute_throttles():
    pm = VehicleParams(mass_flow="magnitude")
    a = state_derivative(rest(), [0.0, -0.5, 0.0, 0.0], pm)[MASS]
    b = state_derivative(rest(), [0.0, 0.5, 0.0, 0.0], pm)[MASS]
    assert a == b < 0
    # the verbatim law adds mass for negative attitude throttles
    assert state_derivative(rest(), [0.0, -0.5, 0.0, 0.0], P)[MASS] > 0
