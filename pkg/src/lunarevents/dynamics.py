"""Rigid-body lander dynamics and attitude kinematics.

Axis convention: the inertial frame sits at the landing site with ``k``
pointing along local gravity (down), so the altitude above the site is
``H = -z``. The body frame coincides with the camera frame; the main engine
pushes along ``-z_body``.

State vectors are laid out as::

    [x, y, z, vx, vy, vz, phi, theta, psi, p, q, r, m]

and control vectors as ``[u_T, u_phi, u_theta, u_psi]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

NX = 13
NU = 4

STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r", "m")
CONTROL_NAMES = ("u_T", "u_phi", "u_theta", "u_psi")

POS = slice(0, 3)
VEL = slice(3, 6)
EUL = slice(6, 9)
OMG = slice(9, 12)
MASS = 12

SINGULARITY_TOL = 1e-6


class SingularityError(ArithmeticError):
    """Pitch too close to +/-90 deg for the roll-pitch-yaw kinematics."""

    def __init__(self, theta, t=None):
        self.theta = theta
        self.t = t
        where = "" if t is None else f" at t={t:.6g} s"
        super().__init__(f"Euler-rate singularity: |cos(theta)| too small (theta={theta!r}){where}")


class MassDomainError(ValueError):
    """Non-positive lander mass."""

    def __init__(self, m, t=None):
        self.m = m
        self.t = t
        where = "" if t is None else f" at t={t:.6g} s"
        super().__init__(f"lander mass must be positive, got m={m!r}{where}")


@dataclass(frozen=True, eq=False)
class VehicleParams:
    """Lander constants. Defaults are configuration values, not measured data."""

    F_a_max: float = 5000.0
    F_b_max: float = 50.0
    L: float = 1.5
    I: np.ndarray = field(default_factory=lambda: np.diag([1000.0, 1000.0, 800.0]))
    Isp: float = 300.0
    g: float = 1.62
    g0: float = 9.81
    m0: float = 1000.0
    # "signed" mass flow sums the attitude throttles as given; "magnitude" uses |u| instead.
    mass_flow: str = "signed"

    def __post_init__(self):
        inertia = np.asarray(self.I, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        object.__setattr__(self, "I", inertia)
        for name in ("F_a_max", "F_b_max", "L", "Isp", "g", "g0", "m0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"VehicleParams.{name} must be positive")
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T):
            raise ValueError("inertia matrix must be symmetric 3x3")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ValueError("inertia matrix must be positive definite")
        if self.mass_flow not in ("signed", "magnitude"):
            raise ValueError("mass_flow must be 'signed' or 'magnitude'")

    @cached_property
    def I_inv(self) -> np.ndarray:
        return np.linalg.inv(self.I)

    def hover_throttle(self, m: float | None = None) -> float:
        m = self.m0 if m is None else m
        return m * self.g / self.F_a_max

    def to_dict(self) -> dict:
        return {
            "F_a_max": self.F_a_max,
            "F_b_max": self.F_b_max,
            "L": self.L,
            "I": self.I.tolist(),
            "Isp": self.Isp,
            "g": self.g,
            "g0": self.g0,
            "m0": self.m0,
            "mass_flow": self.mass_flow,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class LanderState:
    r: np.ndarray
    v: np.ndarray
    euler: np.ndarray
    omega: np.ndarray
    m: float

    def __post_init__(self):
        for name in ("r", "v", "euler", "omega"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        object.__setattr__(self, "m", float(self.m))
        if not self.m > 0:
            raise MassDomainError(self.m)

    @property
    def altitude(self) -> float:
        return -self.r[2]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, self.euler, self.omega, [self.m]])

    @classmethod
    def from_vector(cls, x) -> "LanderState":
        x = np.asarray(x, dtype=float)
        return cls(x[POS], x[VEL], x[EUL], x[OMG], x[MASS])

    def replace(self, **kw) -> "LanderState":
        return replace(self, **kw)


@dataclass(frozen=True)
class ControlInput:
    u_T: float = 0.0
    u_phi: float = 0.0
    u_theta: float = 0.0
    u_psi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.u_T <= 1.0:
            raise ValueError(f"u_T={self.u_T} outside [0, 1]")
        for name in ("u_phi", "u_theta", "u_psi"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name}={getattr(self, name)} outside [-1, 1]")

    def as_vector(self) -> np.ndarray:
        return np.array([self.u_T, self.u_phi, self.u_theta, self.u_psi])

    @classmethod
    def from_vector(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        return cls(*(float(c) for c in u[:NU]))


def dcm_from_euler(euler) -> np.ndarray:
    """Body-to-inertial rotation for roll-pitch-yaw angles ``(phi, theta, psi)``.

    Accepts a trailing axis of length 3 and broadcasts over leading axes.
    """
    euler = np.asarray(euler)
    phi, theta, psi = euler[..., 0], euler[..., 1], euler[..., 2]
    sf, cf = np.sin(phi), np.cos(phi)
    st, ct = np.sin(theta), np.cos(theta)
    ss, cs = np.sin(psi), np.cos(psi)
    R = np.empty(euler.shape[:-1] + (3, 3), dtype=np.result_type(euler, float))
    R[..., 0, 0] = ct * cs
    R[..., 0, 1] = -cf * ss + sf * st * cs
    R[..., 0, 2] = sf * ss + cf * st * cs
    R[..., 1, 0] = ct * ss
    R[..., 1, 1] = cf * cs + sf * st * ss
    R[..., 1, 2] = -sf * cs + cf * st * ss
    R[..., 2, 0] = -st
    R[..., 2, 1] = sf * ct
    R[..., 2, 2] = cf * ct
    return R


def euler_from_dcm(R) -> np.ndarray:
    """Inverse of :func:`dcm_from_euler` on the branch |theta| < pi/2."""
    R = np.asarray(R)
    phi = np.arctan2(R[..., 2, 1], R[..., 2, 2])
    theta = -np.arcsin(np.clip(R[..., 2, 0], -1.0, 1.0))
    psi = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    return np.stack([phi, theta, psi], axis=-1)


def _euler_rates(euler, omega):
    phi, theta = euler[..., 0], euler[..., 1]
    p, q, r = omega[..., 0], omega[..., 1], omega[..., 2]
    sf, cf = np.sin(phi), np.cos(phi)
    ct = np.cos(theta)
    tt = np.tan(theta)
    return np.stack(
        [
            p + sf * tt * q + cf * tt * r,
            cf * q - sf * r,
            (sf * q + cf * r) / ct,
        ],
        axis=-1,
    )


def euler_rates(euler, omega, tol: float = SINGULARITY_TOL) -> np.ndarray:
    """Time derivative of the Euler angles given body rates ``(p, q, r)``."""
    euler = np.asarray(euler, dtype=float)
    omega = np.asarray(omega, dtype=float)
    ct = np.abs(np.cos(euler[..., 1]))
    if np.any(ct <= tol):
        raise SingularityError(euler[..., 1])
    return _euler_rates(euler, omega)


def rhs(X, U, params: VehicleParams) -> np.ndarray:
    """Vectorised, unchecked dynamics ``f(x, u)`` over leading axes.

    Works for complex inputs, which the trajectory optimiser uses for
    complex-step Jacobians.
    """
    X = np.asarray(X)
    U = np.asarray(U)
    dtype = np.result_type(X, U, float)
    out = np.empty(np.broadcast_shapes(X.shape[:-1], U.shape[:-1]) + (NX,), dtype=dtype)
    m = X[..., MASS]
    euler = X[..., EUL]
    omega = X[..., OMG]
    uT = U[..., 0]
    ub = U[..., 1:4]

    out[..., POS] = X[..., VEL]
    R = dcm_from_euler(euler)
    thrust = params.F_a_max * uT / m
    out[..., 3] = -R[..., 0, 2] * thrust
    out[..., 4] = -R[..., 1, 2] * thrust
    out[..., 5] = params.g - R[..., 2, 2] * thrust
    out[..., EUL] = _euler_rates(euler, omega)

    I = params.I
    Iw = omega @ I.T
    torque = np.cross(omega, Iw) + 2.0 * params.L * params.F_b_max * ub
    out[..., OMG] = torque @ params.I_inv.T

    if params.mass_flow == "magnitude":
        # sqrt(u*u) rather than abs keeps complex-step derivatives valid
        secondary = np.sqrt(ub * ub).sum(axis=-1)
    else:
        secondary = ub.sum(axis=-1)
    out[..., MASS] = -(params.F_a_max * uT + 2.0 * params.F_b_max * secondary) / (params.Isp * params.g0)
    return out


def state_derivative(x, u, params: VehicleParams, tol: float = SINGULARITY_TOL) -> np.ndarray:
    """Checked single-state dynamics; returns the 13-vector ``dx/dt``."""
    xv = x.as_vector() if isinstance(x, LanderState) else np.asarray(x, dtype=float)
    uv = u.as_vector() if isinstance(u, ControlInput) else np.asarray(u, dtype=float)
    if not xv[MASS] > 0:
        raise MassDomainError(xv[MASS])
    if abs(np.cos(xv[7])) <= tol:
        raise SingularityError(xv[7])
    return rhs(xv, uv, params)


@dataclass
class StateHistory:
    t: np.ndarray
    x: np.ndarray

    def state(self, k: int) -> LanderState:
        return LanderState.from_vector(self.x[k])

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]


def propagate(
    x0,
    control: Callable[[float], np.ndarray] | ControlInput | np.ndarray,
    t_span: float,
    dt: float,
    params: VehicleParams,
    tol: float = SINGULARITY_TOL,
) -> StateHistory:
    """Fixed-step RK4 from ``t=0`` to ``t=t_span``.

    ``control`` is either a constant or a callable ``t -> u``. If ``t_span``
    is not a multiple of ``dt`` the last step is shortened so the endpoint is
    hit exactly.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_span < 0:
        raise ValueError("t_span must be non-negative")
    if callable(control):
        ufun = lambda t: _as_control(control(t))  # noqa: E731
    else:
        u_const = _as_control(control)
        ufun = lambda t: u_const  # noqa: E731

    n = int(np.ceil(t_span / dt - 1e-9))
    times = np.minimum(np.arange(n + 1) * dt, t_span)
    if n == 0:
        times = np.array([0.0])
    x = x0.as_vector() if isinstance(x0, LanderState) else np.asarray(x0, dtype=float).copy()
    xs = np.empty((len(times), NX))
    xs[0] = x

    def f(t, xv):
        if not xv[MASS] > 0:
            raise MassDomainError(xv[MASS], t)
        if abs(np.cos(xv[7])) <= tol:
            raise SingularityError(xv[7], t)
        return rhs(xv, ufun(t), params)

    for k in range(len(times) - 1):
        t = times[k]
        h = times[k + 1] - t
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    return StateHistory(times, xs)


def _as_control(u) -> np.ndarray:
    if isinstance(u, ControlInput):
        return u.as_vector()
    return np.asarray(u, dtype=float)
