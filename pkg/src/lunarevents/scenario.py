"""Boundary-condition sampling per landing scenario and camera-rate upsampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .config import ConfigError, ScenarioSpec
from .dynamics import EUL, MASS, OMG, POS, VEL, LanderState, VehicleParams, dcm_from_euler
from .trajopt import OcpSpec, OptimalTrajectory


def frame_count(tf: float, fps: float) -> int:
    """Frames covering ``[0, tf]`` at ``fps`` including both endpoints."""
    # rounding guard so that e.g. 2.0 * 100 does not floor to 199
    return int(np.floor(tf * fps + 1e-9)) + 1


def _uniform(rng: np.random.Generator, interval) -> float:
    a, b = interval
    lo, hi = min(a, b), max(a, b)
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def _start_geometry(spec: ScenarioSpec, h0: float, hf: float, pitch: float, slope_deg: float | None, speed: float, g: float):
    """Start position and velocity for a pinpoint landing at the site origin.

    The approach heading is chosen so the tilted main engine initially opposes
    the horizontal motion (a braking attitude). With ``slope_deg=None`` the
    downrange distance is ``tan|pitch| * (drop + g tf^2 / 2)``, the geometry
    for which a constant deceleration to rest needs thrust tilted by the
    initial pitch.
    """
    R = dcm_from_euler(np.array([0.0, pitch, 0.0]))
    thrust_h = -R[:2, 2]
    if np.linalg.norm(thrust_h) > 1e-9:
        heading = -thrust_h / np.linalg.norm(thrust_h)
    else:
        heading = np.array([1.0, 0.0])
    drop = h0 - hf
    if slope_deg is None:
        downrange = abs(np.tan(pitch)) * (drop + 0.5 * g * spec.tf**2)
    else:
        slope = np.deg2rad(slope_deg)
        downrange = drop / np.tan(slope) if slope < np.pi / 2 - 1e-9 else 0.0
    r0 = np.array([-heading[0] * downrange, -heading[1] * downrange, -h0])
    rf = np.array([0.0, 0.0, -hf])
    line = rf - r0
    v0 = speed * line / np.linalg.norm(line)
    return r0, v0, rf


def sample_boundary_conditions(
    spec: ScenarioSpec,
    rng: np.random.Generator,
    params: VehicleParams | None = None,
    N: int = 30,
    epsilon: float = 0.5,
    lambda_tilt: float = np.deg2rad(80.0),
    region_fraction: float = 0.1,
) -> OcpSpec:
    """Draw one OCP instance for ``spec``.

    Start altitude comes from the top ``region_fraction`` of the descent range
    and the final altitude from the bottom part. The final state is at rest
    with zero attitude above the target.
    """
    params = params or VehicleParams()
    hi, lo = spec.descent_range
    if not hi > lo:
        raise ConfigError(f"empty or inverted descent range {spec.descent_range}")
    if not 0 < region_fraction <= 0.5:
        raise ConfigError("region_fraction must lie in (0, 0.5]")
    width = region_fraction * (hi - lo)
    h0 = _uniform(rng, (hi - width, hi))
    hf = _uniform(rng, (lo, lo + width))
    pitch = np.deg2rad(_uniform(rng, spec.initial_pitch_deg))
    slope = None if spec.glide_slope_deg is None else _uniform(rng, spec.glide_slope_deg)
    speed = _uniform(rng, spec.initial_speed_ratio or spec.initial_speed)
    return _make_spec(spec, h0, hf, pitch, slope, speed, params, N, epsilon, lambda_tilt)


def base_spec(
    spec: ScenarioSpec,
    params: VehicleParams | None = None,
    N: int = 30,
    epsilon: float = 0.5,
    lambda_tilt: float = np.deg2rad(80.0),
    region_fraction: float = 0.1,
) -> OcpSpec:
    """Deterministic mid-range instance used as the continuation base."""
    params = params or VehicleParams()
    hi, lo = spec.descent_range
    width = region_fraction * (hi - lo)
    mid = lambda iv: 0.5 * (iv[0] + iv[1])  # noqa: E731
    return _make_spec(
        spec,
        hi - 0.5 * width,
        lo + 0.5 * width,
        np.deg2rad(mid(spec.initial_pitch_deg)),
        None if spec.glide_slope_deg is None else mid(spec.glide_slope_deg),
        mid(spec.initial_speed_ratio or spec.initial_speed),
        params,
        N,
        epsilon,
        lambda_tilt,
    )


def _make_spec(spec, h0, hf, pitch, slope, speed, params, N, epsilon, lambda_tilt) -> OcpSpec:
    """``speed`` is in m/s, or a multiple of range/tf when the scenario uses a speed ratio."""
    r0, v0, rf = _start_geometry(spec, h0, hf, pitch, slope, 1.0, params.g)
    dist = float(np.linalg.norm(rf - r0))
    tf = spec.tf if spec.tf is not None else spec.kappa * dist / spec.v_ref
    if spec.initial_speed_ratio is not None:
        speed = speed * dist / tf
    x0 = LanderState(r0, speed * v0, [0.0, pitch, 0.0], np.zeros(3), params.m0)
    xf = LanderState(rf, np.zeros(3), np.zeros(3), np.zeros(3), params.m0)
    return OcpSpec(x0=x0, xf=xf, tf=tf, N=N, epsilon=epsilon, lambda_tilt=lambda_tilt, params=params)


@dataclass(eq=False)
class PoseSequence:
    """Camera-rate poses. ``R`` maps camera (body) axes to the site frame."""

    timestamps: np.ndarray
    position: np.ndarray
    R: np.ndarray
    velocity: np.ndarray
    v_cam: np.ndarray
    omega: np.ndarray
    euler: np.ndarray
    mass: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def altitude(self) -> np.ndarray:
        return -self.position[:, 2]

    def as_table(self) -> np.ndarray:
        """Rows of ``t, x, y, z, vx, vy, vz, phi, theta, psi, p, q, r, m``."""
        return np.column_stack([self.timestamps, self.position, self.velocity, self.euler, self.omega, self.mass])

    @classmethod
    def from_table(cls, table) -> "PoseSequence":
        table = np.atleast_2d(np.asarray(table, dtype=float))
        t = table[:, 0]
        X = table[:, 1:14]
        return cls._from_states(t, X)

    @classmethod
    def _from_states(cls, t, X) -> "PoseSequence":
        R = dcm_from_euler(X[:, EUL])
        v = X[:, VEL]
        return cls(
            timestamps=np.asarray(t, dtype=float),
            position=X[:, POS].copy(),
            R=R,
            velocity=v.copy(),
            v_cam=np.einsum("kji,kj->ki", R, v),
            omega=X[:, OMG].copy(),
            euler=X[:, EUL].copy(),
            mass=X[:, MASS].copy(),
        )


def upsample(trajectory: OptimalTrajectory, fps: float) -> PoseSequence:
    """Natural cubic splines through the node states, sampled at ``1/fps``.

    Euler angles are unwrapped before fitting and the rotation matrix is
    rebuilt from the splined angles.
    """
    if not fps > 0:
        raise ValueError("fps must be positive")
    t = np.asarray(trajectory.times, dtype=float)
    if len(t) < 4:
        raise ValueError(f"need at least 4 nodes for cubic splines, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise ValueError("node times must be strictly increasing")
    X = np.array(trajectory.states, dtype=float)
    X[:, EUL] = np.unwrap(X[:, EUL], axis=0)
    spline = CubicSpline(t, X, axis=0, bc_type="natural")
    n = frame_count(t[-1] - t[0], fps)
    ts = t[0] + np.arange(n) / fps
    ts[-1] = min(ts[-1], t[-1])
    Xs = spline(ts)
    # splines reproduce the nodes up to round-off; pin exact node hits
    on_node = np.isin(ts, t)
    if on_node.any():
        idx = np.searchsorted(t, ts[on_node])
        Xs[on_node] = X[idx]
    return PoseSequence._from_states(ts - t[0], Xs)
