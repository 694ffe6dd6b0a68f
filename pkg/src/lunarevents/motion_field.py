"""Ego-motion field of a camera over a planar, spherical or ray-cast surface.

All image quantities are in normalised coordinates (f = 1); multiply by the
focal length for pixels. The field of a point at inverse depth ``h`` seen at
``(x, y)`` by a camera moving with velocity ``v`` and body rates
``(p, q, r)`` (both in the camera frame) is::

    u = h (-v_x + x v_z) + p x y - q (1 + x^2) + r y
    v = h (-v_y + y v_z) + p (1 + y^2) - q x y - r x

Signs are those of a static scene observed by the moving camera; the
finite-difference oracle in this module checks them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .render import CameraIntrinsics, Renderer
from .terrain import MOON_RADIUS, Terrain

SURFACE_MODELS = ("planar", "spherical", "dem")


class ViewError(ValueError):
    """A pixel does not view the assumed surface."""


def view_factor(x, y, down_cam) -> np.ndarray:
    """``A = (x, y, 1) . down`` with ``down`` the local vertical in camera axes.

    With ``down = R^T e_z`` this is ``-x sin(theta) + y sin(phi) cos(theta) + cos(phi) cos(theta)``.
    """
    d = np.asarray(down_cam, dtype=float)
    return np.asarray(x) * d[0] + np.asarray(y) * d[1] + d[2]


def _down_from_euler(phi, theta) -> np.ndarray:
    return np.array([-np.sin(theta), np.sin(phi) * np.cos(theta), np.cos(phi) * np.cos(theta)])


def inverse_depth_planar(x, y, phi: float, theta: float, H: float, strict: bool = True) -> np.ndarray:
    """Inverse depth ``A / H`` of the plane at altitude ``H`` below the camera.

    Pixels with ``A <= 0`` do not see the plane; they raise in strict mode
    and are NaN otherwise.
    """
    if not H > 0:
        raise ValueError("altitude must be positive")
    A = view_factor(x, y, _down_from_euler(phi, theta))
    return _finish(A > 0, A / H, strict, "pixel does not view the plane")


def depth_spherical(x, y, down_cam, H: float, R: float, strict: bool = True) -> np.ndarray:
    """Depth ``Z`` of the near intersection with a sphere of radius ``R``.

    ``Z`` is the smaller root of
    ``a2 Z^2 - 2 (R + H) A Z + (H^2 + 2 R H) = 0`` with ``a2 = 1 + x^2 + y^2``,
    evaluated in a form free of cancellation that returns ``Z = H`` exactly
    at nadir (``A = a2 = 1``).
    """
    if not (H > 0 and R > 0):
        raise ValueError("altitude and radius must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A = view_factor(x, y, down_cam)
    r2 = x * x + y * y
    # e = disc - R^2 with disc = (R+H)^2 A^2 - a2 (H^2 + 2RH)
    e = (R + H) ** 2 * ((A - 1.0) * (A + 1.0) - r2) + r2 * R * R
    ok = (R * R + e >= 0) & (A > 0)
    e = np.where(ok, e, 0.0)
    sq_minus_R = e / (np.sqrt(R * R + e) + R)
    s = H + 2.0 * R
    # (R+H) A + sqrt(disc) = s + (R+H)(A-1) + (sqrt(disc) - R)
    D = s + (R + H) * (A - 1.0) + sq_minus_R
    # Z = (H^2 + 2RH) / ((R+H) A + sqrt(disc)) = H s / D
    Z = H * (s / D)
    return _finish(ok, Z, strict, "pixel does not view the sphere")


def inverse_depth_spherical(x, y, down_cam, H: float, R: float, strict: bool = True) -> np.ndarray:
    """Inverse depth ``1 / Z`` of the near sphere intersection; see :func:`depth_spherical`."""
    return 1.0 / depth_spherical(x, y, down_cam, H, R, strict)


def _finish(ok, h, strict, message):
    ok = np.asarray(ok)
    if strict and not np.all(ok):
        raise ViewError(message)
    return np.where(ok, h, np.nan)


def motion_field(x, y, h, v_cam, omega) -> tuple[np.ndarray, np.ndarray]:
    """Image-plane velocity (normalised units per second) for inverse depth ``h``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vx, vy, vz = np.asarray(v_cam, dtype=float)
    p, q, r = np.asarray(omega, dtype=float)
    u = h * (-vx + x * vz) + p * x * y - q * (1.0 + x * x) + r * y
    v = h * (-vy + y * vz) + p * (1.0 + y * y) - q * x * y - r * x
    return u, v


@dataclass(eq=False)
class MotionFieldFrame:
    """Per-pixel flow in normalised units per second; invalid pixels are NaN."""

    u: np.ndarray
    v: np.ndarray
    inverse_depth: np.ndarray
    surface_model: str
    f: float
    timestamp: float = 0.0
    radius: float | None = None

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.u) & np.isfinite(self.v)

    def pixels_per_second(self) -> tuple[np.ndarray, np.ndarray]:
        return self.u * self.f, self.v * self.f


def pose_geometry(position, R, surface_model: str, radius: float = MOON_RADIUS,
                  center_z: float | None = None) -> tuple[np.ndarray, float]:
    """Local vertical in camera axes and altitude for the chosen surface model.

    The sphere is centred at ``(0, 0, center_z)`` (default ``radius``, i.e.
    tangent to z = 0 at the origin).
    """
    position = np.asarray(position, dtype=float)
    R = np.asarray(R, dtype=float)
    if surface_model == "planar":
        return R.T @ np.array([0.0, 0.0, 1.0]), float(-position[2])
    q = position - np.array([0.0, 0.0, radius if center_z is None else center_z])
    rq = np.linalg.norm(q)
    return R.T @ (-q / rq), float(rq - radius)


def motion_field_frame(
    position,
    R,
    v_cam,
    omega,
    intrinsics: CameraIntrinsics,
    surface_model: str = "spherical",
    radius: float = MOON_RADIUS,
    renderer: Renderer | None = None,
    timestamp: float = 0.0,
    center_z: float | None = None,
) -> MotionFieldFrame:
    """Motion field for one pose.

    ``surface_model`` is ``planar`` (plane z = 0), ``spherical`` (sphere of
    ``radius`` about ``(0, 0, center_z)``, by default tangent to z = 0) or
    ``dem`` (depth ray-cast through ``renderer``'s terrain).
    """
    if surface_model not in SURFACE_MODELS:
        raise ValueError(f"unknown surface model {surface_model!r}")
    x, y = intrinsics.normalized_grid()
    if surface_model == "dem":
        if renderer is None:
            raise ValueError("the dem surface model needs a renderer")
        Z = renderer.depth(position, R)
        h = np.where(Z > 0, 1.0 / Z, np.nan)
        rad = renderer.terrain.radius
    else:
        down, H = pose_geometry(position, R, surface_model, radius, center_z)
        if not H > 0:
            raise ValueError("camera is not above the surface")
        if surface_model == "planar":
            A = view_factor(x, y, down)
            h = np.where(A > 0, A / H, np.nan)
            rad = None
        else:
            h = inverse_depth_spherical(x, y, down, H, radius, strict=False)
            rad = radius
    u, v = motion_field(x, y, h, v_cam, omega)
    return MotionFieldFrame(u=u, v=v, inverse_depth=h, surface_model=surface_model, f=intrinsics.f, timestamp=timestamp, radius=rad)


class PlaneSurface:
    """The plane z = 0 (seen from z < 0)."""

    def intersect(self, origins, directions) -> np.ndarray:
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(np.asarray(origins, dtype=float), d.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[:, 2] / d[:, 2]
        return np.where((d[:, 2] > 0) & (t > 0), t, np.nan)


class SphereSurface:
    """Sphere of ``radius`` about ``(0, 0, center_z)`` (default ``radius``), intersected in closed form."""

    def __init__(self, radius: float = MOON_RADIUS, center_z: float | None = None):
        self.radius = float(radius)
        self.center_z = self.radius if center_z is None else float(center_z)

    def intersect(self, origins, directions) -> np.ndarray:
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        q = np.broadcast_to(np.asarray(origins, dtype=float), d.shape) - np.array([0.0, 0.0, self.center_z])
        b = np.sum(q * d, axis=1)
        rq = np.linalg.norm(q, axis=1)
        c = (rq - self.radius) * (rq + self.radius)
        disc = b * b - c
        ok = (disc >= 0) & (b < 0)
        s = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = c / (-b + s)
        return np.where(ok & (t > 0), t, np.nan)


def fd_flow_oracle(
    position,
    R,
    velocity,
    omega,
    intrinsics: CameraIntrinsics,
    surface,
    delta: float = 1e-4,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flow by re-projection: ray-cast each pixel, move the camera by +-delta, re-project.

    ``velocity`` is inertial, ``omega`` the body rates; the attitude moves as
    ``R(t) = R expm(t [omega]x)``. ``surface`` is anything with
    ``intersect(origins, directions)`` (a :class:`Terrain`, :class:`PlaneSurface`,
    :class:`SphereSurface`). Returns ``(u, v, valid)``; pixels that miss the
    surface or leave the field of view are invalid.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    position = np.asarray(position, dtype=float)
    R = np.asarray(R, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    omega = np.asarray(omega, dtype=float)
    x, y = intrinsics.normalized_grid()
    rays_cam = np.stack([x.ravel(), y.ravel(), np.ones(x.size)], axis=1)
    rays = rays_cam @ R.T
    if isinstance(surface, Terrain):
        # same level of detail as the renderer
        t = surface.intersect(position, rays, pixel_angle=1.0 / intrinsics.f)
    else:
        t = surface.intersect(position, rays)
    pts = position + (t / np.linalg.norm(rays, axis=1))[:, None] * rays
    proj = []
    for sgn in (1.0, -1.0):
        p = position + sgn * delta * velocity
        Rs = R @ Rotation.from_rotvec(sgn * delta * omega).as_matrix()
        pc = (pts - p) @ Rs
        proj.append((pc[:, 0] / pc[:, 2], pc[:, 1] / pc[:, 2], pc[:, 2]))
    (x1, y1, z1), (x0, y0, z0) = proj
    u = (x1 - x0) / (2 * delta)
    v = (y1 - y0) / (2 * delta)
    xmax = max(intrinsics.cx, intrinsics.W - intrinsics.cx) / intrinsics.f
    ymax = max(intrinsics.cy, intrinsics.H - intrinsics.cy) / intrinsics.f
    in_view = (z0 > 0) & (z1 > 0) & (np.abs(x0) <= xmax) & (np.abs(x1) <= xmax) & (np.abs(y0) <= ymax) & (np.abs(y1) <= ymax)
    valid = np.isfinite(t) & in_view
    shape = x.shape
    return np.where(valid, u, np.nan).reshape(shape), np.where(valid, v, np.nan).reshape(shape), valid.reshape(shape)


# Middlebury colour wheel (Baker et al.)
_SEGMENTS = ((15, (255, 0, 0), (255, 255, 0)), (6, (255, 255, 0), (0, 255, 0)), (4, (0, 255, 0), (0, 255, 255)),
             (11, (0, 255, 255), (0, 0, 255)), (13, (0, 0, 255), (255, 0, 255)), (6, (255, 0, 255), (255, 0, 0)))


def color_wheel() -> np.ndarray:
    """(55, 3) wheel colours in [0, 255], red at angle 0."""
    rows = []
    for n, a, b in _SEGMENTS:
        f = np.arange(n)[:, None] / n
        rows.append(np.asarray(a) * (1 - f) + np.asarray(b) * f)
    return np.vstack(rows)


def _wheel_color(angle, magnitude) -> np.ndarray:
    wheel = color_wheel() / 255.0
    ncols = len(wheel)
    fk = (np.mod(angle, 2 * np.pi) / (2 * np.pi)) * ncols
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    frac = (fk - np.floor(fk))[..., None]
    col = (1 - frac) * wheel[k0] + frac * wheel[k1]
    rad = np.clip(magnitude, 0.0, 1.0)[..., None]
    return 1 - rad * (1 - col)


def flow_color_encode(u, v, max_magnitude: float | None = None, valid=None) -> np.ndarray:
    """RGB uint8 image: hue from direction, saturation from ``|flow| / max_magnitude``.

    Zero flow is white, magnitudes above ``max_magnitude`` saturate, invalid
    pixels are black. ``max_magnitude=None`` uses the largest valid magnitude.
    The hue angle is ``atan2(v, u)`` measured from red.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    ok = np.isfinite(u) & np.isfinite(v)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    uu = np.where(ok, u, 0.0)
    vv = np.where(ok, v, 0.0)
    mag = np.hypot(uu, vv)
    if max_magnitude is None:
        max_magnitude = float(mag[ok].max()) if ok.any() else 0.0
    scale = mag / max_magnitude if max_magnitude > 0 else np.zeros_like(mag)
    rgb = _wheel_color(np.arctan2(vv, uu), scale)
    rgb = np.floor(255.0 * rgb + 0.5).astype(np.uint8)
    rgb[~ok] = 0
    return rgb


def flow_color_angle(rgb) -> np.ndarray:
    """Recover the flow direction (rad, in [0, 2 pi)) from fully saturated wheel colours."""
    rgb = np.asarray(rgb, dtype=float).reshape(-1, 3) / 255.0
    grid = np.linspace(0, 2 * np.pi, 7200, endpoint=False)
    lut = _wheel_color(grid, np.ones_like(grid))
    d = ((rgb[:, None, :] - lut[None, :, :]) ** 2).sum(axis=2)
    return grid[np.argmin(d, axis=1)]


def effective_radius(terrain: Terrain) -> float:
    """Base radius plus the mean DEM height, for the spherical model over a DEM.

    The sphere keeps the body centre ``(0, 0, terrain.radius)``.
    """
    return terrain.radius + terrain.expected_mean_height()
