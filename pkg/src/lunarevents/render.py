"""Pinhole camera, photometry and frame rendering over a :class:`Terrain`.

The camera frame is the body frame: +z along the optical axis (down at zero
attitude), +x along image columns and +y along image rows. Pixel ``(i, j)``
(column, row) maps to normalised coordinates ``x_s = (i - c_x) / f`` and
``y_s = (j - c_y) / f``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from .terrain import RADIUS, Terrain, _normal, _trace

LAMBERT, HAPKE = 0, 1
PHOTOMETRY_MODELS = {"lambert": LAMBERT, "hapke": HAPKE}


@dataclass(frozen=True)
class CameraIntrinsics:
    f: float
    W: int
    H: int
    cx: float
    cy: float
    fov: float
    a: float = 1.0
    s: float = 0.0

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f, self.s, self.cx], [0.0, self.a * self.f, self.cy], [0.0, 0.0, 1.0]])

    def normalized_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Normalised coordinates ``(x_s, y_s)`` of every pixel, shape (H, W)."""
        i = np.arange(self.W, dtype=float)
        j = np.arange(self.H, dtype=float)
        return np.meshgrid((i - self.cx) / self.f, (j - self.cy) / self.f)

    def project(self, points_cam) -> tuple[np.ndarray, np.ndarray]:
        """Normalised image coordinates of camera-frame points."""
        p = np.asarray(points_cam, dtype=float)
        return p[..., 0] / p[..., 2], p[..., 1] / p[..., 2]

    def to_dict(self) -> dict:
        return asdict(self)


def camera_intrinsics(fov: float, W: int, H: int) -> CameraIntrinsics:
    """Ideal pinhole: ``f = W / (2 tan(fov/2))``, unit aspect, zero skew, centred principal point."""
    if not 0 < fov < np.pi:
        raise ValueError(f"field of view must lie in (0, pi), got {fov}")
    if W < 1 or H < 1:
        raise ValueError("image size must be positive")
    f = W / (2.0 * np.tan(fov / 2.0))
    return CameraIntrinsics(f=float(f), W=int(W), H=int(H), cx=W / 2.0, cy=H / 2.0, fov=float(fov))


@dataclass(frozen=True)
class Photometry:
    """Lambert (``albedo``) or Hapke 1981 (``w``, phase asymmetry ``b``, opposition surge ``B0``, ``h``)."""

    model: str = "hapke"
    albedo: float = 0.12
    w: float = 0.3
    b: float = 0.0
    B0: float = 0.0
    h: float = 0.06

    def __post_init__(self):
        if self.model not in PHOTOMETRY_MODELS:
            raise ValueError(f"unknown photometry {self.model!r}")
        if not (0 <= self.w <= 1 and 0 <= self.albedo <= 1):
            raise ValueError("albedo and w must lie in [0, 1]")
        if not -1 < self.b < 1:
            raise ValueError("phase asymmetry b must lie in (-1, 1)")

    @classmethod
    def from_config(cls, cfg: dict) -> "Photometry":
        return cls(
            model=cfg.get("photometry", "hapke"),
            albedo=float(cfg.get("albedo", 0.12)),
            w=float(cfg.get("hapke_w", 0.3)),
            b=float(cfg.get("hapke_b", 0.0)),
            B0=float(cfg.get("hapke_B0", 0.0)),
            h=float(cfg.get("hapke_h", 0.06)),
        )

    @property
    def packed(self) -> np.ndarray:
        return np.array([PHOTOMETRY_MODELS[self.model], self.albedo, self.w, self.b, self.B0, self.h])

    def radiance_factor(self, mu0, mu, cos_g) -> np.ndarray:
        """I/F for cosines of incidence ``mu0``, emission ``mu`` and phase angle ``cos_g``."""
        mu0, mu, cos_g = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu0, mu, cos_g)))
        out = np.empty(mu0.shape)
        flat = out.reshape(-1)
        ph = self.packed
        for i, (a, b, c) in enumerate(zip(mu0.ravel(), mu.ravel(), cos_g.ravel())):
            flat[i] = _radiance_factor(ph, a, b, c)
        return out


@njit(cache=True)
def _chandrasekhar_h(x, gamma):
    return (1.0 + 2.0 * x) / (1.0 + 2.0 * gamma * x)


@njit(cache=True)
def _radiance_factor(ph, mu0, mu, cos_g):
    if mu0 <= 0.0 or mu <= 0.0:
        return 0.0
    if ph[0] == LAMBERT:
        return ph[1] * mu0
    w, b, B0, hw = ph[2], ph[3], ph[4], ph[5]
    gamma = math.sqrt(1.0 - w)
    # one-term Henyey-Greenstein, b > 0 backscattering; b = 0 isotropic
    p = (1.0 - b * b) / (1.0 - 2.0 * b * cos_g + b * b) ** 1.5
    surge = 0.0
    if B0 > 0.0:
        g = math.acos(min(1.0, max(-1.0, cos_g)))
        surge = B0 / (1.0 + math.tan(0.5 * g) / hw)
    r = 0.25 * w * mu0 / (mu0 + mu) * ((1.0 + surge) * p + _chandrasekhar_h(mu0, gamma) * _chandrasekhar_h(mu, gamma) - 1.0)
    return max(r, 0.0)


def auto_exposure(photometry: Photometry, sun_dir, target: float = 100.0) -> float:
    """Gain that maps level ground seen at nadir under ``sun_dir`` to ``target`` (8-bit)."""
    sun = np.asarray(sun_dir, dtype=float)
    sun = sun / np.linalg.norm(sun)
    mu0 = -sun[2]  # ground normal is -z
    rf = _radiance_factor(photometry.packed, mu0, 1.0, mu0)
    if rf <= 0:
        return 1.0
    return float(target / (255.0 * rf))


def shade(normal, sun_dir, view_dir, photometry: Photometry, exposure: float = 1.0) -> np.ndarray:
    """8-bit brightness (float, unclipped) of surface elements.

    ``view_dir`` points from the surface towards the camera; all vectors are unit.
    """
    n = np.asarray(normal, dtype=float)
    s = np.asarray(sun_dir, dtype=float)
    v = np.asarray(view_dir, dtype=float)
    mu0 = np.sum(n * s, axis=-1)
    mu = np.sum(n * v, axis=-1)
    cos_g = np.sum(s * v, axis=-1)
    return 255.0 * exposure * photometry.radiance_factor(mu0, mu, cos_g)


@njit(cache=True)
def _render(P, ph, pos, Rcw, f, cx, cy, W, H, sun, exposure, shadows, img, depth):
    R = P[RADIUS]
    pix = 1.0 / f
    for j in range(H):
        ys = (j - cy) / f
        for i in range(W):
            xs = (i - cx) / f
            nrm = math.sqrt(xs * xs + ys * ys + 1.0)
            dcx, dcy, dcz = xs / nrm, ys / nrm, 1.0 / nrm
            dx = Rcw[0, 0] * dcx + Rcw[0, 1] * dcy + Rcw[0, 2] * dcz
            dy = Rcw[1, 0] * dcx + Rcw[1, 1] * dcy + Rcw[1, 2] * dcz
            dz = Rcw[2, 0] * dcx + Rcw[2, 1] * dcy + Rcw[2, 2] * dcz
            t = _trace(P, pos[0], pos[1], pos[2], dx, dy, dz, pix)
            if t < 0.0:
                img[j, i] = 0.0
                depth[j, i] = np.nan
                continue
            depth[j, i] = t * dcz
            px, py, pz = pos[0] + t * dx, pos[1] + t * dy, pos[2] + t * dz
            fp = t * pix
            nx, ny, nz = _normal(P, px, py, pz, fp)
            mu0 = nx * sun[0] + ny * sun[1] + nz * sun[2]
            mu = -(nx * dx + ny * dy + nz * dz)
            if mu0 <= 0.0:
                img[j, i] = 0.0
                continue
            if shadows:
                eps = 1e-3 + 1e-6 * t
                if _trace(P, px + eps * nx, py + eps * ny, pz + eps * nz, sun[0], sun[1], sun[2], pix) >= 0.0:
                    img[j, i] = 0.0
                    continue
            cos_g = -(sun[0] * dx + sun[1] * dy + sun[2] * dz)
            img[j, i] = 255.0 * exposure * _radiance_factor(ph, mu0, mu, cos_g)


@dataclass(eq=False)
class Frame:
    pixels: np.ndarray  # (H, W) uint8
    timestamp: float = 0.0


def quantize(brightness) -> np.ndarray:
    """Round-half-up and clip to 8 bits."""
    return np.clip(np.floor(np.asarray(brightness) + 0.5), 0, 255).astype(np.uint8)


class Renderer:
    """Renders frames of a terrain under a fixed directional sun."""

    def __init__(
        self,
        terrain: Terrain,
        intrinsics: CameraIntrinsics,
        sun_dir,
        photometry: Photometry | None = None,
        exposure: float | None = None,
        shadows: bool = False,
        exposure_target: float = 100.0,
    ):
        self.terrain = terrain
        self.intrinsics = intrinsics
        sun = np.asarray(sun_dir, dtype=float)
        self.sun = sun / np.linalg.norm(sun)
        self.photometry = photometry or Photometry()
        self.exposure = auto_exposure(self.photometry, self.sun, exposure_target) if exposure is None else float(exposure)
        self.shadows = bool(shadows)

    def render_raw(self, position, R) -> tuple[np.ndarray, np.ndarray]:
        """Unquantised brightness and optical-axis depth (NaN on a miss), both (H, W)."""
        K = self.intrinsics
        img = np.empty((K.H, K.W))
        depth = np.empty((K.H, K.W))
        pos = np.ascontiguousarray(position, dtype=float)
        if -pos[2] <= self.terrain.height_bounds()[0]:
            raise ValueError("camera is below the terrain")
        _render(
            self.terrain.packed,
            self.photometry.packed,
            pos,
            np.ascontiguousarray(R, dtype=float),
            K.f,
            K.cx,
            K.cy,
            K.W,
            K.H,
            self.sun,
            self.exposure,
            self.shadows,
            img,
            depth,
        )
        return img, depth

    def calibrate(self, position, R, target: float = 100.0) -> float:
        """Set the exposure so the median lit pixel seen from this pose reads ``target``.

        Level-ground calibration saturates sun-facing slopes at grazing sun;
        a scene median keeps mid-tones near the target. Falls back to the
        level-ground gain when nothing is lit.
        """
        saved = self.exposure
        self.exposure = 1.0
        try:
            img, _ = self.render_raw(position, R)
        finally:
            self.exposure = saved
        lit = img[img > 0]
        if lit.size:
            self.exposure = float(target / np.median(lit))
        return self.exposure

    def render(self, position, R, timestamp: float = 0.0) -> Frame:
        img, _ = self.render_raw(position, R)
        return Frame(quantize(img), timestamp)

    def depth(self, position, R) -> np.ndarray:
        return self.render_raw(position, R)[1]


def render_frame(
    terrain: Terrain,
    position,
    R,
    intrinsics: CameraIntrinsics,
    sun_dir,
    photometry: Photometry | None = None,
    exposure: float | None = None,
    shadows: bool = False,
    timestamp: float = 0.0,
) -> Frame:
    """Render one frame; see :class:`Renderer` for repeated use."""
    r = Renderer(terrain, intrinsics, sun_dir, photometry, exposure, shadows)
    return r.render(position, R, timestamp)


def horizon_dip(altitude: float, radius: float) -> float:
    """Angle of the horizon below the local horizontal, ``arccos(R / (R + H))``."""
    return float(np.arccos(radius / (radius + altitude)))
