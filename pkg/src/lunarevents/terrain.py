"""Procedural cratered terrain on a sphere, and ray casting against it.

Coordinates are the landing-site frame used everywhere else: origin on the
base sphere at the target site, z down, so the body centre sits at
``(0, 0, R)``. Heights are defined over gnomonic coordinates
``a = R dx / -dz``, ``b = R dy / -dz`` of the direction ``d`` from the body
centre, which are metres of ground distance near the site.

The DEM is a sum of crater octaves and value-noise octaves. Each crater
octave hashes a square grid of cells; a cell holds at most one crater whose
radius lies in the octave's band, so any point only needs the 2x2 nearest
cells. Octaves finer than the ray footprint are faded out (level of detail).
All randomness comes from a splitmix64 hash of (seed, octave, cell), so the
terrain is a pure function of its parameters.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .rng import _GOLD, _M2, _TO_UNIT
from .rng import mix as _mix
from .rng import unit as _unit

MOON_RADIUS = 1737400.0

# packed parameter layout for the numba kernels
RADIUS, SEED, DENSITY, RMAX, COCT, SFD, DEPTH, RIM, RIMW, ROUGH, LMAX, NOCT, LOD, H_LO, H_HI, SLOPE = range(16)
NPARAM = 16
MAX_OCTAVES = 16
# per crater octave: cell size, occupancy probability, r_lo^-k, r_lo^-k - r_hi^-k
OCT = NPARAM
NPACKED = NPARAM + 4 * MAX_OCTAVES

_OFFSET = 1 << 40

_KX = np.uint64(0xD6E8FEB86659FD93)
_KY = np.uint64(0xA0761D6478BD642F)


@njit(cache=True)
def _cell_key(seed, layer, ix, iy):
    base = seed * _GOLD + np.uint64(layer + 1) * _M2
    return _mix(base ^ (np.uint64(ix + _OFFSET) * _KX) ^ (np.uint64(iy + _OFFSET) * _KY))


@njit(cache=True)
def crater_profile(rho, depth, rim, width):
    """Parabolic bowl ``depth (rho^2 - 1)`` plus a raised-cosine rim at ``rho = 1``."""
    h = 0.0
    if rho < 1.0:
        h = depth * (rho * rho - 1.0)
    d = rho - 1.0
    if abs(d) < width:
        h += rim * 0.5 * (1.0 + math.cos(math.pi * d / width))
    return h


@njit(cache=True)
def _crater(P, o, ix, iy):
    """Crater of cell (ix, iy) in octave o as (present, ca, cb, radius)."""
    j = OCT + 4 * o
    cell = P[j]
    key = _cell_key(np.uint64(P[SEED]), o, ix, iy)
    if float(key >> np.uint64(11)) * _TO_UNIT >= P[j + 1]:
        return False, 0.0, 0.0, 0.0
    ca = (ix + _unit(key, 1)) * cell
    cb = (iy + _unit(key, 2)) * cell
    # cumulative size-frequency N(>r) ~ r^-k, truncated to [r_lo, r_hi]
    x = P[j + 2] - _unit(key, 3) * P[j + 3]
    k = P[SFD]
    r = 1.0 / math.sqrt(x) if k == 2.0 else x ** (-1.0 / k)
    return True, ca, cb, r


@njit(cache=True)
def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


@njit(cache=True)
def _lattice(seed, o, i, j):
    return 2.0 * _unit(_cell_key(seed, 1000 + o, i, j), 0) - 1.0


@njit(cache=True)
def _value_noise(seed, o, x, y):
    i = math.floor(x)
    j = math.floor(y)
    fx = _smooth(x - i)
    fy = _smooth(y - j)
    i = np.int64(i)
    j = np.int64(j)
    v00 = _lattice(seed, o, i, j)
    v10 = _lattice(seed, o, i + 1, j)
    v01 = _lattice(seed, o, i, j + 1)
    v11 = _lattice(seed, o, i + 1, j + 1)
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy


@njit(cache=True)
def _height(P, a, b, fp):
    """DEM height at gnomonic (a, b) for ray footprint ``fp`` (0: full detail)."""
    h = 0.0
    if P[DENSITY] > 0.0:
        for o in range(int(P[COCT])):
            r_hi = P[RMAX] / 2.0**o
            w = 1.0 if fp <= 0.0 else min(1.0, max(0.0, 0.5 * r_hi / (fp * P[LOD]) - 1.0))
            if w <= 0.0:
                break
            cell = P[OCT + 4 * o]
            ix = np.int64(math.floor(a / cell))
            iy = np.int64(math.floor(b / cell))
            nx = ix + 1 if a / cell - ix > 0.5 else ix - 1
            ny = iy + 1 if b / cell - iy > 0.5 else iy - 1
            for c in range(4):
                cx = ix if c % 2 == 0 else nx
                cy = iy if c < 2 else ny
                ok, ca, cb, r = _crater(P, o, cx, cy)
                if not ok:
                    continue
                rho = math.sqrt((a - ca) ** 2 + (b - cb) ** 2) / r
                if rho < 1.0 + P[RIMW]:
                    h += w * crater_profile(rho, P[DEPTH] * r, P[RIM] * r, P[RIMW])
    if P[ROUGH] > 0.0:
        seed = np.uint64(P[SEED])
        lam = P[LMAX]
        for o in range(int(P[NOCT])):
            w = 1.0 if fp <= 0.0 else min(1.0, max(0.0, 0.25 * lam / (fp * P[LOD]) - 1.0))
            if w <= 0.0:
                break
            h += w * P[ROUGH] * lam * _value_noise(seed, o, a / lam, b / lam)
            lam *= 0.5
    return h


@njit(cache=True)
def _gnomonic(P, qx, qy, qz):
    """Gnomonic coordinates of the direction q (from the body centre)."""
    if qz >= 0.0:  # far hemisphere; never reached by site-local rays
        return 0.0, 0.0, False
    return P[RADIUS] * qx / -qz, P[RADIUS] * qy / -qz, True


@njit(cache=True)
def _gap(P, ox, oy, oz, dx, dy, dz, t, pix):
    qx = ox + t * dx
    qy = oy + t * dy
    qz = oz + t * dz - P[RADIUS]
    rho = math.sqrt(qx * qx + qy * qy + qz * qz)
    a, b, ok = _gnomonic(P, qx, qy, qz)
    h = _height(P, a, b, t * pix) if ok else 0.0
    return rho - P[RADIUS] - h


@njit(cache=True)
def _sphere_hits(ox, oy, oz, dx, dy, dz, R, Rs):
    """Both ray parameters where the unit ray meets the sphere of radius Rs about (0, 0, R)."""
    qx, qy, qz = ox, oy, oz - R
    b = qx * dx + qy * dy + qz * dz
    rq = math.sqrt(qx * qx + qy * qy + qz * qz)
    c = (rq - Rs) * (rq + Rs)
    disc = b * b - c
    if disc < 0.0:
        return False, 0.0, 0.0
    s = math.sqrt(disc)
    if b <= 0.0:
        t_hi = -b + s
        t_lo = c / t_hi if t_hi != 0.0 else 0.0
    else:
        t_lo = -b - s
        t_hi = c / t_lo
    return True, t_lo, t_hi


@njit(cache=True)
def _trace(P, ox, oy, oz, dx, dy, dz, pix):
    """First intersection of a unit ray with the terrain, or -1 on a miss.

    Conservative height-field sphere tracing (terrain slope bounded by
    ``P[SLOPE]``) until the gap drops below the footprint, then secant steps
    and Illinois regula falsi once the root is bracketed.
    """
    R = P[RADIUS]
    hit, t0, t1 = _sphere_hits(ox, oy, oz, dx, dy, dz, R, R + P[H_HI])
    if not hit or t1 <= 0.0:
        return -1.0
    t = max(t0, 0.0)
    hit_lo, s0, s1 = _sphere_hits(ox, oy, oz, dx, dy, dz, R, R + P[H_LO])
    below = hit_lo and s0 > 0.0
    t_end = s0 if below else t1
    g = _gap(P, ox, oy, oz, dx, dy, dz, t, pix)
    if g <= 0.0:
        return t
    L = P[SLOPE]
    t_prev = -1.0
    g_prev = 0.0
    ta = t
    ga = g
    tb = -1.0
    gb = 0.0
    for _ in range(1000):
        tol = 1e-9 + 1e-12 * t
        if g <= tol:
            return t
        qx, qy, qz = ox + t * dx, oy + t * dy, oz + t * dz - R
        rq = math.sqrt(qx * qx + qy * qy + qz * qz)
        sv = -(qx * dx + qy * dy + qz * dz) / rq
        rate = sv + L * math.sqrt(max(0.0, 1.0 - sv * sv))
        if g > max(t * pix, tol):
            if rate <= 0.0:
                return -1.0  # the ray climbs faster than any admissible slope
            dt = g / rate
        else:
            slope = (g_prev - g) / (t - t_prev) if t_prev >= 0.0 and t > t_prev else 0.0
            if slope <= 0.0:
                if rate <= 0.0:
                    return -1.0
                slope = rate
            dt = g / slope
        t_new = t + dt
        if t_new >= t_end:
            if not below:
                return -1.0
            t_new = t_end
        g_new = _gap(P, ox, oy, oz, dx, dy, dz, t_new, pix)
        if g_new <= 0.0:
            ta, ga, tb, gb = t, g, t_new, g_new
            break
        t_prev, g_prev, t, g = t, g, t_new, g_new
    else:
        return -1.0
    # Illinois regula falsi on [ta, tb] with ga > 0 >= gb
    side = 0
    for _ in range(100):
        tm = (ta * gb - tb * ga) / (gb - ga)
        gm = _gap(P, ox, oy, oz, dx, dy, dz, tm, pix)
        if abs(gm) <= 1e-9 + 1e-12 * tm or tb - ta <= 1e-9 + 1e-12 * tm:
            return tm
        if gm > 0.0:
            ta, ga = tm, gm
            if side == 1:
                gb *= 0.5
            side = 1
        else:
            tb, gb = tm, gm
            if side == -1:
                ga *= 0.5
            side = -1
    return 0.5 * (ta + tb)


@njit(cache=True)
def _normal(P, px, py, pz, fp):
    """Unit surface normal at a surface point from central differences of the DEM."""
    R = P[RADIUS]
    qx, qy, qz = px, py, pz - R
    rq = math.sqrt(qx * qx + qy * qy + qz * qz)
    ux, uy, uz = qx / rq, qy / rq, qz / rq
    a, b, ok = _gnomonic(P, qx, qy, qz)
    if not ok:
        return ux, uy, uz
    e = max(0.5 * fp, 1e-4)
    ha = (_height(P, a + e, b, fp) - _height(P, a - e, b, fp)) / (2 * e)
    hb = (_height(P, a, b + e, fp) - _height(P, a, b - e, fp)) / (2 * e)
    # local tangents along increasing a and b
    ax, ay, az = 1.0 - ux * ux, -ux * uy, -ux * uz
    na = math.sqrt(ax * ax + ay * ay + az * az)
    bx, by, bz = -uy * ux, 1.0 - uy * uy, -uy * uz
    nb = math.sqrt(bx * bx + by * by + bz * bz)
    nx = ux - ha * ax / na - hb * bx / nb
    ny = uy - ha * ay / na - hb * by / nb
    nz = uz - ha * az / na - hb * bz / nb
    nn = math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / nn, ny / nn, nz / nn


@njit(cache=True)
def _height_many(P, a, b, fp):
    out = np.empty(a.size)
    for i in range(a.size):
        out[i] = _height(P, a[i], b[i], fp)
    return out


@njit(cache=True)
def _trace_many(P, origins, dirs, pix):
    out = np.empty(dirs.shape[0])
    for i in range(dirs.shape[0]):
        o = origins[i]
        d = dirs[i]
        out[i] = _trace(P, o[0], o[1], o[2], d[0], d[1], d[2], pix)
    return out


@njit(cache=True)
def _normal_many(P, points, fp):
    out = np.empty_like(points)
    for i in range(points.shape[0]):
        out[i, 0], out[i, 1], out[i, 2] = _normal(P, points[i, 0], points[i, 1], points[i, 2], fp)
    return out


@dataclass(frozen=True)
class Terrain:
    """Base sphere plus a procedural crater and noise height field.

    Crater radii follow a cumulative power law ``N(>r) ~ r^-crater_sfd_exponent``
    between ``crater_max_radius / 2**crater_octaves`` and ``crater_max_radius``;
    ``crater_density`` is the probability that a cell of the largest octave
    holds a crater. Depth and rim height scale with radius. Noise amplitude
    per octave is ``noise_roughness`` times its wavelength.
    """

    radius: float = MOON_RADIUS
    seed: int = 7
    crater_density: float = 0.35
    crater_max_radius: float = 400.0
    crater_octaves: int = 6
    crater_sfd_exponent: float = 2.0
    crater_depth_ratio: float = 0.2
    crater_rim_ratio: float = 0.04
    crater_rim_width: float = 0.5
    noise_roughness: float = 0.004
    noise_max_wavelength: float = 200.0
    noise_octaves: int = 6
    lod_factor: float = 1.0
    slope_bound: float = 1.0
    packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("terrain radius must be positive")
        if self.crater_density < 0 or self.noise_roughness < 0:
            raise ValueError("crater density and roughness must be non-negative")
        if self.crater_density > 0 and not (self.crater_max_radius > 0 and self.crater_octaves >= 1):
            raise ValueError("craters need a positive max radius and at least one octave")
        if not (0 < self.crater_rim_width < 1):
            raise ValueError("crater_rim_width must lie in (0, 1)")
        if not (self.seed >= 0 and self.seed < 2**53):
            raise ValueError("seed must lie in [0, 2**53)")
        if not (0 <= self.crater_octaves <= MAX_OCTAVES):
            raise ValueError(f"crater_octaves must lie in [0, {MAX_OCTAVES}]")
        if self.crater_sfd_exponent <= 0:
            raise ValueError("crater_sfd_exponent must be positive")
        P = np.zeros(NPACKED)
        P[RADIUS] = self.radius
        P[SEED] = self.seed
        P[DENSITY] = self.crater_density
        P[RMAX] = self.crater_max_radius
        P[COCT] = self.crater_octaves
        P[SFD] = self.crater_sfd_exponent
        P[DEPTH] = self.crater_depth_ratio
        P[RIM] = self.crater_rim_ratio
        P[RIMW] = self.crater_rim_width
        P[ROUGH] = self.noise_roughness
        P[LMAX] = self.noise_max_wavelength
        P[NOCT] = self.noise_octaves
        P[LOD] = self.lod_factor
        P[SLOPE] = self.slope_bound
        k = self.crater_sfd_exponent
        for o in range(self.crater_octaves):
            r_hi = self.crater_max_radius / 2.0**o
            r_lo = 0.5 * r_hi
            j = OCT + 4 * o
            P[j] = 4.0 * r_hi
            P[j + 1] = min(1.0, self.crater_density * 2.0 ** (o * (k - 2.0)))
            P[j + 2] = r_lo**-k
            P[j + 3] = r_lo**-k - r_hi**-k
        lo, hi = self.height_bounds()
        P[H_LO], P[H_HI] = lo, hi
        P.setflags(write=False)
        object.__setattr__(self, "packed", P)

    @classmethod
    def flat(cls, radius: float = MOON_RADIUS) -> "Terrain":
        """Bare sphere (zero DEM)."""
        return cls(radius=radius, crater_density=0.0, noise_roughness=0.0)

    @classmethod
    def from_config(cls, cfg: dict) -> "Terrain":
        names = {f for f in cls.__dataclass_fields__ if f != "packed"}
        kw = {k: v for k, v in cfg.items() if k in names}
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("packed")
        return d

    @property
    def is_flat(self) -> bool:
        return self.crater_density == 0 and self.noise_roughness == 0

    def height_bounds(self) -> tuple[float, float]:
        """Conservative (min, max) DEM height; up to four craters per octave may overlap."""
        lo = hi = 0.0
        if self.crater_density > 0:
            radii = self.crater_max_radius / 2.0 ** np.arange(self.crater_octaves)
            lo -= 4 * self.crater_depth_ratio * radii.sum()
            hi += 4 * self.crater_rim_ratio * radii.sum()
        if self.noise_roughness > 0:
            amp = self.noise_roughness * (self.noise_max_wavelength / 2.0 ** np.arange(self.noise_octaves)).sum()
            lo -= amp
            hi += amp
        return lo, hi

    def height(self, a, b, footprint: float = 0.0) -> np.ndarray:
        """DEM height at gnomonic coordinates (metres from the site)."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        out = _height_many(self.packed, np.ascontiguousarray(a).ravel(), np.ascontiguousarray(b).ravel(), footprint)
        return out.reshape(a.shape)

    def gnomonic(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Gnomonic coordinates of site-frame points (their direction from the body centre)."""
        p = np.asarray(points, dtype=float)
        q = p - np.array([0.0, 0.0, self.radius])
        if np.any(q[..., 2] >= 0):
            raise ValueError("points on the far hemisphere have no gnomonic coordinates")
        return self.radius * q[..., 0] / -q[..., 2], self.radius * q[..., 1] / -q[..., 2]

    def dem_height(self, directions) -> np.ndarray:
        """DEM height for unit directions from the body centre."""
        d = np.asarray(directions, dtype=float)
        return self.height(self.radius * d[..., 0] / -d[..., 2], self.radius * d[..., 1] / -d[..., 2])

    def surface_point(self, a, b) -> np.ndarray:
        """Site-frame point of the terrain surface at gnomonic (a, b)."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        d = np.stack([a, b, -np.full(a.shape, self.radius)], axis=-1)
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        r = self.radius + self.height(a, b)
        return d * r[..., None] + np.array([0.0, 0.0, self.radius])

    def craters(self, a0: float, a1: float, b0: float, b1: float) -> np.ndarray:
        """Craters with centres in the box, as rows ``(a, b, radius, depth, rim, octave)``."""
        rows = []
        for o in range(self.crater_octaves if self.crater_density > 0 else 0):
            cell = 4.0 * self.crater_max_radius / 2.0**o
            for ix in range(int(np.floor(a0 / cell)), int(np.floor(a1 / cell)) + 1):
                for iy in range(int(np.floor(b0 / cell)), int(np.floor(b1 / cell)) + 1):
                    ok, ca, cb, r = _crater(self.packed, o, ix, iy)
                    if ok and a0 <= ca <= a1 and b0 <= cb <= b1:
                        rows.append((ca, cb, r, self.crater_depth_ratio * r, self.crater_rim_ratio * r, o))
        return np.array(rows, dtype=float).reshape(-1, 6)

    def mean_height(self, extent: float, n: int = 256) -> float:
        """Mean DEM height over a square of side ``2 extent`` centred on the site."""
        g = np.linspace(-extent, extent, n)
        A, B = np.meshgrid(g, g)
        return float(self.height(A, B).mean())

    def expected_mean_height(self) -> float:
        """Ensemble mean DEM height (noise has zero mean).

        A crater of radius r displaces ``pi r^3 (2 rim_width rim_ratio - depth_ratio / 2)``
        of volume; each octave contributes its occupancy times the mean
        displacement over its cell area.
        """
        if self.crater_density == 0:
            return 0.0
        k = self.crater_sfd_exponent
        shape = np.pi * (2 * self.crater_rim_width * self.crater_rim_ratio - 0.5 * self.crater_depth_ratio)
        total = 0.0
        for o in range(self.crater_octaves):
            j = OCT + 4 * o
            cell, prob = self.packed[j], self.packed[j + 1]
            r_hi = self.crater_max_radius / 2.0**o
            r_lo = 0.5 * r_hi
            # E[r^3] under the truncated density ~ r^-(k+1)
            if k == 3.0:
                m3 = k * np.log(r_hi / r_lo) / (r_lo**-k - r_hi**-k)
            else:
                m3 = k / (3.0 - k) * (r_hi ** (3 - k) - r_lo ** (3 - k)) / (r_lo**-k - r_hi**-k)
            total += prob * shape * m3 / cell**2
        return float(total)

    def intersect(self, origins, directions, pixel_angle: float = 0.0) -> np.ndarray:
        """Ray parameter of the first surface hit per ray (NaN on a miss).

        Directions are normalised here. ``pixel_angle`` (rad) sets the level
        of detail; 0 uses every octave.
        """
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        o = np.broadcast_to(np.asarray(origins, dtype=float), d.shape)
        t = _trace_many(self.packed, np.ascontiguousarray(o), np.ascontiguousarray(d), pixel_angle)
        return np.where(t < 0, np.nan, t)

    def normal(self, points, footprint: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return _normal_many(self.packed, np.ascontiguousarray(p), footprint)
