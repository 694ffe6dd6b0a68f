"""Frame-to-event conversion with a DVS pixel model.

Each pixel maps 8-bit brightness through a lin-log curve, low-pass filters
it with a brightness-dependent bandwidth and compares the result with a
memorised baseline. Every crossing of the ON or OFF threshold emits one
event and moves the baseline by that threshold. Leak, shot noise and hot
pixels are added as Poisson processes. All randomness is counter-based on
(seed, process, pixel, interval), so output does not depend on execution
order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit

from .rng import stream_key, unit

LINLOG_KNEE = 20.0

# noise and parameter streams
_LEAK, _SHOT, _HOT, _HOT_PICK, _THETA = range(5)


@dataclass(frozen=True)
class EmulatorConfig:
    theta_on: float = 0.25
    theta_off: float = -0.25
    sigma_theta: float = 0.03
    f_shot: float = 5.0
    f_leak: float = 0.1
    f_lp: float = 3.0
    y_floor: float = 25.0
    hot_pixel_fraction: float = 1e-4
    hot_pixel_multiplier: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if not self.theta_on > 0 > self.theta_off:
            raise ValueError("thresholds must satisfy theta_on > 0 > theta_off")
        if self.sigma_theta < 0:
            raise ValueError("sigma_theta must be non-negative")
        for name in ("f_shot", "f_leak", "f_lp", "hot_pixel_fraction", "hot_pixel_multiplier"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.hot_pixel_fraction > 1:
            raise ValueError("hot_pixel_fraction must lie in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def from_config(cls, cfg: dict | None, seed: int | None = None) -> "EmulatorConfig":
        """Build from a config mapping; missing keys keep the defaults."""
        names = {f.name for f in fields(cls)}
        kw = {k: (int(v) if k == "seed" else float(v)) for k, v in (cfg or {}).items() if k in names}
        if seed is not None:
            kw["seed"] = int(seed)
        return cls(**kw)

    def noiseless(self) -> "EmulatorConfig":
        return EmulatorConfig(**{**asdict(self), "f_shot": 0.0, "f_leak": 0.0, "hot_pixel_fraction": 0.0})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class EventStream:
    """Events sorted by (t, y, x, p); ``t`` in integer microseconds."""

    t: np.ndarray  # int64
    x: np.ndarray  # uint16
    y: np.ndarray  # uint16
    p: np.ndarray  # int8, +1 / -1
    width: int
    height: int

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.uint16)
        self.y = np.asarray(self.y, dtype=np.uint16)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event arrays differ in length")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.uint16), np.zeros(0, np.uint16), np.zeros(0, np.int8), width, height)

    def is_sorted(self) -> bool:
        # lexsort is stable, so a sorted stream maps to the identity permutation
        order = np.lexsort((self.p, self.x, self.y, self.t))
        return bool(np.array_equal(order, np.arange(len(self))))

    def sorted(self) -> "EventStream":
        order = np.lexsort((self.p, self.x, self.y, self.t))
        return EventStream(self.t[order], self.x[order], self.y[order], self.p[order], self.width, self.height)

    def window(self, t0_us: int, t1_us: int) -> "EventStream":
        """Events with ``t0_us <= t < t1_us``."""
        i0, i1 = np.searchsorted(self.t, [t0_us, t1_us], side="left")
        return EventStream(self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1], self.width, self.height)

    def equals(self, other: "EventStream") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "txyp")
        )


def linlog(Y) -> np.ndarray:
    """Log intensity, linear below the knee at ``Y = 20`` and continuous there."""
    Y = np.asarray(Y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(Y < LINLOG_KNEE, Y * (math.log(LINLOG_KNEE) / LINLOG_KNEE), np.log(np.maximum(Y, LINLOG_KNEE)))


def lowpass_step(lp_state, target, Y, dt: float, f_lp: float, y_floor: float = 25.0) -> np.ndarray:
    """One first-order IIR step toward ``target`` with cutoff ``f_lp max(Y, y_floor) / 255``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    target = np.asarray(target, dtype=float)
    if f_lp == 0:
        return target.copy()
    fc = f_lp * np.maximum(np.asarray(Y, dtype=float), y_floor) / 255.0
    alpha = -np.expm1(-2.0 * np.pi * fc * dt)
    lp = np.asarray(lp_state, dtype=float)
    return lp + alpha * (target - lp)


def pixel_events(baseline: float, prev_lp: float, new_lp: float, theta_on: float, theta_off: float, t0: int, t1: int):
    """Events of one pixel over ``[t0, t1]`` (µs): list of ``(t, p)`` and the new baseline."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    ts = np.zeros(_max_events(baseline, new_lp, theta_on, theta_off), np.int64)
    ps = np.zeros(len(ts), np.int8)
    n, base = _pixel(baseline, prev_lp, new_lp, theta_on, theta_off, t0, t1, ts, ps, 0)
    return list(zip(ts[:n].tolist(), ps[:n].tolist())), base


def _max_events(baseline, new_lp, theta_on, theta_off) -> int:
    d = new_lp - baseline
    return int(max(d / theta_on, d / theta_off, 0.0)) + 1


@njit(cache=True)
def _pixel(base, prev, new, th_on, th_off, t0, t1, ts, ps, k):
    """Write the threshold crossings of one pixel at ``ts[k:]``; return (end index, baseline)."""
    d = new - base
    if d > 0.0:
        th, pol = th_on, 1
    else:
        th, pol = th_off, -1
    n = int(math.floor(d / th))
    span = new - prev
    for j in range(1, n + 1):
        level = base + j * th
        frac = (level - prev) / span if span != 0.0 else 1.0
        frac = min(1.0, max(0.0, frac))
        ts[k] = min(t1, t0 + int(math.floor(frac * (t1 - t0) + 0.5)))
        ps[k] = pol
        k += 1
    return k, base + n * th


@njit(cache=True)
def _poisson(key, lam):
    """Poisson count by inversion, in chunks of mean <= 30 to avoid underflow."""
    if lam <= 0.0:
        return 0
    m = int(math.ceil(lam / 30.0))
    mu = lam / m
    total = 0
    for c in range(m):
        u = unit(key, c)
        p = math.exp(-mu)
        F = p
        k = 0
        while u > F and k < 10000:
            k += 1
            p *= mu / k
            F += p
        total += k
    return total


_TIME_DRAWS = 64  # counter offset of the per-event draws


@njit(cache=True)
def _noise_counts(seed, pix, interval, Y, dt, f_leak, f_shot, hot, mult):
    kl = stream_key(seed, _LEAK, pix, interval)
    ks = stream_key(seed, _SHOT, pix, interval)
    kh = stream_key(seed, _HOT, pix, interval)
    n_leak = _poisson(kl, f_leak * dt)
    n_shot = _poisson(ks, f_shot * dt * max(0.0, 1.0 - Y / 255.0))
    n_hot = _poisson(kh, mult * f_shot * dt) if hot else 0
    return kl, ks, kh, n_leak, n_shot, n_hot


@njit(cache=True)
def _interval_kernel(seed, interval, base, prev, new, th_on, th_off, Y, hot, t0, t1,
                     f_leak, f_shot, mult, W, count_only, ts, xs, ys, ps):
    """Signal and noise events of every pixel over one inter-frame interval.

    With ``count_only`` nothing is written and only the number of events is
    returned; otherwise the events are written and baselines updated.
    """
    dt = (t1 - t0) * 1e-6
    span = t1 - t0 + 1
    k = 0
    for i in range(base.size):
        b = base[i]
        d = new[i] - b
        if count_only:
            if d > 0.0:
                k += int(math.floor(d / th_on[i]))
            else:
                k += int(math.floor(d / th_off[i]))
        else:
            k0 = k
            k, base[i] = _pixel(b, prev[i], new[i], th_on[i], th_off[i], t0, t1, ts, ps, k)
            for j in range(k0, k):
                xs[j] = i % W
                ys[j] = i // W
        kl, ks, kh, n_leak, n_shot, n_hot = _noise_counts(seed, i, interval, Y[i], dt, f_leak, f_shot, hot[i], mult)
        if count_only:
            k += n_leak + n_shot + n_hot
            continue
        for j in range(n_leak):
            ts[k] = t0 + min(span - 1, int(unit(kl, _TIME_DRAWS + j) * span))
            ps[k] = 1
            xs[k] = i % W
            ys[k] = i // W
            k += 1
        for j in range(n_shot):
            ts[k] = t0 + min(span - 1, int(unit(ks, _TIME_DRAWS + 2 * j) * span))
            ps[k] = 1 if unit(ks, _TIME_DRAWS + 2 * j + 1) < 0.5 else -1
            xs[k] = i % W
            ys[k] = i // W
            k += 1
        for j in range(n_hot):
            ts[k] = t0 + min(span - 1, int(unit(kh, _TIME_DRAWS + j) * span))
            ps[k] = 1
            xs[k] = i % W
            ys[k] = i // W
            k += 1
    return k


@njit(cache=True)
def _pixel_parameters(seed, n, mean_on, mean_off, sigma, hot_fraction, th_on, th_off, hot):
    floor_on = 1e-3 * mean_on
    floor_off = 1e-3 * -mean_off
    for i in range(n):
        key = stream_key(seed, _THETA, i, 0)
        # Box-Muller pair
        r = math.sqrt(-2.0 * math.log(1.0 - unit(key, 0)))
        a = 2.0 * math.pi * unit(key, 1)
        th_on[i] = max(floor_on, mean_on + sigma * r * math.cos(a))
        th_off[i] = -max(floor_off, -mean_off + sigma * r * math.sin(a))
        hot[i] = unit(stream_key(seed, _HOT_PICK, i, 0), 0) < hot_fraction


def pixel_thresholds(config: EmulatorConfig, W: int, H: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel ``(theta_on, theta_off, hot)`` arrays of shape (H, W)."""
    n = W * H
    th_on, th_off, hot = np.empty(n), np.empty(n), np.empty(n, np.bool_)
    _pixel_parameters(config.seed, n, config.theta_on, config.theta_off, config.sigma_theta, config.hot_pixel_fraction, th_on, th_off, hot)
    return th_on.reshape(H, W), th_off.reshape(H, W), hot.reshape(H, W)


def apply_noise(Y, t0: int, t1: int, config: EmulatorConfig, interval: int = 0, hot=None) -> EventStream:
    """Leak, shot and hot-pixel events of a frame of brightness ``Y`` over ``[t0, t1]`` µs."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    Y = np.asarray(Y, dtype=float)
    H, W = Y.shape
    if hot is None:
        hot = pixel_thresholds(config, W, H)[2]
    zero = np.zeros(W * H)
    ones = np.ones(W * H)
    # thresholds of 1 with no change: only noise is generated
    args = (config.seed, interval, zero.copy(), zero, zero, ones, -ones, Y.ravel(), np.ascontiguousarray(hot).ravel(),
            int(t0), int(t1), config.f_leak, config.f_shot, config.hot_pixel_multiplier, W)
    return _run_interval(args, W, H).sorted()


def _run_interval(args, W, H) -> EventStream:
    empty_i = np.zeros(0, np.int64)
    n = _interval_kernel(*args, True, empty_i, np.zeros(0, np.uint16), np.zeros(0, np.uint16), np.zeros(0, np.int8))
    ts, xs, ys, ps = np.empty(n, np.int64), np.empty(n, np.uint16), np.empty(n, np.uint16), np.empty(n, np.int8)
    k = _interval_kernel(*args, False, ts, xs, ys, ps)
    assert k == n
    return EventStream(ts, xs, ys, ps, W, H)


def _frame_arrays(frames):
    out = []
    for fr in frames:
        if hasattr(fr, "pixels"):
            out.append((np.asarray(fr.pixels), float(fr.timestamp)))
        else:
            img, ts = fr
            out.append((np.asarray(img), float(ts)))
    return out


def to_microseconds(t_seconds) -> np.ndarray:
    return np.floor(np.asarray(t_seconds, dtype=float) * 1e6 + 0.5).astype(np.int64)


def emulate_stream(frames, config: EmulatorConfig | None = None) -> EventStream:
    """Convert timestamped grayscale frames to a sorted event stream.

    ``frames`` holds :class:`~lunarevents.render.Frame` objects or
    ``(pixels, t_seconds)`` pairs. Pixel state starts at the first frame,
    so a static scene produces signal events only from noise.
    """
    config = config or EmulatorConfig()
    seq = _frame_arrays(frames)
    if len(seq) < 2:
        raise ValueError("need at least two frames")
    H, W = seq[0][0].shape
    for img, _ in seq:
        if img.shape != (H, W):
            raise ValueError(f"frame size {img.shape} differs from {(H, W)}")
    t_us = to_microseconds([ts for _, ts in seq])
    if np.any(np.diff(t_us) <= 0):
        raise ValueError("frame timestamps must be strictly increasing (at microsecond resolution)")

    th_on, th_off, hot = (a.ravel() for a in pixel_thresholds(config, W, H))
    Y0 = seq[0][0].astype(float).ravel()
    lp = linlog(Y0)
    base = lp.copy()
    parts = []
    for k in range(1, len(seq)):
        Y = seq[k][0].astype(float).ravel()
        dt = (t_us[k] - t_us[k - 1]) * 1e-6
        new = lowpass_step(lp, linlog(Y), Y, dt, config.f_lp, config.y_floor)
        args = (config.seed, k - 1, base, lp, new, th_on, th_off, Y, hot, int(t_us[k - 1]), int(t_us[k]),
                config.f_leak, config.f_shot, config.hot_pixel_multiplier, W)
        parts.append(_run_interval(args, W, H))
        lp = new
    stream = EventStream(
        np.concatenate([s.t for s in parts]),
        np.concatenate([s.x for s in parts]),
        np.concatenate([s.y for s in parts]),
        np.concatenate([s.p for s in parts]),
        W,
        H,
    )
    return stream.sorted()


@dataclass(eq=False)
class EventFrame:
    """Accumulated events: signed net count plus ON and OFF counts, all (H, W)."""

    counts: np.ndarray
    on: np.ndarray
    off: np.ndarray
    t_center: float
    window: float

    @property
    def total(self) -> int:
        return int(self.on.sum() + self.off.sum())

    def rgb(self) -> np.ndarray:
        """White background, blue where the net count is positive, red where negative."""
        img = np.full(self.counts.shape + (3,), 255, np.uint8)
        img[self.counts > 0] = (0, 0, 255)
        img[self.counts < 0] = (255, 0, 0)
        return img


def window_bounds(t_center: float, window: float) -> tuple[int, int]:
    """Half-open window ``[t_center - window/2, t_center + window/2)`` in µs."""
    if not window > 0:
        raise ValueError("window must be positive")
    lo, hi = to_microseconds([t_center - 0.5 * window, t_center + 0.5 * window])
    return int(lo), int(hi)


def accumulate(stream: EventStream, t_center: float, window: float = 0.01, width: int | None = None, height: int | None = None) -> EventFrame:
    """Accumulate events in a window centred on ``t_center`` (seconds)."""
    W = stream.width if width is None else int(width)
    H = stream.height if height is None else int(height)
    lo, hi = window_bounds(t_center, window)
    sub = stream.window(lo, hi)
    idx = sub.y.astype(np.int64) * W + sub.x.astype(np.int64)
    on = np.bincount(idx[sub.p > 0], minlength=W * H).reshape(H, W)
    off = np.bincount(idx[sub.p < 0], minlength=W * H).reshape(H, W)
    return EventFrame(counts=on - off, on=on, off=off, t_center=float(t_center), window=float(window))
