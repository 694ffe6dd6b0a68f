"""File formats for every pipeline artifact.

All writers are deterministic: the same inputs give the same bytes. Floats
in text files are written with ``repr`` so that reading back is exact.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .dynamics import NU, NX
from .emulator import EventStream
from .render import Frame
from .scenario import PoseSequence
from .trajopt import OcpSpec, OptimalTrajectory


class FormatError(ValueError):
    pass


TRAJECTORY_COLUMNS = (
    "t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r", "m",
    "u_T", "u_phi", "u_theta", "u_psi",
)
POSE_COLUMNS = TRAJECTORY_COLUMNS[:14]
EVENT_COLUMNS = ("t_us", "x", "y", "p")

FLO_MAGIC = 202021.25
EVENTS_MAGIC = b"EVLD"
EVENTS_VERSION = 1
EVENT_HEADER = struct.Struct("<4sIHHI")
EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v) -> str:
    return repr(float(v))


def _write_table(path, columns, rows) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_table(path, columns) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or tuple(c.strip() for c in text[0].split(",")) != tuple(columns):
        raise FormatError(f"{path}: header must be {','.join(columns)}")
    rows = []
    for n, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise FormatError(f"{path}: row {n} has {len(cells)} columns, expected {len(columns)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise FormatError(f"{path}: row {n} has a non-numeric value") from None
    return np.array(rows, dtype=float).reshape(-1, len(columns))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed indentation, non-finite floats as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def _meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_trajectory(path, trajectory: OptimalTrajectory, meta: bool = True) -> None:
    """CSV of node states and controls; spec, objective, diagnostics and
    midpoint controls go to a ``.meta.json`` sidecar."""
    rows = np.column_stack([trajectory.times, trajectory.states, trajectory.controls])
    _write_table(path, TRAJECTORY_COLUMNS, rows)
    if meta:
        info = {
            "objective": trajectory.objective,
            "diagnostics": {k: v for k, v in trajectory.diagnostics.items()},
            "spec": None if trajectory.spec is None else trajectory.spec.summary(),
            "mid_controls": None if trajectory.mid_controls is None else trajectory.mid_controls.tolist(),
        }
        write_json(_meta_path(path), info)


def read_trajectory(path) -> OptimalTrajectory:
    table = _read_table(path, TRAJECTORY_COLUMNS)
    if len(table) < 2:
        raise FormatError(f"{path}: a trajectory needs at least two rows")
    traj = OptimalTrajectory(times=table[:, 0], states=table[:, 1 : 1 + NX], controls=table[:, 1 + NX : 1 + NX + NU])
    mp = _meta_path(path)
    if mp.exists():
        info = json.loads(mp.read_text())
        traj.objective = float("nan") if info.get("objective") is None else float(info["objective"])
        traj.diagnostics = info.get("diagnostics") or {}
        if info.get("spec") is not None:
            traj.spec = OcpSpec.from_summary(info["spec"])
        if info.get("mid_controls") is not None:
            traj.mid_controls = np.asarray(info["mid_controls"], dtype=float).reshape(-1, NU)
    return traj


def write_poses(path, poses: PoseSequence) -> None:
    _write_table(path, POSE_COLUMNS, poses.as_table())


def read_poses(path) -> PoseSequence:
    return PoseSequence.from_table(_read_table(path, POSE_COLUMNS))


def write_flo(path, u, v, valid=None, mask_path=None) -> None:
    """Middlebury ``.flo`` (pixels per second); invalid pixels are stored as 0.

    The validity mask goes to ``mask_path`` (default ``<path>.mask.pgm``,
    255 = valid) whenever any pixel is invalid or a mask path is given.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 2:
        raise FormatError("u and v must be 2-D arrays of equal shape")
    ok = np.isfinite(u) & np.isfinite(v)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    H, W = u.shape
    data = np.empty((H, W, 2), dtype="<f4")
    data[..., 0] = np.where(ok, u, 0.0)
    data[..., 1] = np.where(ok, v, 0.0)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, W, H))
        fh.write(data.tobytes())
    if mask_path is not None or not ok.all():
        write_pgm(mask_path or Path(str(path) + ".mask.pgm"), np.where(ok, 255, 0).astype(np.uint8))


def read_flo(path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    magic, W, H = struct.unpack_from("<fii", raw)
    if magic != np.float32(FLO_MAGIC):
        raise FormatError(f"{path}: bad magic {magic}")
    if W < 0 or H < 0 or len(raw) != 12 + 8 * W * H:
        raise FormatError(f"{path}: size does not match {W}x{H}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(H, W, 2)
    return data[..., 0].astype(np.float32), data[..., 1].astype(np.float32)


def write_pgm(path, pixels) -> None:
    """Binary 8-bit PGM (P5, maxval 255)."""
    img = np.asarray(pixels.pixels if isinstance(pixels, Frame) else pixels)
    if img.ndim != 2:
        raise FormatError("PGM needs a 2-D image")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise FormatError("PGM pixels must lie in 0..255")
        img = img.astype(np.uint8)
    H, W = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def _netpbm_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int, int]:
    """Parse ``magic W H maxval`` (with comments); return W, H, maxval, data offset."""
    if not raw.startswith(magic):
        raise FormatError(f"{path}: not a {magic.decode()} file")
    tokens = []
    i = len(magic)
    while len(tokens) < 3:
        while i < len(raw) and raw[i : i + 1].isspace():
            i += 1
        if raw[i : i + 1] == b"#":
            while i < len(raw) and raw[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{path}: truncated header")
        tokens.append(raw[i:j])
        i = j
    try:
        W, H, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: malformed header") from None
    return W, H, maxval, i + 1


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    W, H, maxval, off = _netpbm_header(raw, b"P5", path)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval}, expected 255")
    if len(raw) - off != W * H:
        raise FormatError(f"{path}: expected {W * H} pixel bytes, found {len(raw) - off}")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(H, W).copy()


def write_ppm(path, rgb) -> None:
    """Binary 8-bit colour PPM (P6)."""
    img = np.asarray(rgb, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError("PPM needs an (H, W, 3) image")
    H, W, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    W, H, maxval, off = _netpbm_header(raw, b"P6", path)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval}, expected 255")
    if len(raw) - off != 3 * W * H:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8, offset=off).reshape(H, W, 3).copy()


def write_png(path, rgb) -> None:
    """RGB PNG through matplotlib with no version metadata, so bytes are stable."""
    import matplotlib.image

    matplotlib.image.imsave(path, np.asarray(rgb, dtype=np.uint8), format="png", metadata={"Software": None})


def _check_sorted(stream: EventStream) -> None:
    if not stream.is_sorted():
        raise FormatError("event stream is not sorted by (t, y, x, p)")
    if len(stream) and not np.all(np.abs(stream.p.astype(int)) == 1):
        raise FormatError("event polarity must be +1 or -1")
    if len(stream) and (np.any(stream.t < 0) or stream.x.max() >= stream.width or stream.y.max() >= stream.height):
        raise FormatError("event coordinates or timestamps out of range")


def write_events_csv(path, stream: EventStream) -> None:
    _check_sorted(stream)
    body = np.column_stack([stream.t, stream.x, stream.y, stream.p]).astype(np.int64)
    with open(path, "w") as fh:
        fh.write(f"# width={stream.width} height={stream.height}\n")
        fh.write(",".join(EVENT_COLUMNS) + "\n")
        for row in body.tolist():
            fh.write("%d,%d,%d,%d\n" % tuple(row))


def read_events_csv(path, width: int | None = None, height: int | None = None) -> EventStream:
    lines = Path(path).read_text().splitlines()
    W, H = width, height
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            key, _, val = tok.partition("=")
            if key == "width" and W is None:
                W = int(val)
            elif key == "height" and H is None:
                H = int(val)
        lines = lines[1:]
    if not lines or lines[0].strip() != ",".join(EVENT_COLUMNS):
        raise FormatError(f"{path}: header must be {','.join(EVENT_COLUMNS)}")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 4:
            raise FormatError(f"{path}: row {n} has {len(cells)} columns, expected 4")
        rows.append([int(c) for c in cells])
    a = np.array(rows, dtype=np.int64).reshape(-1, 4)
    if W is None or H is None:
        W = int(a[:, 1].max()) + 1 if len(a) else 0
        H = int(a[:, 2].max()) + 1 if len(a) else 0
    return EventStream(a[:, 0], a[:, 1], a[:, 2], a[:, 3], W, H)


def write_events_bin(path, stream: EventStream) -> None:
    """16-byte header then 13-byte little-endian records ``(u8 t, u2 x, u2 y, i1 p)``."""
    _check_sorted(stream)
    rec = np.empty(len(stream), dtype=EVENT_DTYPE)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as fh:
        fh.write(EVENT_HEADER.pack(EVENTS_MAGIC, EVENTS_VERSION, stream.width, stream.height, 0))
        fh.write(rec.tobytes())


def read_events_bin(path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < EVENT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, W, H, _ = EVENT_HEADER.unpack_from(raw)
    if magic != EVENTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EVENTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = len(raw) - EVENT_HEADER.size
    if payload % EVENT_DTYPE.itemsize:
        raise FormatError(f"{path}: truncated record ({payload % EVENT_DTYPE.itemsize} trailing bytes)")
    rec = np.frombuffer(raw, dtype=EVENT_DTYPE, offset=EVENT_HEADER.size)
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], W, H)


def write_events(path, stream: EventStream) -> None:
    """Binary for ``.bin``/``.evld`` suffixes, CSV otherwise."""
    if Path(path).suffix in (".bin", ".evld"):
        write_events_bin(path, stream)
    else:
        write_events_csv(path, stream)


def read_events(path) -> EventStream:
    if Path(path).suffix in (".bin", ".evld"):
        return read_events_bin(path)
    return read_events_csv(path)
