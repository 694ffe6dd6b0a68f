"""Dataset generation: the per-stage functions and the full pipeline.

Each stage reads and writes plain files so that it can be run on its own
(see :mod:`lunarevents.cli`); :func:`build_dataset` chains them for every
sample and writes a manifest whose bytes depend only on (config, seed).
Wall-clock timings go to a separate ``timing.json``.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import SCENARIO_KINDS, Config
from .emulator import EmulatorConfig, EventStream, accumulate, emulate_stream
from .formats import (
    dumps_json,
    read_pgm,
    sha256,
    write_events_bin,
    write_flo,
    write_pgm,
    write_png,
    write_poses,
    write_trajectory,
)
from .motion_field import effective_radius, flow_color_encode, motion_field_frame
from .render import Frame, Photometry, Renderer, camera_intrinsics
from .scenario import PoseSequence, base_spec, sample_boundary_conditions, upsample
from .terrain import Terrain
from .trajopt import AugLagOptions, OptimalTrajectory, continuation_solve, solve

logger = logging.getLogger(__name__)

ACCUMULATION_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def sample_seed(seed: int, kind: str, index: int) -> int:
    """Seed of sample ``index`` of scenario ``kind`` under the global ``seed``."""
    kind_id = SCENARIO_KINDS.index(kind) if kind in SCENARIO_KINDS else sum(map(ord, kind))
    return int(np.random.SeedSequence([int(seed), kind_id, int(index)]).generate_state(1, np.uint32)[0])


# --- trajectory stage ------------------------------------------------------


def _solver_options(config: Config) -> AugLagOptions:
    t = config.trajopt
    return AugLagOptions(tol=float(t.get("tol", 1e-6)), max_iter=int(t.get("max_iter", 2000)))


def _spec_kw(config: Config) -> dict:
    t = config.trajopt
    return {
        "N": int(t["N"]),
        "epsilon": float(t["epsilon"]),
        "lambda_tilt": np.deg2rad(float(t["lambda_tilt_deg"])),
        "region_fraction": float(config.dataset.get("region_fraction", 0.1)),
    }


def solve_base(config: Config, kind: str) -> OptimalTrajectory:
    """Solve the deterministic mid-range instance of a scenario from scratch."""
    spec = base_spec(config.scenario(kind), config.vehicle, **_spec_kw(config))
    out = solve(spec, options=_solver_options(config))
    out.diagnostics["scenario"] = kind
    return out


def solve_sample(config: Config, kind: str, seed: int, base: OptimalTrajectory | None = None) -> OptimalTrajectory:
    """Sample boundary conditions with ``seed`` and solve by continuation from the base.

    Falls back to a solve from the straight-line guess when the homotopy
    loses convergence (or the base itself did not converge); the route taken
    is recorded in ``diagnostics["method"]``.
    """
    spec = sample_boundary_conditions(config.scenario(kind), np.random.default_rng(int(seed)), config.vehicle, **_spec_kw(config))
    options = _solver_options(config)
    if base is None:
        base = solve_base(config, kind)
    traj = None
    if base.converged:
        traj = continuation_solve(base, spec, steps=int(config.trajopt["continuation_steps"]), options=options)
        if traj.diagnostics.get("continuation_complete", traj.converged) and traj.converged:
            traj.diagnostics.update(method="continuation", scenario=kind, seed=int(seed))
            return traj
        logger.warning("%s seed %d: continuation failed, solving from scratch", kind, seed)
    scratch = solve(spec, options=options)
    scratch.diagnostics.update(method="scratch", scenario=kind, seed=int(seed))
    if traj is not None:
        scratch.diagnostics["continuation_failed_at"] = traj.diagnostics.get("failed_at")
    return scratch


# --- rendering stage -------------------------------------------------------


def make_terrain(config: Config) -> Terrain:
    return Terrain.from_config(config.terrain)


def make_renderer(config: Config, kind: str, terrain: Terrain | None = None) -> Renderer:
    cam = config.camera
    K = camera_intrinsics(np.deg2rad(float(cam["fov_deg"])), int(cam["width"]), int(cam["height"]))
    return Renderer(
        terrain or make_terrain(config),
        K,
        config.scenario(kind).sun_direction,
        Photometry.from_config(config.terrain),
        shadows=bool(config.terrain.get("shadows", False)),
        exposure_target=float(config.terrain.get("exposure_target", 100.0)),
    )


def render_sequence(config: Config, trajectory: OptimalTrajectory, kind: str, out_dir, renderer: Renderer | None = None):
    """Upsample to the camera rate, render every pose and write ``poses.csv`` and ``frames/``.

    The exposure is calibrated on the first pose. Returns (poses, frames, renderer).
    """
    out_dir = Path(out_dir)
    fdir = out_dir / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    poses = upsample(trajectory, float(config.camera["fps"]))
    write_poses(out_dir / "poses.csv", poses)
    renderer = renderer or make_renderer(config, kind)
    renderer.calibrate(poses.position[0], poses.R[0], float(config.terrain.get("exposure_target", 100.0)))
    frames = []
    for k in range(len(poses)):
        fr = renderer.render(poses.position[k], poses.R[k], float(poses.timestamps[k]))
        write_pgm(fdir / f"frame_{k:05d}.pgm", fr.pixels)
        frames.append(fr)
    write_timestamps(fdir / "timestamps.csv", poses.timestamps)
    return poses, frames, renderer


def write_timestamps(path, timestamps) -> None:
    lines = ["index,t"] + [f"{k},{float(t)!r}" for k, t in enumerate(timestamps)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_frames(frame_dir, fps: float | None = None) -> list[Frame]:
    """Frames ``frame_*.pgm`` of a directory with timestamps from ``timestamps.csv`` (or ``k / fps``)."""
    frame_dir = Path(frame_dir)
    files = sorted(frame_dir.glob("frame_*.pgm"))
    if not files:
        raise FileNotFoundError(f"no frame_*.pgm files in {frame_dir}")
    ts_file = frame_dir / "timestamps.csv"
    if ts_file.exists():
        rows = ts_file.read_text().splitlines()[1:]
        ts = [float(r.split(",")[1]) for r in rows if r.strip()]
        if len(ts) != len(files):
            raise ValueError(f"{ts_file} lists {len(ts)} timestamps for {len(files)} frames")
    elif fps:
        ts = [k / fps for k in range(len(files))]
    else:
        raise ValueError(f"{frame_dir} has no timestamps.csv; pass the frame rate")
    return [Frame(read_pgm(f), t) for f, t in zip(files, ts)]


# --- flow stage ------------------------------------------------------------


def flow_sequence(config: Config, poses: PoseSequence, out_dir, surface_model: str | None = None,
                  renderer: Renderer | None = None, stride: int | None = None, kind: str | None = None) -> list[str]:
    """Write ``flow/flow_<k>.flo`` (pixels/s, with mask) and a colour PNG for every ``stride``-th pose."""
    surface_model = surface_model or config.dataset.get("surface_model", "spherical")
    stride = int(stride or config.dataset.get("flow_stride", 1))
    out = Path(out_dir) / "flow"
    out.mkdir(parents=True, exist_ok=True)
    if renderer is None:
        renderer = make_renderer(config, kind or next(iter(config.scenarios)))
    radius = effective_radius(renderer.terrain)
    written = []
    for k in range(0, len(poses), stride):
        mf = motion_field_frame(poses.position[k], poses.R[k], poses.v_cam[k], poses.omega[k], renderer.intrinsics,
                                surface_model, radius=radius, renderer=renderer, timestamp=float(poses.timestamps[k]),
                                center_z=renderer.terrain.radius)
        u, v = mf.pixels_per_second()
        name = out / f"flow_{k:05d}.flo"
        write_flo(name, u, v, mask_path=out / f"flow_{k:05d}.mask.pgm")
        write_png(out / f"flow_{k:05d}.png", flow_color_encode(u, v))
        written.append(name.name)
    return written


# --- event stages ----------------------------------------------------------


def emulator_config(config: Config, seed: int, noise: bool = True) -> EmulatorConfig:
    cfg = EmulatorConfig.from_config(config.emulator, seed=seed)
    return cfg if noise else cfg.noiseless()


def events_from_frames(config: Config, frames, seed: int, out_dir, noise: bool = True) -> EventStream:
    stream = emulate_stream(frames, emulator_config(config, seed, noise))
    write_events_bin(Path(out_dir) / "events.bin", stream)
    return stream


def accumulation_centres(t_end: float, t_start: float = 0.0) -> list[float]:
    return [t_start + f * (t_end - t_start) for f in ACCUMULATION_FRACTIONS]


def accumulate_windows(stream: EventStream, centres, window: float, out_dir) -> list[dict]:
    """Write signed counts (``.npy``) and RGB renders for each window centre."""
    out = Path(out_dir) / "accumulated"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, tc in enumerate(centres):
        ef = accumulate(stream, tc, window)
        np.save(out / f"acc_{i}.npy", ef.counts.astype(np.int32))
        write_png(out / f"acc_{i}.png", ef.rgb())
        rows.append({"t_center": float(tc), "window": float(window), "events": ef.total,
                     "on": int(ef.on.sum()), "off": int(ef.off.sum())})
    return rows


# --- pipeline --------------------------------------------------------------


@dataclass
class SampleJob:
    config: Config
    kind: str
    index: int
    seed: int
    out_dir: Path
    base: OptimalTrajectory
    surface_model: str
    noise: bool


def _checksums(root: Path, sample_dir: Path) -> dict:
    return {str(p.relative_to(root)): sha256(p) for p in sorted(sample_dir.rglob("*")) if p.is_file()}


def run_sample(job: SampleJob) -> tuple[dict, dict]:
    """Run every stage for one sample; return its manifest record and timings.

    Exceptions are caught and recorded so one bad sample does not stop the dataset.
    """
    cfg = job.config
    sdir = job.out_dir / job.kind / f"sample_{job.index:03d}"
    sdir.mkdir(parents=True, exist_ok=True)
    rec = {"kind": job.kind, "index": job.index, "seed": job.seed, "dir": str(sdir.relative_to(job.out_dir))}
    sc = cfg.scenario(job.kind)
    rec["sun"] = {"range": sc.sun[0], "azimuth_deg": sc.sun[1], "altitude_deg": sc.sun[2],
                  "direction": sc.sun_direction.tolist()}
    timing = {}
    try:
        t0 = time.perf_counter()
        traj = solve_sample(cfg, job.kind, job.seed, job.base)
        timing["solve"] = time.perf_counter() - t0
        write_trajectory(sdir / "trajectory.csv", traj)
        rec["spec"] = traj.spec.summary() if traj.spec is not None else None
        rec["diagnostics"] = _stable_diagnostics(traj.diagnostics)
        rec["objective"] = traj.objective
        if not traj.converged:
            rec["status"] = "not_converged"
            rec["files"] = _checksums(job.out_dir, sdir)
            return rec, timing
        t0 = time.perf_counter()
        poses, frames, renderer = render_sequence(cfg, traj, job.kind, sdir)
        timing["render"] = time.perf_counter() - t0
        rec["frames"] = len(frames)
        rec["exposure"] = renderer.exposure
        t0 = time.perf_counter()
        flow_sequence(cfg, poses, sdir, job.surface_model, renderer)
        timing["flow"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        stream = events_from_frames(cfg, frames, job.seed, sdir, job.noise)
        timing["events"] = time.perf_counter() - t0
        rec["events"] = len(stream)
        window = float(cfg.dataset.get("accumulate_window", 0.01))
        rec["windows"] = accumulate_windows(stream, accumulation_centres(float(poses.timestamps[-1])), window, sdir)
        rec["status"] = "ok"
    except Exception as exc:  # isolate the failure to this sample
        logger.exception("%s sample %d failed", job.kind, job.index)
        rec["status"] = "error"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    rec["files"] = _checksums(job.out_dir, sdir)
    return rec, timing


def _stable_diagnostics(diag: dict) -> dict:
    return {k: v for k, v in diag.items() if k not in ("time", "elapsed")}


def build_dataset(
    config: Config,
    out_dir,
    seed: int = 0,
    scenarios=None,
    samples: int | None = None,
    workers: int = 1,
    noise: bool = True,
) -> dict:
    """Generate the dataset and write ``manifest.json`` and ``timing.json`` in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = list(scenarios or config.scenarios)
    n = int(samples if samples is not None else config.dataset.get("samples_per_scenario", 1))
    surface_model = config.dataset.get("surface_model", "spherical")
    t_start = time.perf_counter()
    timing = {"bases": {}, "samples": {}}
    bases = {}
    manifest = {
        "tool": "lunarevents",
        "version": __version__,
        "seed": int(seed),
        "config": config.raw,
        "camera": make_renderer(config, kinds[0]).intrinsics.to_dict() if kinds else None,
        "emulator": emulator_config(config, 0, noise).to_dict(),
        "noise": bool(noise),
        "surface_model": surface_model,
        "bases": {},
        "samples": [],
    }
    jobs = []
    for kind in kinds:
        t0 = time.perf_counter()
        base = solve_base(config, kind)
        timing["bases"][kind] = time.perf_counter() - t0
        bases[kind] = base
        bdir = out_dir / kind / "base"
        bdir.mkdir(parents=True, exist_ok=True)
        write_trajectory(bdir / "trajectory.csv", base)
        manifest["bases"][kind] = {
            "converged": base.converged,
            "objective": base.objective,
            "diagnostics": _stable_diagnostics(base.diagnostics),
            "files": _checksums(out_dir, bdir),
        }
        for i in range(n):
            jobs.append(SampleJob(config, kind, i, sample_seed(seed, kind, i), out_dir, base, surface_model, noise))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_sample, jobs))
    else:
        results = [run_sample(job) for job in jobs]
    for job, (rec, tm) in zip(jobs, results):
        manifest["samples"].append(rec)
        timing["samples"][rec["dir"]] = tm
        logger.info("%s sample %d: %s", job.kind, job.index, rec["status"])
    timing["total"] = time.perf_counter() - t_start
    (out_dir / "manifest.json").write_text(dumps_json(manifest))
    (out_dir / "timing.json").write_text(dumps_json(timing))
    return manifest
