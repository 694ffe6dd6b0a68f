"""Command-line interface.

Subcommands mirror the pipeline stages (``solve``, ``render``, ``flow``,
``events``, ``accumulate``), chain them (``pipeline``) or draw figures of a
finished dataset (``report``). Exit codes: 0 success, 1 usage or I/O error,
2 infeasible or non-converged trajectory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .formats import FormatError, read_events, read_trajectory, write_events_csv, write_trajectory

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2
logger = logging.getLogger("lunarevents")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--config", default=None, help="preset name (default, desk) or YAML file merged over the defaults")
    p.add_argument("--out", default=".", help=out_help)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--surface-model", choices=("planar", "spherical", "dem"), default=None)
    p.add_argument("--noise", type=_on_off, default=True, metavar="{on,off}")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--shadows", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lunarevents", description="Event-camera datasets of lunar landings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one sampled landing trajectory")
    _common(p, "output directory for trajectory.csv")
    p.add_argument("--scenario", required=True)

    p = sub.add_parser("render", help="render camera frames along a trajectory")
    _common(p, "output directory (poses.csv, frames/)")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scenario", default=None, help="sun geometry; defaults to the scenario recorded with the trajectory")

    p = sub.add_parser("flow", help="ground-truth motion field along a trajectory")
    _common(p, "output directory (flow/)")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--scenario", default=None)
    p.add_argument("--stride", type=int, default=None, help="every n-th camera pose (default from config)")

    p = sub.add_parser("events", help="emulate events from a directory of frames")
    _common(p, "output directory (events.bin)")
    p.add_argument("--frames", required=True, help="directory of frame_*.pgm (+ timestamps.csv)")
    p.add_argument("--csv", action="store_true", help="also write events.csv")

    p = sub.add_parser("accumulate", help="accumulate events into signed count frames")
    _common(p, "output directory (accumulated/)")
    p.add_argument("--events", required=True)
    p.add_argument("--t-center", type=float, action="append", default=None, help="window centre in s (repeatable)")
    p.add_argument("--window", type=float, default=None, help="window length in s (default 0.01)")

    p = sub.add_parser("pipeline", help="generate a full dataset with manifest")
    _common(p, "dataset directory")
    p.add_argument("--samples", type=int, default=None, help="samples per scenario")
    p.add_argument("--scenarios", default=None, help="comma-separated subset of scenarios")
    p.add_argument("--report", action="store_true", help="render summary figures afterwards")

    p = sub.add_parser("report", help="render summary figures of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _config(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(
        width=args.width, height=args.height, fps=args.fps, shadows=args.shadows,
        noise=args.noise, surface_model=args.surface_model,
    )


def _scenario_of(args, trajectory) -> str:
    kind = args.scenario or trajectory.diagnostics.get("scenario")
    if kind is None:
        raise ConfigError("trajectory does not record its scenario; pass --scenario")
    return kind


def _cmd_solve(args) -> int:
    from .dataset import solve_sample

    cfg = _config(args)
    cfg.scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = solve_sample(cfg, args.scenario, args.seed)
    write_trajectory(out / "trajectory.csv", traj)
    d = traj.diagnostics
    print(f"{args.scenario} seed {args.seed}: {d['message']}; defect {d['max_defect']:.2e}, "
          f"boundary {d['max_boundary']:.2e}, tilt {d['max_violation']:.2e}, objective {traj.objective:.6g}")
    return EXIT_OK if traj.converged else EXIT_NOT_CONVERGED


def _cmd_render(args) -> int:
    from .dataset import render_sequence

    cfg = _config(args)
    traj = read_trajectory(args.trajectory)
    poses, frames, _ = render_sequence(cfg, traj, _scenario_of(args, traj), args.out)
    print(f"wrote {len(frames)} frames to {Path(args.out) / 'frames'}")
    return EXIT_OK


def _cmd_flow(args) -> int:
    from .dataset import flow_sequence, make_renderer
    from .scenario import upsample

    cfg = _config(args)
    traj = read_trajectory(args.trajectory)
    renderer = make_renderer(cfg, _scenario_of(args, traj))
    poses = upsample(traj, float(cfg.camera["fps"]))
    files = flow_sequence(cfg, poses, args.out, cfg.dataset.get("surface_model"), renderer, args.stride)
    print(f"wrote {len(files)} flow fields to {Path(args.out) / 'flow'}")
    return EXIT_OK


def _cmd_events(args) -> int:
    from .dataset import events_from_frames, read_frames

    cfg = _config(args)
    frames = read_frames(args.frames, fps=float(cfg.camera["fps"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = events_from_frames(cfg, frames, args.seed, out, noise=args.noise)
    if args.csv:
        write_events_csv(out / "events.csv", stream)
    print(f"wrote {len(stream)} events to {out / 'events.bin'}")
    return EXIT_OK


def _cmd_accumulate(args) -> int:
    from .dataset import accumulate_windows, accumulation_centres

    cfg = _config(args)
    stream = read_events(args.events)
    window = args.window if args.window is not None else float(cfg.dataset.get("accumulate_window", 0.01))
    if args.t_center:
        centres = args.t_center
    elif len(stream):
        centres = accumulation_centres(float(stream.t[-1]) * 1e-6, float(stream.t[0]) * 1e-6)
    else:
        centres = [0.0]
    rows = accumulate_windows(stream, centres, window, args.out)
    for r in rows:
        print(f"t={r['t_center']:.6f}s window={r['window']}s events={r['events']} (on {r['on']}, off {r['off']})")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    from .dataset import build_dataset

    cfg = _config(args)
    kinds = args.scenarios.split(",") if args.scenarios else None
    for k in kinds or []:
        cfg.scenario(k)
    manifest = build_dataset(cfg, args.out, seed=args.seed, scenarios=kinds, samples=args.samples,
                             workers=args.workers, noise=args.noise)
    status = [s["status"] for s in manifest["samples"]]
    print(f"{status.count('ok')}/{len(status)} samples ok; manifest at {Path(args.out) / 'manifest.json'}")
    if args.report:
        from .plotting import make_report

        make_report(args.out)
    return EXIT_OK if all(s == "ok" for s in status) else EXIT_NOT_CONVERGED


def _cmd_report(args) -> int:
    from .plotting import make_report

    files = make_report(args.dataset, args.out)
    print(f"wrote {len(files)} figures")
    return EXIT_OK


COMMANDS = {
    "solve": _cmd_solve,
    "render": _cmd_render,
    "flow": _cmd_flow,
    "events": _cmd_events,
    "accumulate": _cmd_accumulate,
    "pipeline": _cmd_pipeline,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FormatError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
