"""Figures for trajectories, envelopes, event frames and flow fields.

Every function draws onto a new figure, saves it to ``path`` and closes it;
the Agg backend is used so no display is needed.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dynamics import EUL, MASS, POS, VEL  # noqa: E402
from .trajopt import OptimalTrajectory  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trajectory(trajectory: OptimalTrajectory, path, title: str | None = None) -> Path:
    """Position, velocity, attitude, mass and throttles against time."""
    t = trajectory.times
    X = trajectory.states
    U = trajectory.controls
    fig, ax = plt.subplots(3, 2, figsize=(10, 8), sharex=True)
    ax[0, 0].plot(t, X[:, POS][:, :2])
    ax[0, 0].plot(t, -X[:, POS][:, 2])
    ax[0, 0].legend(["x", "y", "altitude"])
    ax[0, 0].set_ylabel("m")
    ax[0, 1].plot(t, X[:, VEL])
    ax[0, 1].legend(["vx", "vy", "vz"])
    ax[0, 1].set_ylabel("m/s")
    ax[1, 0].plot(t, np.rad2deg(X[:, EUL]))
    ax[1, 0].legend(["roll", "pitch", "yaw"])
    ax[1, 0].set_ylabel("deg")
    ax[1, 1].plot(t, X[:, MASS])
    ax[1, 1].set_ylabel("mass (kg)")
    ax[2, 0].plot(t, U[:, 0])
    ax[2, 0].set_ylabel("main throttle")
    ax[2, 1].plot(t, U[:, 1:])
    ax[2, 1].legend(["u_phi", "u_theta", "u_psi"])
    ax[2, 1].set_ylabel("attitude throttles")
    for a in ax[-1]:
        a.set_xlabel("t (s)")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_ground_track(trajectories: dict[str, list[OptimalTrajectory]], path) -> Path:
    """Downrange distance against altitude for every trajectory, one colour per scenario."""
    fig, ax = plt.subplots(figsize=(7, 5))
    for i, (kind, trajs) in enumerate(sorted(trajectories.items())):
        for j, tr in enumerate(trajs):
            r = tr.states[:, POS]
            ax.plot(np.hypot(r[:, 0], r[:, 1]), -r[:, 2], color=f"C{i}", label=kind if j == 0 else None)
    ax.set_xlabel("distance from site (m)")
    ax.set_ylabel("altitude (m)")
    ax.legend()
    return _save(fig, path)


def plot_envelopes(trajectories: dict[str, list[OptimalTrajectory]], path, n: int = 101) -> Path:
    """Min-max band and mean of altitude and pitch over normalised time, per scenario."""
    fig, ax = plt.subplots(1, 2, figsize=(11, 4))
    s = np.linspace(0.0, 1.0, n)
    for i, (kind, trajs) in enumerate(sorted(trajectories.items())):
        if not trajs:
            continue
        alt = np.array([np.interp(s, (tr.times - tr.times[0]) / tr.tf, -tr.states[:, POS][:, 2]) for tr in trajs])
        pitch = np.array([np.interp(s, (tr.times - tr.times[0]) / tr.tf, np.rad2deg(tr.states[:, EUL][:, 1])) for tr in trajs])
        for a, data in zip(ax, (alt, pitch)):
            a.fill_between(s, data.min(axis=0), data.max(axis=0), color=f"C{i}", alpha=0.25)
            a.plot(s, data.mean(axis=0), color=f"C{i}", label=kind)
    ax[0].set_ylabel("altitude (m)")
    ax[1].set_ylabel("pitch (deg)")
    for a in ax:
        a.set_xlabel("t / tf")
        a.legend()
    return _save(fig, path)


def plot_frames(images, labels, path, cmap: str | None = "gray") -> Path:
    """A row of images (grayscale frames or RGB event/flow renders) with captions."""
    n = len(images)
    fig, ax = plt.subplots(1, n, figsize=(2.6 * n, 2.9), squeeze=False)
    for a, img, lab in zip(ax[0], images, labels):
        img = np.asarray(img)
        if img.ndim == 2:
            a.imshow(img, cmap=cmap, vmin=0, vmax=255, interpolation="nearest")
        else:
            a.imshow(img, interpolation="nearest")
        a.set_title(lab, fontsize=9)
        a.axis("off")
    return _save(fig, path)


def plot_flow(u, v, path, stride: int = 8, background=None, title: str | None = None) -> Path:
    """Quiver plot of a flow field (pixels per second), optionally over a frame."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    H, W = u.shape
    fig, ax = plt.subplots(figsize=(5, 5 * H / W))
    if background is not None:
        ax.imshow(background, cmap="gray", vmin=0, vmax=255)
    jj, ii = np.mgrid[stride // 2 : H : stride, stride // 2 : W : stride]
    ax.quiver(ii, jj, u[jj, ii], v[jj, ii], color="tab:orange", angles="xy")
    ax.set_xlim(0, W)
    ax.set_ylim(H, 0)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_event_counts(series: dict[str, tuple], path) -> Path:
    """Events per accumulation window against window centre; ``series`` maps label to (centres, counts)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (times, counts) in sorted(series.items()):
        ax.plot(times, counts, marker="o", label=label)
    ax.set_xlabel("window centre (s)")
    ax.set_ylabel("events in window")
    ax.legend(fontsize=7)
    return _save(fig, path)


def make_report(dataset_dir, out_dir=None) -> list[Path]:
    """Render summary figures of a generated dataset into ``<dataset>/report``.

    Figures are not listed in the manifest, so they do not affect its checksum.
    """
    import json

    from .formats import read_flo, read_pgm, read_trajectory
    from .motion_field import flow_color_encode

    root = Path(dataset_dir)
    out = Path(out_dir) if out_dir is not None else root / "report"
    manifest = json.loads((root / "manifest.json").read_text())
    written = []
    trajs: dict[str, list] = {}
    series = {}
    for rec in manifest["samples"]:
        sdir = root / rec["dir"]
        label = f"{rec['kind']}_{rec['index']:03d}"
        if not (sdir / "trajectory.csv").exists():
            continue
        tr = read_trajectory(sdir / "trajectory.csv")
        trajs.setdefault(rec["kind"], []).append(tr)
        written.append(plot_trajectory(tr, out / f"trajectory_{label}.png", title=f"{label} ({rec['status']})"))
        if rec.get("status") != "ok":
            continue
        windows = rec["windows"]
        series[label] = ([w["t_center"] for w in windows], [w["events"] for w in windows])
        frames = sorted((sdir / "frames").glob("frame_*.pgm"))
        picks = [frames[int(round(f * (len(frames) - 1)))] for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
        written.append(plot_frames([read_pgm(p) for p in picks], [p.stem for p in picks], out / f"frames_{label}.png"))
        accs = [plt.imread(sdir / "accumulated" / f"acc_{i}.png") for i in range(len(windows))]
        written.append(plot_frames(accs, [f"t={w['t_center']:.2f}s n={w['events']}" for w in windows], out / f"events_{label}.png"))
        flows = sorted((sdir / "flow").glob("flow_*.flo"))
        if flows:
            fpicks = [flows[int(round(f * (len(flows) - 1)))] for f in (0.0, 0.5, 1.0)]
            fields = [read_flo(p) for p in fpicks]
            written.append(plot_frames([flow_color_encode(u, v) for u, v in fields], [p.stem for p in fpicks], out / f"flow_{label}.png"))
            written.append(plot_flow(*fields[1], out / f"quiver_{label}.png", title=fpicks[1].stem))
    if trajs:
        written.append(plot_envelopes(trajs, out / "envelopes.png"))
        written.append(plot_ground_track(trajs, out / "ground_track.png"))
    if series:
        written.append(plot_event_counts(series, out / "event_counts.png"))
    return written
