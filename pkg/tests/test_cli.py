import numpy as np
import pytest

from lunarevents.cli import EXIT_NOT_CONVERGED, EXIT_OK, EXIT_USAGE, main
from lunarevents.formats import read_events, read_flo, write_trajectory
from lunarevents.trajopt import OptimalTrajectory


def straight_trajectory(path, r0, v, tf=2.0, N=10):
    """Constant-velocity, fixed-attitude trajectory written as a CSV stage artifact."""
    t = np.linspace(0.0, tf, N + 1)
    X = np.zeros((N + 1, 13))
    X[:, 0:3] = np.asarray(r0, float) + np.outer(t, v)
    X[:, 3:6] = v
    X[:, 12] = 1000.0
    write_trajectory(path, OptimalTrajectory(t, X, np.zeros((N + 1, 4)), np.zeros((N, 4))))
    return path


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert main(["solve", "--config", "desk", "--scenario", "descent", "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out / "trajectory.csv"


def test_solve_same_seed_identical(solved, tmp_path):
    assert main(["solve", "--config", "desk", "--scenario", "descent", "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "trajectory.csv").read_bytes() == solved.read_bytes()


def test_bad_config_exit_1(tmp_path, capsys):
    rc = main(["solve", "--config", str(tmp_path / "nope.yaml"), "--scenario", "descent", "--out", str(tmp_path)])
    assert rc == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_unknown_scenario_exit_1(tmp_path):
    assert main(["solve", "--config", "desk", "--scenario", "orbit", "--out", str(tmp_path)]) == EXIT_USAGE


def test_bad_flag_exit_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["render", "--noise", "maybe", "--trajectory", "x.csv"])
    assert e.value.code == EXIT_USAGE


def test_missing_trajectory_exit_1(tmp_path):
    assert main(["render", "--trajectory", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_USAGE


def test_infeasible_exit_2(tmp_path):
    cfg = tmp_path / "short.yaml"
    cfg.write_text("scenarios:\n  descent:\n    tf: 0.3\n")
    rc = main(["solve", "--config", str(cfg), "--scenario", "descent", "--out", str(tmp_path)])
    assert rc == EXIT_NOT_CONVERGED
    assert (tmp_path / "trajectory.csv").exists()


def test_render_count_and_resolution(solved, tmp_path):
    rc = main(["render", "--config", "desk", "--trajectory", str(solved), "--width", "64", "--height", "64",
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    frames = sorted((tmp_path / "frames").glob("frame_*.pgm"))
    assert len(frames) == 201
    for f in (frames[0], frames[-1]):
        assert f.read_bytes().startswith(b"P5\n64 64\n255\n")


def test_render_deterministic(tmp_path):
    traj = straight_trajectory(tmp_path / "t.csv", [0, 0, -50.0], [1.0, 0.0, 0.5], tf=0.1)
    args = ["render", "--config", "desk", "--scenario", "descent", "--trajectory", str(traj), "--width", "32",
            "--height", "32"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a = sorted((tmp_path / "a" / "frames").iterdir())
    b = sorted((tmp_path / "b" / "frames").iterdir())
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]


def test_zero_velocity_flow_is_zero(tmp_path):
    traj = straight_trajectory(tmp_path / "t.csv", [0, 0, -100.0], [0.0, 0.0, 0.0], tf=0.2)
    rc = main(["flow", "--config", "desk", "--scenario", "descent", "--trajectory", str(traj), "--width", "32",
               "--height", "32", "--stride", "5", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    files = sorted((tmp_path / "flow").glob("flow_*.flo"))
    assert len(files) == 5
    for f in files:
        u, v = read_flo(f)
        assert not u.any() and not v.any()


def test_planar_and_spherical_differ_at_altitude(tmp_path):
    traj = straight_trajectory(tmp_path / "t.csv", [0, 0, -20000.0], [300.0, 0.0, 50.0], tf=0.1)
    fields = {}
    for model in ("planar", "spherical"):
        rc = main(["flow", "--config", "desk", "--scenario", "descent", "--trajectory", str(traj), "--width", "32",
                   "--height", "32", "--surface-model", model, "--out", str(tmp_path / model)])
        assert rc == EXIT_OK
        fields[model] = read_flo(tmp_path / model / "flow" / "flow_00000.flo")
    du = fields["planar"][0] - fields["spherical"][0]
    dv = fields["planar"][1] - fields["spherical"][1]
    assert np.mean(np.hypot(du, dv)) > 0


def test_static_events_without_noise(tmp_path):
    traj = straight_trajectory(tmp_path / "t.csv", [0, 0, -80.0], [0.0, 0.0, 0.0], tf=0.1)
    common = ["--config", "desk", "--width", "32", "--height", "32"]
    assert main(["render", *common, "--scenario", "descent", "--trajectory", str(traj), "--out", str(tmp_path)]) == 0
    rc = main(["events", *common, "--frames", str(tmp_path / "frames"), "--noise", "off", "--csv",
               "--out", str(tmp_path / "ev")])
    assert rc == EXIT_OK
    assert len(read_events(tmp_path / "ev" / "events.bin")) == 0
    assert len(read_events(tmp_path / "ev" / "events.csv")) == 0


def test_events_seed_determinism_and_accumulate(tmp_path, capsys):
    traj = straight_trajectory(tmp_path / "t.csv", [0, 0, -60.0], [2.0, 1.0, 1.0], tf=0.1)
    common = ["--config", "desk", "--width", "32", "--height", "32"]
    assert main(["render", *common, "--scenario", "descent", "--trajectory", str(traj), "--out", str(tmp_path)]) == 0
    for d in ("a", "b"):
        rc = main(["events", *common, "--seed", "5", "--frames", str(tmp_path / "frames"), "--csv",
                   "--out", str(tmp_path / d)])
        assert rc == EXIT_OK
    a, b = tmp_path / "a" / "events.csv", tmp_path / "b" / "events.csv"
    assert a.read_bytes() == b.read_bytes()
    assert len(read_events(tmp_path / "a" / "events.bin")) > 0

    capsys.readouterr()
    assert main(["accumulate", "--events", str(tmp_path / "a" / "events.bin"), "--out", str(tmp_path / "acc")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all("window=0.01s" in ln for ln in lines)
    assert len(list((tmp_path / "acc" / "accumulated").glob("acc_*.npy"))) == 5
