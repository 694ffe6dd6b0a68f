import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lunarevents.emulator import EventStream
from lunarevents.formats import (
    TRAJECTORY_COLUMNS,
    FormatError,
    dumps_json,
    read_events,
    read_events_bin,
    read_events_csv,
    read_flo,
    read_pgm,
    read_poses,
    read_ppm,
    read_trajectory,
    write_events,
    write_events_bin,
    write_events_csv,
    write_flo,
    write_pgm,
    write_png,
    write_poses,
    write_ppm,
    write_trajectory,
)
from lunarevents.scenario import PoseSequence
from lunarevents.trajopt import OptimalTrajectory


def random_trajectory(N, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 12.3, N + 1)
    return OptimalTrajectory(t, rng.normal(size=(N + 1, 13)) * 1e3, rng.uniform(-1, 1, (N + 1, 4)),
                             rng.uniform(-1, 1, (N, 4)), objective=1.25, diagnostics={"converged": True, "max_defect": 1e-9})


def random_stream(n, W=300, H=200, seed=0):
    rng = np.random.default_rng(seed)
    s = EventStream(np.sort(rng.integers(0, 2**40, n)), rng.integers(0, W, n), rng.integers(0, H, n),
                    rng.choice([-1, 1], n), W, H)
    return s.sorted()


def test_trajectory_round_trip(tmp_path):
    tr = random_trajectory(5)
    p = tmp_path / "traj.csv"
    write_trajectory(p, tr)
    back = read_trajectory(p)
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.states, tr.states)
    np.testing.assert_array_equal(back.controls, tr.controls)
    np.testing.assert_array_equal(back.mid_controls, tr.mid_controls)
    assert back.objective == 1.25 and back.diagnostics == tr.diagnostics
    header = p.read_text().splitlines()[0]
    assert header == ",".join(TRAJECTORY_COLUMNS) and len(TRAJECTORY_COLUMNS) == 18


def test_trajectory_rows(tmp_path):
    p = tmp_path / "traj.csv"
    write_trajectory(p, random_trajectory(2), meta=False)
    assert len(p.read_text().splitlines()) == 1 + 3


def test_trajectory_short_row_names_row(tmp_path):
    p = tmp_path / "traj.csv"
    write_trajectory(p, random_trajectory(3), meta=False)
    lines = p.read_text().splitlines()
    lines[3] = ",".join(lines[3].split(",")[:17])
    p.write_text("\n".join(lines) + "\n")
    # rows are counted as file lines, header included
    with pytest.raises(FormatError, match="row 4 has 17 columns"):
        read_trajectory(p)


def test_trajectory_bad_header(tmp_path):
    p = tmp_path / "traj.csv"
    write_trajectory(p, random_trajectory(3), meta=False)
    p.write_text(p.read_text().replace("theta", "pitch", 1))
    with pytest.raises(FormatError):
        read_trajectory(p)


def test_poses_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    table = np.column_stack([np.arange(7) / 100, rng.normal(size=(7, 13))])
    p = tmp_path / "poses.csv"
    write_poses(p, PoseSequence.from_table(table))
    np.testing.assert_array_equal(read_poses(p).as_table(), table)


def test_flo_layout(tmp_path):
    p = tmp_path / "zero.flo"
    write_flo(p, np.zeros((2, 2)), np.zeros((2, 2)))
    raw = p.read_bytes()
    # 12-byte header (magic, width, height) plus 2 x 2 pixels x 2 float32
    assert len(raw) == 12 + 2 * 2 * 8
    assert struct.unpack("<f", raw[:4])[0] == 202021.25
    assert raw[:4] == b"PIEH"
    assert struct.unpack("<ii", raw[4:12]) == (2, 2)


def test_flo_round_trip_and_mask(tmp_path):
    rng = np.random.default_rng(2)
    u = rng.normal(size=(5, 7)).astype(np.float32)
    v = rng.normal(size=(5, 7)).astype(np.float32)
    u[1, 2] = np.nan
    p = tmp_path / "f.flo"
    write_flo(p, u, v)
    ru, rv = read_flo(p)
    ok = np.isfinite(u)
    np.testing.assert_array_equal(ru[ok], u[ok])
    np.testing.assert_array_equal(rv[ok], v[ok])
    assert ru[1, 2] == 0 and rv[1, 2] == 0
    mask = read_pgm(tmp_path / "f.flo.mask.pgm")
    np.testing.assert_array_equal(mask == 255, ok)


def test_flo_truncated(tmp_path):
    p = tmp_path / "f.flo"
    write_flo(p, np.zeros((3, 3)), np.zeros((3, 3)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_flo(p)


def test_pgm_layout(tmp_path):
    p = tmp_path / "a.pgm"
    img = np.array([[0, 1], [254, 255]], np.uint8)
    write_pgm(p, img)
    assert p.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 1, 254, 255])
    np.testing.assert_array_equal(read_pgm(p), img)


def test_pgm_maxval_rejected(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        read_pgm(p)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_netpbm_round_trip(tmp_path_factory, W, H, seed):
    d = tmp_path_factory.mktemp("pbm")
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (H, W), dtype=np.uint8)
    rgb = rng.integers(0, 256, (H, W, 3), dtype=np.uint8)
    write_pgm(d / "a.pgm", img)
    write_ppm(d / "a.ppm", rgb)
    np.testing.assert_array_equal(read_pgm(d / "a.pgm"), img)
    np.testing.assert_array_equal(read_ppm(d / "a.ppm"), rgb)


def test_png_deterministic(tmp_path):
    rgb = np.random.default_rng(3).integers(0, 256, (20, 30, 3), dtype=np.uint8)
    write_png(tmp_path / "a.png", rgb)
    write_png(tmp_path / "b.png", rgb)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_events_binary_size_and_round_trip(tmp_path):
    s = random_stream(1000)
    p = tmp_path / "e.bin"
    write_events_bin(p, s)
    raw = p.read_bytes()
    assert len(raw) == 16 + 13000
    assert raw[:4] == b"EVLD"
    assert struct.unpack("<HH", raw[8:12]) == (300, 200)
    assert read_events_bin(p).equals(s)


def test_events_csv_binary_agree(tmp_path):
    s = random_stream(200, seed=4)
    write_events_csv(tmp_path / "e.csv", s)
    write_events(tmp_path / "e.bin", s)
    a = read_events_csv(tmp_path / "e.csv")
    b = read_events(tmp_path / "e.bin")
    assert a.equals(b) and a.equals(s)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert "t_us,x,y,p" in lines[:2]


def test_events_unsorted_rejected(tmp_path):
    s = random_stream(50)
    bad = EventStream(s.t[::-1], s.x[::-1], s.y[::-1], s.p[::-1], s.width, s.height)
    with pytest.raises(FormatError):
        write_events_bin(tmp_path / "e.bin", bad)
    with pytest.raises(FormatError):
        write_events_csv(tmp_path / "e.csv", bad)


def test_events_truncated(tmp_path):
    p = tmp_path / "e.bin"
    write_events_bin(p, random_stream(10))
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(FormatError):
        read_events_bin(p)


def test_events_empty(tmp_path):
    s = EventStream.empty(4, 3)
    write_events_bin(tmp_path / "e.bin", s)
    assert (tmp_path / "e.bin").stat().st_size == 16
    assert read_events_bin(tmp_path / "e.bin").equals(s)


def test_json_canonical():
    a = dumps_json({"b": 1, "a": [1.5, float("nan")], "c": np.int64(3)})
    assert a == dumps_json({"c": 3, "a": [1.5, float("nan")], "b": 1})
    assert json.loads(a) == {"a": [1.5, None], "b": 1, "c": 3}
