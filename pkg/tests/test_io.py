import json

import numpy as np
import pytest

from perfhom.grid import TensorGrid, uniform_faces
from perfhom.io import (read_csv, read_field_dump, snapshot_indices, write_checks, write_csv, write_field_dump,
                        write_manifest)


def test_field_dump_round_trip(tmp_path):
    active = np.ones((4, 5), bool)
    active[1:3, 2] = False
    g = TensorGrid((uniform_faces(0, 1, 0.25), uniform_faces(-1, 1, 0.4)), periodic=(True, False), active=active)
    vals = np.random.default_rng(1).standard_normal((3,) + g.shape)
    vals[:, ~active] = np.nan
    p = write_field_dump(tmp_path / "f.npz", g, [0.0, 0.1, 0.2], vals, kind="micro", eps=0.0625)
    header, faces, mask, times, back = read_field_dump(p)
    assert header == dict(version=1, kind="micro", ndim=2, shape=[4, 5], periodic=[True, False], eps=0.0625,
                          snapshots=3)
    for f0, f1 in zip(g.faces, faces):
        np.testing.assert_array_equal(f0, f1)
    np.testing.assert_array_equal(mask, active)
    np.testing.assert_array_equal(times, [0.0, 0.1, 0.2])
    np.testing.assert_array_equal(back, vals)


def test_dump_snapshot_selection(tmp_path):
    g = TensorGrid((uniform_faces(0, 1, 0.5), uniform_faces(0, 1, 0.5)), periodic=(True, False))
    vals = np.arange(5 * 4, dtype=float).reshape((5, 2, 2))
    p = write_field_dump(tmp_path / "f.npz", g, np.arange(5.0), vals, snapshots=[0, 4])
    _, _, _, times, back = read_field_dump(p)
    np.testing.assert_array_equal(times, [0.0, 4.0])
    np.testing.assert_array_equal(back, vals[[0, 4]])


@pytest.mark.parametrize("n, every, expect", [(11, 5, [0, 5, 10]), (12, 5, [0, 5, 10, 11]), (3, 0, [0, 1, 2])])
def test_snapshot_indices(n, every, expect):
    assert snapshot_indices(n, every) == expect


def test_csv_formatting(tmp_path):
    p = write_csv(tmp_path / "t.csv", dict(a=[1, 2], b=[0.5, np.float64(1e-3)], c=[True, np.bool_(False)], d=["x", "y"]))
    assert p.read_text().splitlines() == [
        "a,b,c,d",
        "1,5.000000000000e-01,true,x",
        "2,1.000000000000e-03,false,y",
    ]


def test_checks_table(tmp_path):
    p = write_checks(tmp_path / "c.csv", {"mass": dict(passed=True, value=1e-12, threshold=1e-10)})
    (row,) = read_csv(p)
    assert row == dict(check="mass", passed="true", value="1.000000000000e-12", threshold="1.000000000000e-10")


def test_manifest_handles_numpy(tmp_path):
    p = write_manifest(tmp_path / "m.json", dict(a=np.float64(0.5), b=np.arange(3), c=np.int64(2)))
    assert json.loads(p.read_text()) == dict(a=0.5, b=[0, 1, 2], c=2)
