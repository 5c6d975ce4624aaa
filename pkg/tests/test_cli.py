from __future__ import annotations

import csv

import numpy as np
import pytest

from lidarcodec import synthetic
from lidarcodec.cli import main
from lidarcodec.pointcloud import quantize, read_ply, write_ply


@pytest.fixture
def ply(tmp_path):
    path = tmp_path / "frame.ply"
    write_ply(synthetic.scan_frame(3, points_per_ring=64), path)
    return path


def rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_encode_decode_round_trip(tmp_path, ply, capsys):
    out, back = tmp_path / "f.ldrc", tmp_path / "back.ply"
    assert main(["encode", "--input", str(ply), "--output", str(out), "--bit-depth", "12",
                 "--csv", str(tmp_path / "lv.csv")]) == 0
    assert "bpp" in capsys.readouterr().out
    assert main(["decode", "--input", str(out), "--output", str(back), "--binary"]) == 0
    a = quantize(read_ply(ply), 12)
    b = quantize(read_ply(back), 12, a.origin, a.step)
    assert np.array_equal(a.coords, b.coords)
    table = rows(tmp_path / "lv.csv")
    assert table[0] == ["level", "parents", "network", "index_bytes", "stage1_bits", "stage2_bits",
                        "chunk_bytes", "bits_per_parent"]
    assert [int(r[0]) for r in table[1:]] == list(range(2, 12))


def test_pipelined_flag_gives_same_bytes(tmp_path, ply):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["encode", "--input", str(ply), "--output", str(a)])
    main(["encode", "--input", str(ply), "--output", str(b), "--pipelined"])
    assert a.read_bytes() == b.read_bytes()


def test_exit_codes(tmp_path, ply):
    assert main(["encode", "--input", str(ply), "--output", str(tmp_path / "x"), "--bit-depth", "25"]) == 2
    assert main(["encode", "--input", str(ply), "--output", str(tmp_path / "x"), "--model", "nope.ldrm"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["decode", "--input", str(ply), "--output", str(tmp_path / "y.ply")]) == 1
    assert main(["encode", "--input", str(tmp_path / "missing.ply"), "--output", str(tmp_path / "x")]) == 1
    assert main(["encode", "--input", str(ply), "--output", str(tmp_path / "x"),
                 "--origin", "0", "0", "0", "--step", "0.001"]) == 1


def test_train_writes_model_and_loss_csv(tmp_path, capsys):
    data = tmp_path / "data"
    data.mkdir()
    for s in range(2):
        write_ply(synthetic.gen_plane(300, 9, seed=s), data / f"p{s}.ply")
    args = ["train", "--data", str(data), "--bit-depth", "9", "--steps", "4", "--dim", "4",
            "--pool", "1", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a.ldrm")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.ldrm")]) == 0
    assert (tmp_path / "a.ldrm").read_bytes() == (tmp_path / "b.ldrm").read_bytes()
    loss = rows(tmp_path / "a.loss.csv")
    assert loss[0] == ["step", "lr", "bpp"] and len(loss) == 5
    # the trained file works as an encode model
    ply = data / "p0.ply"
    assert main(["encode", "--input", str(ply), "--output", str(tmp_path / "e"), "--bit-depth", "9",
                 "--model", str(tmp_path / "a.ldrm")]) == 0
    assert main(["decode", "--input", str(tmp_path / "e"), "--output", str(tmp_path / "d.ply"),
                 "--model", str(tmp_path / "a.ldrm")]) == 0
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["train", "--data", str(empty), "--out", str(tmp_path / "c")]) == 2


def test_stats(tmp_path, ply):
    out, pp = tmp_path / "s.csv", tmp_path / "pp.csv"
    assert main(["stats", "--input", str(ply), "--window", "2", "--levels", "4", "8", "--csv", str(out),
                 "--per-point-bits", "7", "--model", "baseline", "--per-point-csv", str(pp)]) == 0
    table = rows(out)
    assert table[0] == ["level", "voxels", "avg_neighbors_w2"] and len(table) == 6
    per = rows(pp)
    assert per[0] == ["x", "y", "z", "stage1_bits", "stage2_bits", "bits"]
    assert main(["stats", "--input", str(ply), "--window", "4"]) == 2
    assert main(["stats", "--input", str(ply), "--per-point-bits", "7"]) == 2


def test_stats_single_point(tmp_path, capsys):
    from lidarcodec.pointcloud import from_coords
    p = tmp_path / "one.ply"
    write_ply(from_coords([[3, 4, 5]], 8), p)
    assert main(["stats", "--input", str(p), "--bit-depth", "8", "--origin", "0", "0", "0",
                 "--step", "1", "--csv", str(tmp_path / "o.csv")]) == 0
    assert all(float(r[2]) == 0 for r in rows(tmp_path / "o.csv")[1:])


def test_bench_csv(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--points", "3000", "--runs", "2", "--frames", "2", "--bit-depth", "10",
                 "--csv", str(out)]) == 0
    table = rows(out)
    assert table[0] == ["experiment", "variant", "run", "points", "encode_s", "decode_s", "sorts", "bytes"]
    ordering = [r for r in table[1:] if r[0] == "ordering"]
    assert {r[6] for r in ordering if r[1] == "morton"} == {"1"}
    assert {r[6] for r in ordering if r[1] == "explicit"} == {str(2 * 9)}
    assert len({r[7] for r in ordering}) == 1
    assert len([r for r in table if r[0] == "pipeline"]) == 4
