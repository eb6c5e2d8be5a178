import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hybrid_pcgc import datasets
from hybrid_pcgc.cli import build_parser, main
from hybrid_pcgc.io import read_ply, write_ply


@pytest.fixture
def ply_dir(tmp_path):
    d = tmp_path / "in"
    d.mkdir()
    for k, f in enumerate(datasets.gopc_sequence(2, seed=3, bitdepth=6)):
        write_ply(f, d / f"f{k:02d}.ply")
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_encode_decode_round_trip(tmp_path, tiny_assets_dir, ply_dir):
    out = tmp_path / "x.hpcg"
    report = tmp_path / "r.json"
    assert run("encode", ply_dir, "-o", out, "--assets-dir", tiny_assets_dir, "--epochs", 1, "--report", report) == 0
    rep = json.loads(report.read_text())
    assert rep["gopcs"][0]["total_bits"] == 8 * out.stat().st_size
    assert run("decode", out, "-o", tmp_path / "dec", "--assets-dir", tiny_assets_dir) == 0
    originals = sorted(ply_dir.glob("*.ply"))
    decoded = sorted((tmp_path / "dec").glob("*.ply"))
    assert len(decoded) == len(originals)
    for a, b in zip(originals, decoded):
        np.testing.assert_array_equal(read_ply(a).coords, read_ply(b, 6).coords)


def test_deterministic_outputs(tmp_path, tiny_assets_dir, ply_dir):
    for name in ("a", "b"):
        assert run("encode", ply_dir, "-o", tmp_path / f"{name}.hpcg", "--assets-dir", tiny_assets_dir, "--epochs", 2) == 0
    assert (tmp_path / "a.hpcg").read_bytes() == (tmp_path / "b.hpcg").read_bytes()


def test_gopc_size_splits_outputs(tmp_path, tiny_assets_dir, ply_dir):
    assert run("encode", ply_dir, "-o", tmp_path / "x.hpcg", "--assets-dir", tiny_assets_dir, "--epochs", 0, "--gopc-size", 1) == 0
    assert sorted(p.name for p in tmp_path.glob("*.hpcg")) == ["x_000.hpcg", "x_001.hpcg"]


def test_bench_curve(tmp_path, tiny_assets_dir):
    csv_path = tmp_path / "c.csv"
    assert run("bench", "--synthetic", "ood", "--frames", 2, "--bitdepth", 6, "--epochs", 3, "--csv", csv_path, "--assets-dir", tiny_assets_dir) == 0
    rows = list(csv.DictReader(csv_path.open()))
    times = [float(r["enc_time_s"]) for r in rows]
    bpps = [float(r["bpp"]) for r in rows]
    assert len(rows) == 4 and all(b > a for a, b in zip(times, times[1:]))
    assert bpps[-1] <= bpps[0]


def test_ablate_outputs(tmp_path, tiny_assets_dir):
    out = tmp_path / "abl"
    assert run("ablate", "--synthetic", "ood", "--frames", 1, "--bitdepth", 5, "--epochs", 2, "--out-dir", out, "--assets-dir", tiny_assets_dir) == 0
    summary = json.loads((out / "ablation.json").read_text())
    assert set(summary) == {"full", "no_smc", "no_smc_no_ppn"}
    assert summary["full"]["tb_rate_vs_full"] in (0.0, None)
    assert all((out / f"{k}.csv").exists() for k in summary)


class TestExitCodes:
    def test_usage(self, capsys):
        assert run("encode") == 2

    def test_unknown_command(self, capsys):
        assert run("frobnicate") == 2

    def test_missing_input(self, tmp_path, tiny_assets_dir):
        assert run("encode", tmp_path / "nope.ply", "-o", tmp_path / "x", "--assets-dir", tiny_assets_dir) == 2

    def test_bad_ply(self, tmp_path, tiny_assets_dir):
        p = tmp_path / "bad.ply"
        p.write_text("garbage")
        assert run("encode", p, "-o", tmp_path / "x", "--assets-dir", tiny_assets_dir) == 2

    def test_missing_assets(self, tmp_path, ply_dir):
        assert run("encode", ply_dir, "-o", tmp_path / "x", "--assets-dir", tmp_path / "none") == 3

    def test_wrong_assets(self, tmp_path, tiny_assets_dir, ply_dir):
        from conftest import make_random_assets

        out = tmp_path / "x.hpcg"
        assert run("encode", ply_dir, "-o", out, "--assets-dir", tiny_assets_dir, "--epochs", 0) == 0
        other = make_random_assets(42).save(tmp_path / "other")
        assert run("decode", out, "-o", tmp_path / "d", "--assets-dir", other) == 3

    def test_corrupt_stream(self, tmp_path, tiny_assets_dir, ply_dir):
        out = tmp_path / "x.hpcg"
        assert run("encode", ply_dir, "-o", out, "--assets-dir", tiny_assets_dir, "--epochs", 0) == 0
        out.write_bytes(out.read_bytes()[:-2])
        assert run("decode", out, "-o", tmp_path / "d", "--assets-dir", tiny_assets_dir) == 4

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("HPCG_SEED", "abc")
        assert run("encode", "-o", "x") == 2


class TestEnvironment:
    def test_env_supplies_defaults(self, monkeypatch):
        monkeypatch.setenv("HPCG_EPOCHS", "7")
        monkeypatch.setenv("HPCG_GOPC_SIZE", "4")
        monkeypatch.setenv("HPCG_NO_SMC", "1")
        args = build_parser().parse_args(["encode", "-o", "x"])
        assert (args.epochs, args.gopc_size, args.no_smc) == (7, 4, True)

    def test_flags_beat_env(self, monkeypatch):
        monkeypatch.setenv("HPCG_EPOCHS", "7")
        monkeypatch.setenv("HPCG_SEED", "5")
        args = build_parser().parse_args(["encode", "-o", "x", "--epochs", "2", "--seed", "9"])
        assert (args.epochs, args.seed) == (2, 9)

    def test_defaults(self, monkeypatch):
        for k in ("EPOCHS", "GOPC_SIZE", "SEED", "NO_SMC"):
            monkeypatch.delenv(f"HPCG_{k}", raising=False)
        args = build_parser().parse_args(["encode", "-o", "x"])
        assert args.gopc_size == 32 and args.epochs is None and not args.no_smc


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hybrid_pcgc", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "encode" in proc.stdout
