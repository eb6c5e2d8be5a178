"""Frozen bitstream fixture: guards the on-disk format and the coding path."""

import importlib.util

import numpy as np

from conftest import FIXTURES
from hybrid_pcgc.assets import ModelAssets
from hybrid_pcgc.cli import main
from hybrid_pcgc.io import read_ply
from hybrid_pcgc.pipeline import decode_gopc, encode_gopc

_spec = importlib.util.spec_from_file_location("make_golden", FIXTURES / "make_golden.py")
make_golden = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(make_golden)


def golden_clouds():
    return [read_ply(FIXTURES / f"golden_frame_{k}.ply", 6) for k in range(2)]


def test_golden_decodes_to_golden_cloud():
    assets = ModelAssets.load(FIXTURES / "golden_assets")
    frames = decode_gopc((FIXTURES / "golden.hpcg").read_bytes(), assets).frames
    for got, want in zip(frames, golden_clouds(), strict=True):
        np.testing.assert_array_equal(got.coords, want.coords)


def test_reencode_is_byte_identical():
    assets = ModelAssets.load(FIXTURES / "golden_assets")
    data = encode_gopc(golden_clouds(), assets, make_golden.CFG).data
    assert data == (FIXTURES / "golden.hpcg").read_bytes()


def test_fixture_inputs_are_reproducible():
    assets = make_golden.golden_assets()
    assert assets.checksum == ModelAssets.load(FIXTURES / "golden_assets").checksum
    for a, b in zip(make_golden.golden_frames(), golden_clouds(), strict=True):
        np.testing.assert_array_equal(a.coords, b.coords)


def test_cli_decodes_golden(tmp_path):
    assert main(["decode", str(FIXTURES / "golden.hpcg"), "-o", str(tmp_path), "--assets-dir", str(FIXTURES / "golden_assets")]) == 0
    for k, want in enumerate(golden_clouds()):
        np.testing.assert_array_equal(read_ply(tmp_path / f"frame_{k:04d}.ply", 6).coords, want.coords)
