import hashlib

import numpy as np
import pytest

from hybrid_pcgc.coding.arith import CorruptStreamError
from hybrid_pcgc.coding.bitstream import (
    AssetMismatchError,
    FrameHeader,
    StreamHeader,
    pack_coords,
    read_bitstream,
    unpack_coords,
    write_bitstream,
)

CHECKSUM = hashlib.sha256(b"assets").digest()


def sample(seed=0, T=2, bitdepth=7):
    rng = np.random.default_rng(seed)
    frames, occupancy = [], []
    for _ in range(T):
        n_scales = int(rng.integers(1, 4))
        coarse = np.unique(rng.integers(0, 1 << (bitdepth - n_scales), (5, 3)), axis=0)
        streams = [[rng.bytes(int(rng.integers(0, 300))) for _ in range(8)] for _ in range(n_scales)]
        frames.append(FrameHeader(coarse, tuple(tuple(len(s) for s in row) for row in streams)))
        occupancy.append(streams)
    header = StreamHeader(bitdepth, True, False, CHECKSUM, tuple(frames))
    return header, rng.bytes(77), occupancy


def test_round_trip():
    header, params, occ = sample()
    data = write_bitstream(header, params, occ)
    bs = read_bitstream(data, CHECKSUM)
    assert bs.param_stream == params
    assert bs.header.bitdepth == 7 and bs.header.smc and not bs.header.ppn and bs.header.T == 2
    assert [list(map(list, f)) for f in bs.occupancy] == [list(map(list, f)) for f in occ]
    for a, b in zip(bs.header.frames, header.frames):
        np.testing.assert_array_equal(a.coarse, b.coarse)
        assert a.lengths == b.lengths
    assert write_bitstream(bs.header, bs.param_stream, bs.occupancy) == data


def test_lengths_account_for_file_size():
    header, params, occ = sample(1)
    data = write_bitstream(header, params, occ)
    bs = read_bitstream(data)
    payload = len(params) + sum(len(s) for f in occ for row in f for s in row)
    assert bs.header_bytes + payload == len(data)


def test_layout_order():
    header, params, occ = sample(2)
    data = write_bitstream(header, params, occ)
    tail = params + b"".join(s for f in occ for row in f for s in row)
    assert data.endswith(tail)


def test_tampered_length():
    header, params, occ = sample(3)
    data = bytearray(write_bitstream(header, params, occ))
    data[43] ^= 0x01  # low byte of the parameter stream length
    with pytest.raises(CorruptStreamError):
        read_bitstream(bytes(data))


def test_truncated_or_padded():
    header, params, occ = sample(4)
    data = write_bitstream(header, params, occ)
    for bad in (data[:-1], data + b"\x00"):
        with pytest.raises(CorruptStreamError):
            read_bitstream(bad)


def test_bad_magic_and_version():
    header, params, occ = sample(5)
    data = write_bitstream(header, params, occ)
    with pytest.raises(CorruptStreamError):
        read_bitstream(b"XPCG" + data[4:])
    with pytest.raises(CorruptStreamError):
        read_bitstream(data[:4] + b"\x09" + data[5:])
    with pytest.raises(CorruptStreamError):
        read_bitstream(data[:10])


def test_checksum_mismatch():
    header, params, occ = sample(6)
    data = write_bitstream(header, params, occ)
    with pytest.raises(AssetMismatchError):
        read_bitstream(data, hashlib.sha256(b"other").digest())


def test_inconsistent_occupancy_rejected():
    header, params, occ = sample(7)
    with pytest.raises(ValueError):
        write_bitstream(header, params, occ[:1])


@pytest.mark.parametrize("bits", [0, 1, 5, 9])
def test_coords_packing(bits):
    rng = np.random.default_rng(bits)
    coords = rng.integers(0, 1 << bits, (13, 3))
    data = pack_coords(coords, bits)
    assert len(data) == (39 * bits + 7) // 8
    np.testing.assert_array_equal(unpack_coords(data, 13, bits), coords)
