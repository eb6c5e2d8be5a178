"""Container format for a coded GoPC.

Layout (little-endian)::

    "HPCG" | version u8 | bitdepth u8 | T u16 | flags u8 | asset sha256 (32)
    | parameter stream length u32
    | per frame: scale count u8 | coarse count u32 | bit-packed coarse coords
                 | occupancy stream lengths, LEB128 varints, scale L-1..0 x stage 1..8
    | parameter stream | occupancy streams (frame, scale L-1..0, stage 1..8)

The lengths in the header must account for every byte of the file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .arith import CorruptStreamError

__all__ = [
    "MAGIC",
    "VERSION",
    "FLAG_SMC",
    "FLAG_PPN",
    "AssetMismatchError",
    "FrameHeader",
    "StreamHeader",
    "Bitstream",
    "write_bitstream",
    "read_bitstream",
    "pack_coords",
    "unpack_coords",
]

MAGIC = b"HPCG"
VERSION = 1
FLAG_SMC = 0x01
FLAG_PPN = 0x02
_FIXED = struct.Struct("<4sBBHB32sI")


class AssetMismatchError(ValueError):
    """The stream was produced with different pretrained assets."""


@dataclass(frozen=True)
class FrameHeader:
    """``lengths[s][j]``: byte length of stage ``j + 1`` at the ``s``-th coded scale,
    counting scales from the coarsest (``L - 1``) down to 0."""

    coarse: np.ndarray
    lengths: tuple

    @property
    def n_scales(self) -> int:
        return len(self.lengths)


@dataclass(frozen=True)
class StreamHeader:
    bitdepth: int
    smc: bool
    ppn: bool
    asset_checksum: bytes
    frames: tuple = field(default_factory=tuple)

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def flags(self) -> int:
        return (FLAG_SMC if self.smc else 0) | (FLAG_PPN if self.ppn else 0)


@dataclass(frozen=True)
class Bitstream:
    header: StreamHeader
    param_stream: bytes
    occupancy: tuple  # [frame][scale L-1..0][stage 0..7] -> bytes
    header_bytes: int = 0  # filled in by read_bitstream


def _varint(n: int) -> bytes:
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _read_varint(data: bytes, o: int) -> tuple:
    n, shift = 0, 0
    while True:
        if o >= len(data):
            raise CorruptStreamError("header truncated inside a length field")
        byte = data[o]
        o += 1
        n |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return n, o
        shift += 7
        if shift > 35:
            raise CorruptStreamError(f"malformed length field at byte {o}")


def pack_coords(coords: np.ndarray, bits: int) -> bytes:
    coords = np.asarray(coords, dtype=np.int64).reshape(-1)
    if bits == 0:
        return b""
    shifts = np.arange(bits - 1, -1, -1)
    return np.packbits(((coords[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)).tobytes()


def unpack_coords(data: bytes, count: int, bits: int) -> np.ndarray:
    if bits == 0:
        return np.zeros((count, 3), dtype=np.int64)
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=3 * count * bits)
    weights = 1 << np.arange(bits - 1, -1, -1)
    return (raw.reshape(-1, bits).astype(np.int64) @ weights).reshape(count, 3)


def _packed_size(count: int, bits: int) -> int:
    return (3 * count * bits + 7) // 8


def write_bitstream(header: StreamHeader, param_stream: bytes, occupancy) -> bytes:
    if len(header.asset_checksum) != 32:
        raise ValueError("asset checksum must be 32 bytes")
    if len(occupancy) != header.T:
        raise ValueError("one occupancy list per frame expected")
    out = bytearray(
        _FIXED.pack(MAGIC, VERSION, header.bitdepth, header.T, header.flags, header.asset_checksum, len(param_stream))
    )
    for frame, streams in zip(header.frames, occupancy):
        coarse = np.asarray(frame.coarse, dtype=np.int64)
        if len(streams) != frame.n_scales or any(len(s) != 8 for s in streams):
            raise ValueError("occupancy streams do not match the frame header")
        out += struct.pack("<BI", frame.n_scales, len(coarse))
        out += pack_coords(coarse, header.bitdepth - frame.n_scales)
        for scale in streams:
            for stream in scale:
                out += _varint(len(stream))
    out += param_stream
    for streams in occupancy:
        for scale in streams:
            for stream in scale:
                out += stream
    return bytes(out)


def read_bitstream(data: bytes, expected_checksum: bytes | None = None) -> Bitstream:
    data = bytes(data)
    if len(data) < _FIXED.size:
        raise CorruptStreamError("file too short for a header")
    magic, version, bitdepth, T, flags, checksum, n_param = _FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptStreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptStreamError(f"unsupported version {version}")
    if flags & ~(FLAG_SMC | FLAG_PPN):
        raise CorruptStreamError(f"unknown flags 0x{flags:02x}")
    if expected_checksum is not None and checksum != expected_checksum:
        raise AssetMismatchError("stream was encoded with different pretrained assets")
    o = _FIXED.size
    frames, all_lengths = [], []
    for f in range(T):
        if o + 5 > len(data):
            raise CorruptStreamError(f"header truncated at frame {f}")
        n_scales, count = struct.unpack_from("<BI", data, o)
        o += 5
        bits = bitdepth - n_scales
        if bits < 0 or count == 0:
            raise CorruptStreamError(f"invalid coarse scale description for frame {f}")
        size = _packed_size(count, bits)
        if o + size > len(data):
            raise CorruptStreamError(f"coarse coordinates truncated at frame {f}")
        coarse = unpack_coords(data[o : o + size], count, bits)
        o += size
        lengths = []
        for _ in range(n_scales):
            row = []
            for _ in range(8):
                n, o = _read_varint(data, o)
                row.append(n)
            lengths.append(tuple(row))
        frames.append(FrameHeader(coarse, tuple(lengths)))
        all_lengths.append(lengths)
    header_bytes = o
    total = header_bytes + n_param + sum(n for fl in all_lengths for row in fl for n in row)
    if total != len(data):
        raise CorruptStreamError(f"header accounts for {total} bytes but the file has {len(data)}")
    param_stream = data[o : o + n_param]
    o += n_param
    occupancy = []
    for lengths in all_lengths:
        scales = []
        for row in lengths:
            stages = []
            for n in row:
                stages.append(data[o : o + n])
                o += n
            scales.append(tuple(stages))
        occupancy.append(tuple(scales))
    header = StreamHeader(bitdepth, bool(flags & FLAG_SMC), bool(flags & FLAG_PPN), checksum, tuple(frames))
    return Bitstream(header, param_stream, tuple(occupancy), header_bytes)
