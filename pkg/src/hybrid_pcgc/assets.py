"""Pretrained asset files: the frozen PPN and the DAR base layer.

Each file is ``"HPCA" | version u8 | kind u8 | config JSON (u32 length) |
tensor count u32 | tensors | sha256 of everything before it``. A tensor is
``name (u16 length + utf-8) | ndim u8 | dims u32... | little-endian f32 data``.
Tensors are written in declaration order so files are byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dar import DarConfig, dar_param_shapes
from .ppn import PpnConfig, ppn_param_shapes

__all__ = ["ModelAssets", "AssetFormatError", "PPN_FILE", "BASE_FILE", "save_ppn", "load_ppn"]

_MAGIC = b"HPCA"
_VERSION = 1
_KIND_PPN, _KIND_BASE = 0, 1
PPN_FILE = "ppn.hpca"
BASE_FILE = "base.hpca"


class AssetFormatError(ValueError):
    """An asset file is malformed or fails its checksum."""


def _encode(kind: int, config: dict, shapes, tensors) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode()
    out = bytearray(_MAGIC + struct.pack("<BBI", _VERSION, kind, len(cfg)) + cfg)
    out += struct.pack("<I", len(shapes))
    for name, shape in shapes:
        arr = np.asarray(tensors[name], dtype="<f4")
        if arr.shape != tuple(shape):
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
    return bytes(out) + hashlib.sha256(out).digest()


def _decode(data: bytes, kind: int, path) -> tuple:
    if len(data) < 46 or data[:4] != _MAGIC:
        raise AssetFormatError(f"{path}: not an asset file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise AssetFormatError(f"{path}: checksum mismatch")
    try:
        version, got_kind, n_cfg = struct.unpack_from("<BBI", body, 4)
        if version != _VERSION or got_kind != kind:
            raise AssetFormatError(f"{path}: unexpected version {version} or kind {got_kind}")
        o = 10
        config = json.loads(body[o : o + n_cfg])
        o += n_cfg
        (count,) = struct.unpack_from("<I", body, o)
        o += 4
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, o)
            name = body[o + 2 : o + 2 + n].decode()
            o += 2 + n
            (ndim,) = struct.unpack_from("<B", body, o)
            shape = struct.unpack_from(f"<{ndim}I", body, o + 1)
            o += 1 + 4 * ndim
            size = int(np.prod(shape)) * 4
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4, offset=o).reshape(shape).astype(np.float32)
            o += size
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        if isinstance(e, AssetFormatError):
            raise
        raise AssetFormatError(f"{path}: malformed asset file ({e})") from None
    if o != len(body):
        raise AssetFormatError(f"{path}: trailing bytes")
    return config, tensors


def save_ppn(directory, cfg: PpnConfig, params: dict) -> Path:
    """Write only the PPN file (the base layer is trained afterwards)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / PPN_FILE
    path.write_bytes(_encode(_KIND_PPN, asdict(cfg), ppn_param_shapes(cfg), params))
    return path


def load_ppn(directory) -> tuple:
    """``(PpnConfig, params)`` from ``directory/ppn.hpca``."""
    path = Path(directory) / PPN_FILE
    if not path.is_file():
        raise FileNotFoundError(f"missing asset file {path}")
    cfg, params = _decode(path.read_bytes(), _KIND_PPN, path)
    try:
        cfg = PpnConfig(**cfg)
    except (TypeError, ValueError) as e:
        raise AssetFormatError(f"{path}: bad config ({e})") from None
    return cfg, ModelAssets._checked(ppn_param_shapes(cfg), params)


@dataclass
class ModelAssets:
    """Frozen PPN weights plus DAR base-layer weights, stored as float32."""

    ppn_config: PpnConfig
    ppn_params: dict
    dar_config: DarConfig
    base_params: dict

    def __post_init__(self):
        self.ppn_params = self._checked(ppn_param_shapes(self.ppn_config), self.ppn_params)
        self.base_params = self._checked(dar_param_shapes(self.dar_config), self.base_params)

    @staticmethod
    def _checked(shapes, params) -> dict:
        out = {}
        for name, shape in shapes:
            if name not in params:
                raise ValueError(f"missing tensor {name!r}")
            arr = np.asarray(params[name], dtype=np.float32)
            if arr.shape != tuple(shape):
                raise ValueError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
            out[name] = arr
        return out

    def ppn_bytes(self) -> bytes:
        return _encode(_KIND_PPN, asdict(self.ppn_config), ppn_param_shapes(self.ppn_config), self.ppn_params)

    def base_bytes(self) -> bytes:
        return _encode(_KIND_BASE, asdict(self.dar_config), dar_param_shapes(self.dar_config), self.base_params)

    @property
    def checksum(self) -> bytes:
        """32-byte identity carried in every bitstream header."""
        return hashlib.sha256(self.ppn_bytes() + self.base_bytes()).digest()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / PPN_FILE).write_bytes(self.ppn_bytes())
        (directory / BASE_FILE).write_bytes(self.base_bytes())
        return directory

    @classmethod
    def load(cls, directory) -> "ModelAssets":
        directory = Path(directory)
        paths = directory / PPN_FILE, directory / BASE_FILE
        for p in paths:
            if not p.is_file():
                raise FileNotFoundError(f"missing asset file {p}")
        ppn_cfg, ppn = _decode(paths[0].read_bytes(), _KIND_PPN, paths[0])
        dar_cfg, base = _decode(paths[1].read_bytes(), _KIND_BASE, paths[1])
        try:
            return cls(PpnConfig(**ppn_cfg), ppn, DarConfig(**dar_cfg), base)
        except (TypeError, ValueError) as e:
            raise AssetFormatError(f"{directory}: inconsistent asset contents ({e})") from None
