"""Versioned little-endian weight files.

Layout::

    b"UPDW1"                      magic / version
    u32  config block length
    config block                  struct "<IIIIIIIIIIIdIQI":
                                  patch_size, embed_dim, depths[4], num_heads[4],
                                  window_size, mlp_ratio, num_classes, seed, in_chans
    u32  tensor count
    tensor*                       in param_shapes() order
    section*                      optional trailing sections

    tensor  := u16 name length, utf-8 name, u8 ndim, u32 dims[ndim],
               float64 values (row-major, little-endian)
    section := 4-byte tag, u32 tensor count, tensor*

The only section defined so far is ``HEAD`` holding a trained
``head.weight`` / ``head.bias`` pair, which overrides the base head on load.
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .fileio import atomic_write_bytes
from .swin import SwinConfig, SwinWeights, param_shapes

MAGIC = b"UPDW1"
HEAD_TAG = b"HEAD"
_CONFIG = struct.Struct("<IIIIIIIIIIIdIQI")


class WeightFileError(ValueError):
    pass


def _pack_config(cfg: SwinConfig) -> bytes:
    return _CONFIG.pack(
        cfg.patch_size, cfg.embed_dim, *cfg.depths, *cfg.num_heads,
        cfg.window_size, cfg.mlp_ratio, cfg.num_classes, cfg.seed, cfg.in_chans,
    )


def _unpack_config(block: bytes) -> SwinConfig:
    if len(block) != _CONFIG.size:
        raise WeightFileError(f"config block has {len(block)} bytes, expected {_CONFIG.size}")
    v = _CONFIG.unpack(block)
    return SwinConfig(
        patch_size=v[0], embed_dim=v[1], depths=v[2:6], num_heads=v[6:10],
        window_size=v[10], mlp_ratio=v[11], num_classes=v[12], seed=v[13], in_chans=v[14],
    )


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise WeightFileError("unexpected end of weight file")
    return data


def _read_tensor(buf) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(buf, 2))
    name = _read_exact(buf, n).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(buf, 1))
    shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    values = np.frombuffer(_read_exact(buf, 8 * count), dtype="<f8").astype(np.float64)
    return name, values.reshape(shape)


def encode(weights: SwinWeights, head: tuple[np.ndarray, np.ndarray] | None = None) -> bytes:
    cfg = weights.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    block = _pack_config(cfg)
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    shapes = param_shapes(cfg)
    buf.write(struct.pack("<I", len(shapes)))
    for name, _ in shapes:
        _write_tensor(buf, name, weights.params[name])
    if head is not None:
        buf.write(HEAD_TAG)
        buf.write(struct.pack("<I", 2))
        _write_tensor(buf, "head.weight", np.asarray(head[0], dtype=np.float64))
        _write_tensor(buf, "head.bias", np.asarray(head[1], dtype=np.float64))
    return buf.getvalue()


def decode(data: bytes) -> SwinWeights:
    buf = io.BytesIO(data)
    if _read_exact(buf, len(MAGIC)) != MAGIC:
        raise WeightFileError("not a UPDW1 weight file (bad magic)")
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    cfg = _unpack_config(_read_exact(buf, n))
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    expected = param_shapes(cfg)
    if count != len(expected):
        raise WeightFileError(f"file holds {count} tensors, config implies {len(expected)}")
    params = {}
    for want, _ in expected:
        name, arr = _read_tensor(buf)
        if name != want:
            raise WeightFileError(f"tensor order mismatch: got {name!r}, expected {want!r}")
        params[name] = arr

    while True:
        tag = buf.read(4)
        if not tag:
            break
        if len(tag) != 4:
            raise WeightFileError("truncated section tag")
        (count,) = struct.unpack("<I", _read_exact(buf, 4))
        tensors = dict(_read_tensor(buf) for _ in range(count))
        if tag == HEAD_TAG:
            if set(tensors) != {"head.weight", "head.bias"}:
                raise WeightFileError(f"HEAD section holds {sorted(tensors)}")
            params["head.weight"] = tensors["head.weight"]
            params["head.bias"] = tensors["head.bias"]
        # unknown sections are skipped for forward compatibility
    return SwinWeights(cfg, params)


def section_tags(data: bytes) -> list[bytes]:
    """Tags of the trailing sections, in file order."""
    buf = io.BytesIO(data)
    if _read_exact(buf, len(MAGIC)) != MAGIC:
        raise WeightFileError("not a UPDW1 weight file (bad magic)")
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    _read_exact(buf, n)
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    for _ in range(count):
        _read_tensor(buf)
    tags = []
    while tag := buf.read(4):
        tags.append(tag)
        (count,) = struct.unpack("<I", _read_exact(buf, 4))
        for _ in range(count):
            _read_tensor(buf)
    return tags


def save(weights: SwinWeights, path: str | Path, head: tuple[np.ndarray, np.ndarray] | None = None) -> None:
    atomic_write_bytes(path, encode(weights, head))


def load(path: str | Path) -> SwinWeights:
    return decode(Path(path).read_bytes())
