"""Self-describing binary model files.

Layout (all integers little-endian uint32 unless noted):

    magic   b"DFSM"
    version 1
    config  length-prefixed canonical JSON (utf-8)
    tensors in declaration order, each as: ndim, dims..., raw payload

Payload dtype follows the embedded config's precision flag ("<f4" or "<f8").
Round-trips are byte-exact: save(load(f)) reproduces f bit for bit.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .network import (NetworkConfig, NetworkParams, build_network,
                      config_to_json, iter_tensors, parse_config)

MAGIC = b"DFSM"
VERSION = 1


class ModelFileError(Exception):
    """Base for malformed model files."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


def _wire_dtype(cfg: NetworkConfig) -> np.dtype:
    return np.dtype("<f4" if cfg.precision == "fp32" else "<f8")


def save_model(params: NetworkParams, cfg: NetworkConfig, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    cfg_bytes = config_to_json(cfg).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_bytes)))
    buf.write(cfg_bytes)
    wire = _wire_dtype(cfg)
    for _, _, arr in iter_tensors(cfg, params):
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        buf.write(np.ascontiguousarray(arr, dtype=wire).tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path):
    """Read a model file back; returns (params, cfg)."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
    cfg = parse_config(r.take(r.u32()).decode("utf-8"))
    wire = _wire_dtype(cfg)
    # allocate the right shapes, then overwrite every tensor from the file
    params = build_network(cfg, seed=0)
    for _, path_name, arr in iter_tensors(cfg, params):
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        if shape != arr.shape:
            raise ModelFileError(
                f"tensor {path_name}: stored shape {shape} != expected {arr.shape}")
        n = int(np.prod(shape)) if shape else 1
        payload = r.take(n * wire.itemsize)
        arr[...] = np.frombuffer(payload, dtype=wire).reshape(shape)
    if r.pos != len(r.data):
        raise ModelFileError(f"{len(r.data) - r.pos} trailing bytes after last tensor")
    return params, cfg
