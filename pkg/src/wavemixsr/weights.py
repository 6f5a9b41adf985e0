"""Binary weight files.

Layout (little-endian)::

    b"WMX2"  u32 version(=1)
    u32 stages  u32 depth  u32 embed_dim  f32 mlp_mult  f32 dropout  u8 upsample_mode
    u32 tensor_count
    per tensor: u16 name_len, name (utf-8), u8 rank, u32 dims[rank], f32 payload

Tensors appear in ``Model.named_arrays`` order. Loading validates every
name and shape against a freshly built model of the stored config, so a
successful load never yields a partially filled model.
"""

from __future__ import annotations

import io
import struct
from os import PathLike
from typing import BinaryIO

import numpy as np

from .errors import FormatError, ParameterError
from .model import UPSAMPLE_MODES, Model, ModelConfig, init_params

MAGIC = b"WMX2"
VERSION = 1
_CONFIG = struct.Struct("<IIIffB")
HEADER_SIZE = 4 + 4 + _CONFIG.size + 4


def _entry_meta_size(name: str, shape) -> int:
    return 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape)


def expected_file_size(model: Model) -> int:
    """Header + f32 payloads + per-tensor metadata (names, ranks, dims)."""
    payload = sum(4 * arr.size for _, arr in model.named_arrays())
    meta = sum(_entry_meta_size(name, arr.shape) for name, arr in model.named_arrays())
    return HEADER_SIZE + payload + meta


def dumps(model: Model) -> bytes:
    cfg = model.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blk = cfg.sr2x.block
    buf.write(
        _CONFIG.pack(
            cfg.stages,
            cfg.sr2x.depth,
            blk.embed_dim,
            blk.mlp_mult,
            blk.dropout,
            UPSAMPLE_MODES.index(cfg.sr2x.upsample_mode),
        )
    )
    arrays = list(model.named_arrays())
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def save_weights(model: Model, sink: str | PathLike | BinaryIO):
    data = dumps(model)
    if hasattr(sink, "write"):
        sink.write(data)
    else:
        with open(sink, "wb") as fh:
            fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))


def _f32_value(v: float) -> float:
    # shortest decimal that maps to the same f32, so 0.3 comes back as 0.3
    return float(str(np.float32(v)))


def loads(data: bytes) -> Model:
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a WMX2 weight file", 0)
    (version,) = r.unpack("I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    cfg_off = r.pos
    stages, depth, embed, mult, drop, mode = r.unpack(_CONFIG.format[1:], "config")
    if mode >= len(UPSAMPLE_MODES):
        raise FormatError(f"unknown upsample mode id {mode}", cfg_off + _CONFIG.size - 1)
    try:
        cfg = ModelConfig.build(
            scale=2**stages if 0 < stages < 16 else 0,
            embed_dim=embed,
            depth=depth,
            mlp_mult=_f32_value(mult),
            dropout=_f32_value(drop),
            upsample_mode=UPSAMPLE_MODES[mode],
        )
    except ParameterError as exc:
        raise FormatError(f"invalid config block: {exc}", cfg_off) from None
    model = init_params(cfg, seed=0)
    expected = list(model.named_arrays())
    count_off = r.pos
    (count,) = r.unpack("I", "tensor count")
    if count != len(expected):
        raise FormatError(f"tensor table has {count} entries, config implies {len(expected)}", count_off)
    for exp_name, dest in expected:
        off = r.pos
        (nlen,) = r.unpack("H", "name length")
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not valid utf-8", off) from None
        if name != exp_name:
            raise FormatError(f"expected tensor {exp_name!r}, found {name!r}", off)
        (rank,) = r.unpack("B", "rank")
        dims = r.unpack(f"{rank}I", "dims") if rank else ()
        if tuple(dims) != dest.shape:
            raise FormatError(f"{name}: shape {tuple(dims)} does not match expected {dest.shape}", off)
        payload = r.take(4 * dest.size, f"{name} payload")
        dest[...] = np.frombuffer(payload, dtype="<f4").reshape(dest.shape)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after tensor table", r.pos)
    return model


def load_weights(source: str | PathLike | BinaryIO) -> Model:
    if hasattr(source, "read"):
        return loads(source.read())
    with open(source, "rb") as fh:
        return loads(fh.read())
