"""Versioned binary container for model parameters and training state.

Layout (all little-endian):
  magic `TTPT`, u32 format version,
  u32 length + canonical-JSON text block (model config, epoch, rng state),
  u32 entry count, then per entry:
    u32 name length, UTF-8 name, u8 dtype tag (0 = f32, 1 = f64),
    u32 ndim, u32 dims..., raw float payload.

Float32 models round-trip bit-exactly through the stated 32-bit payload;
float64 models keep their width via dtype tag 1 so save -> load -> forward
stays bit-identical for them too.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ttpc.errors import DataError
from ttpc.model import Model, ModelConfig, build_model

MAGIC = b"TTPT"
VERSION = 1

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {"f4": 0, "f8": 1}


def _tag_for(arr: np.ndarray) -> int:
    key = arr.dtype.str.lstrip("<>=")
    if key not in _TAG_FOR_KIND:
        raise DataError(f"unsupported checkpoint dtype {arr.dtype}")
    return _TAG_FOR_KIND[key]


def model_state(model: Model) -> dict[str, np.ndarray]:
    state = dict(model.named_parameters())
    state.update({f"bufs/{k}": v for k, v in model.named_buffers()})
    return state


def save_checkpoint(
    path,
    model: Model,
    epoch: int = 0,
    rng_state: Optional[dict] = None,
    optimizer_state: Optional[dict[str, np.ndarray]] = None,
) -> None:
    meta = {
        "config": model.config.to_dict(),
        "epoch": int(epoch),
        "rng_state": rng_state,
    }
    text = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    entries = dict(model_state(model))
    if optimizer_state:
        entries.update({f"opt/{k}": v for k, v in optimizer_state.items()})
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        fh.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.ascontiguousarray(entries[name])
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", _tag_for(arr)))
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Returns (meta dict, entries dict name -> array)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    raw = path.read_bytes()
    view = memoryview(raw)
    off = 0

    def take(n: int) -> memoryview:
        nonlocal off
        if off + n > len(raw):
            raise DataError(f"{path}: truncated checkpoint")
        chunk = view[off:off + n]
        off += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise DataError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    (tlen,) = struct.unpack("<I", take(4))
    meta = json.loads(bytes(take(tlen)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (tag,) = struct.unpack("<B", take(1))
        if tag not in _DTYPE_TAGS:
            raise DataError(f"{path}: unknown dtype tag {tag}")
        dtype = _DTYPE_TAGS[tag]
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(size * dtype.itemsize), dtype=dtype).reshape(shape)
        entries[name] = arr.copy()
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes after last entry")
    return meta, entries


def load_model(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; returns (model, meta)."""
    meta, entries = load_checkpoint(path)
    config = ModelConfig.from_dict(meta["config"])
    model = build_model(config, seed=0)
    params = {k: v for k, v in entries.items() if not k.startswith(("opt/", "bufs/"))}
    params.update({k[len("bufs/"):]: v for k, v in entries.items() if k.startswith("bufs/")})
    model.load_state(params)
    return model, meta


def optimizer_state_from(entries: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k[len("opt/"):]: v for k, v in entries.items() if k.startswith("opt/")}
