"""On-disk formats for event streams and clip archives.

Text events:   header `evt-text v1 <width> <height>`, then `t_us,x,y,p` rows.
Binary events: magic EVT1, little-endian header (u16 width, u16 height,
               u64 count), then count records of (u64 t_us, u16 x, u16 y,
               u8 p, u8 pad).
Clips:         magic CLP1, header (u32 N, u32 label or 0xFFFFFFFF,
               u64 start_us, u64 end_us), then N x 3 float32 row-major.

Unsorted event files are accepted with a warning and stable-sorted by
timestamp. The clip archive is a directory of per-clip files; the source
stream id and window index live in the filename (`<source>__w<idx>.clp`).
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ttpc.errors import DataError
from ttpc.events.stream import ClipSample, EventStream, NO_LABEL

logger = logging.getLogger(__name__)

TEXT_HEADER_PREFIX = "evt-text v1"
BINARY_MAGIC = b"EVT1"
CLIP_MAGIC = b"CLP1"

_BINARY_HEADER = struct.Struct("<4sHHQ")
_BINARY_RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")]
)
_CLIP_HEADER = struct.Struct("<4sIIQQ")


def _finalize(t, x, y, p, width: int, height: int, path) -> EventStream:
    if t.shape[0] == 0:
        raise DataError(f"{path}: empty stream")
    if np.any(np.diff(t) < 0):
        logger.warning("%s: events not sorted by timestamp, stable-sorting", path)
        order = np.argsort(t, kind="stable")
        t, x, y, p = t[order], x[order], y[order], p[order]
    stream = EventStream(
        t=t.astype(np.int64),
        x=x.astype(np.int32),
        y=y.astype(np.int32),
        p=p.astype(np.uint8),
        sensor_width=width,
        sensor_height=height,
        source_id=Path(path).stem,
    )
    stream.validate()
    return stream


def _load_text(path: Path) -> EventStream:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != TEXT_HEADER_PREFIX:
            raise DataError(f"{path}: malformed header {header!r}")
        try:
            width, height = int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise DataError(f"{path}: malformed header {header!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 4:
                raise DataError(f"{path}:{lineno}: expected t_us,x,y,p")
            try:
                rows.append(tuple(int(f) for f in fields))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-integer field") from exc
    if not rows:
        raise DataError(f"{path}: empty stream")
    arr = np.asarray(rows, dtype=np.int64)
    if np.any((arr[:, 3] < 0) | (arr[:, 3] > 1)):
        raise DataError(f"{path}: polarity must be 0 or 1")
    return _finalize(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height, path)


def _load_binary(path: Path) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, width, height, count = _BINARY_HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if count == 0:
        raise DataError(f"{path}: empty stream")
    body = raw[_BINARY_HEADER.size:]
    expected = count * _BINARY_RECORD_DTYPE.itemsize
    if len(body) != expected:
        raise DataError(f"{path}: expected {expected} record bytes, got {len(body)}")
    rec = np.frombuffer(body, dtype=_BINARY_RECORD_DTYPE)
    return _finalize(
        rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], width, height, path
    )


def load_events(path, format: str = "binary") -> EventStream:
    """Read an event stream; `format` is "text" or "binary"."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    if format == "text":
        return _load_text(path)
    if format == "binary":
        return _load_binary(path)
    raise DataError(f"unknown event format {format!r}")


def write_events(path, stream: EventStream, format: str = "binary") -> None:
    stream.validate()
    path = Path(path)
    if format == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{TEXT_HEADER_PREFIX} {stream.sensor_width} {stream.sensor_height}\n")
            for i in range(len(stream)):
                fh.write(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}\n")
    elif format == "binary":
        rec = np.zeros(len(stream), dtype=_BINARY_RECORD_DTYPE)
        rec["t"] = stream.t.astype(np.uint64)
        rec["x"] = stream.x.astype(np.uint16)
        rec["y"] = stream.y.astype(np.uint16)
        rec["p"] = stream.p
        with open(path, "wb") as fh:
            fh.write(_BINARY_HEADER.pack(
                BINARY_MAGIC, stream.sensor_width, stream.sensor_height, len(stream)
            ))
            fh.write(rec.tobytes())
    else:
        raise DataError(f"unknown event format {format!r}")


def save_clip(path, clip: ClipSample) -> None:
    clip.validate()
    label = NO_LABEL if clip.label is None else int(clip.label)
    with open(path, "wb") as fh:
        fh.write(_CLIP_HEADER.pack(
            CLIP_MAGIC, clip.num_points, label,
            clip.window_start_us, clip.window_end_us,
        ))
        fh.write(np.ascontiguousarray(clip.points, dtype="<f4").tobytes())


def load_clip(path) -> ClipSample:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CLIP_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, label, start_us, end_us = _CLIP_HEADER.unpack_from(raw)
    if magic != CLIP_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    body = raw[_CLIP_HEADER.size:]
    if len(body) != n * 3 * 4:
        raise DataError(f"{path}: expected {n * 3 * 4} payload bytes, got {len(body)}")
    points = np.frombuffer(body, dtype="<f4").reshape(n, 3).copy()
    stem = path.stem
    source_id = stem.rsplit("__", 1)[0] if "__" in stem else stem
    clip = ClipSample(
        points=points,
        label=None if label == NO_LABEL else int(label),
        window_start_us=start_us,
        window_end_us=end_us,
        source_id=source_id,
    )
    clip.validate()
    return clip


def save_clip_archive(directory, clips: Iterable[ClipSample]) -> list[Path]:
    """Write clips as `<source_id>__w<idx>.clp` files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    counters: dict[str, int] = {}
    paths = []
    for clip in clips:
        idx = counters.get(clip.source_id, 0)
        counters[clip.source_id] = idx + 1
        path = directory / f"{clip.source_id}__w{idx:04d}.clp"
        save_clip(path, clip)
        paths.append(path)
    return paths


def load_clip_archive(directory, expect_points: Optional[int] = None) -> list[ClipSample]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: no such clip archive")
    clips = [load_clip(p) for p in sorted(directory.glob("*.clp"))]
    if not clips:
        raise DataError(f"{directory}: archive holds no clips")
    if expect_points is not None:
        for c in clips:
            if c.num_points != expect_points:
                raise DataError(
                    f"{directory}: clip with {c.num_points} points, expected {expect_points}"
                )
    return clips
