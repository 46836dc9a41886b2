"""Sliding windows and subwindow-quota point sampling.

Windows start at the stream's first event and advance by
stride = window_len - overlap; a window covers [start, start + L) and is
emitted while start + L <= t_last. A stream shorter than one window yields
a single partial window over its own [t_first, t_last] span.

Within a window, the sampler either draws all N points uniformly (the
random-sampling baseline) or partitions the window into contiguous
subwindows of length L_sub and gives each an equal quota of points, so
slow motion (few events) stays represented next to fast motion (many
events). Quotas of empty subwindows are redistributed to non-empty ones
proportionally to their event counts; all rounding uses exact integer
largest-remainder arithmetic.
"""

from __future__ import annotations

import logging
import zlib
from typing import Optional, Sequence

import numpy as np

from ttpc.errors import DataError
from ttpc.events.stream import ClipSample, EventStream, WindowConfig, WindowSlice

logger = logging.getLogger(__name__)


def slide_windows(stream: EventStream, cfg: WindowConfig) -> list[WindowSlice]:
    """Cut a stream into overlapping windows, dropping thin ones.

    Windows with fewer than cfg.min_events events are discarded. Events may
    appear in several windows when overlap > 0.
    """
    cfg.validate()
    stream.validate()
    t = stream.t
    t_first = int(t[0])
    t_last = int(t[-1])
    span = t_last - t_first
    windows: list[WindowSlice] = []

    def emit(start: int, end: int, lo: int, hi: int) -> None:
        if hi - lo >= cfg.min_events:
            windows.append(WindowSlice(
                start_us=start, end_us=end,
                t=t[lo:hi], x=stream.x[lo:hi], y=stream.y[lo:hi], p=stream.p[lo:hi],
            ))

    if span < cfg.window_len_us:
        # short stream: keep the tail as one partial window over its own span
        emit(t_first, t_last, 0, len(stream))
        return windows

    start = t_first
    while start + cfg.window_len_us <= t_last:
        end = start + cfg.window_len_us
        lo = int(np.searchsorted(t, start, side="left"))
        hi = int(np.searchsorted(t, end, side="left"))
        emit(start, end, lo, hi)
        start += cfg.stride_us
    return windows


def subwindow_quotas(num_points: int, counts: Sequence[int]) -> np.ndarray:
    """Per-subwindow sample quotas; always sums to num_points.

    Base quotas are floor(N / n_sub) with the remainder given to the
    earliest subwindows. Quotas of empty subwindows move to non-empty ones
    proportionally to event counts, rounded by largest remainder (computed
    in exact integer arithmetic, remainder ties to the lowest index).
    """
    counts = np.asarray(counts, dtype=np.int64)
    n_sub = len(counts)
    if n_sub == 0:
        raise ValueError("no subwindows")
    base, rem = divmod(num_points, n_sub)
    quotas = np.full(n_sub, base, dtype=np.int64)
    quotas[:rem] += 1

    empty = counts == 0
    pool = int(quotas[empty].sum())
    if pool == 0 or empty.all():
        return quotas
    quotas[empty] = 0
    nonempty = np.flatnonzero(~empty)
    total = int(counts[nonempty].sum())
    raw = pool * counts[nonempty]  # exact integers
    extra = raw // total
    remainders = raw % total
    leftover = pool - int(extra.sum())
    if leftover > 0:
        order = np.argsort(-remainders, kind="stable")  # ties to lowest index
        extra[order[:leftover]] += 1
    quotas[nonempty] += extra
    return quotas


def normalize_points(
    t: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    t1: int,
    tn: int,
    sensor_width: int,
    sensor_height: int,
) -> np.ndarray:
    """Map events to [0,1]^3: x/(W-1), y/(H-1), z = (t-t1)/(tn-t1).

    Polarity plays no part. A degenerate window (tn == t1) sets all z to 0
    with a warning.
    """
    if tn < t1:
        raise DataError(f"window bounds reversed: [{t1}, {tn}]")
    out = np.empty((t.shape[0], 3), dtype=np.float64)
    out[:, 0] = x / max(sensor_width - 1, 1)
    out[:, 1] = y / max(sensor_height - 1, 1)
    if tn == t1:
        logger.warning("degenerate window [%d, %d]: z set to 0", t1, tn)
        out[:, 2] = 0.0
    else:
        out[:, 2] = (t - t1) / (tn - t1)
    return out


def subwindow_sample(
    window: WindowSlice,
    cfg: WindowConfig,
    rng: np.random.Generator,
    sensor_width: int,
    sensor_height: int,
    label: Optional[int] = None,
    source_id: str = "",
) -> ClipSample:
    """Draw cfg.num_points events from a window and normalize them.

    With subwindows disabled all points come from one uniform draw over the
    window; otherwise each subwindow contributes its quota, sampled without
    replacement where it has enough events and with replacement where it
    does not. Selected indices are sorted so clip rows are in time order.
    """
    m = len(window)
    if m == 0:
        raise DataError("cannot sample an empty window")
    n = cfg.num_points
    span = window.end_us - window.start_us

    if cfg.subwindow_len_us == 0 or span == 0:
        chosen = rng.choice(m, size=n, replace=m < n)
    else:
        n_sub = -(-span // cfg.subwindow_len_us)  # ceil
        edges = window.start_us + cfg.subwindow_len_us * np.arange(1, n_sub)
        # events are time-sorted, so subwindow membership is a searchsorted
        bounds = np.concatenate([[0], np.searchsorted(window.t, edges, side="left"), [m]])
        counts = np.diff(bounds)
        quotas = subwindow_quotas(n, counts)
        parts = []
        for i in range(n_sub):
            q = int(quotas[i])
            if q == 0:
                continue
            c = int(counts[i])
            picks = rng.choice(c, size=q, replace=c < q) + bounds[i]
            parts.append(picks)
        chosen = np.concatenate(parts)
    chosen = np.sort(chosen)

    pts = normalize_points(
        window.t[chosen], window.x[chosen], window.y[chosen],
        window.start_us, window.end_us, sensor_width, sensor_height,
    )
    clip = ClipSample(
        points=pts.astype(np.float32),
        label=label,
        window_start_us=window.start_us,
        window_end_us=window.end_us,
        source_id=source_id,
    )
    clip.validate()
    return clip


def window_seed(master_seed: int, source_id: str, window_index: int) -> np.random.SeedSequence:
    """Child seed for one window; stable across processes and orderings."""
    return np.random.SeedSequence(
        [master_seed, zlib.crc32(source_id.encode("utf-8")), window_index]
    )


def stream_to_clips(
    stream: EventStream,
    cfg: WindowConfig,
    master_seed: int,
    start_fraction: float = 0.0,
) -> list[ClipSample]:
    """Window a stream and sample one clip per kept window.

    `start_fraction` trims that leading fraction of the stream's time span
    before windowing (off by default; useful for recordings whose action
    starts late). Each window draws from its own child seed, so results do
    not depend on processing order.
    """
    stream.validate()
    if start_fraction:
        if not 0.0 <= start_fraction < 1.0:
            raise DataError(f"start_fraction {start_fraction} outside [0, 1)")
        t0 = int(stream.t[0])
        cut = t0 + int((int(stream.t[-1]) - t0) * start_fraction)
        lo = int(np.searchsorted(stream.t, cut, side="left"))
        stream = EventStream(
            t=stream.t[lo:], x=stream.x[lo:], y=stream.y[lo:], p=stream.p[lo:],
            sensor_width=stream.sensor_width, sensor_height=stream.sensor_height,
            label=stream.label, source_id=stream.source_id,
        )
        if len(stream) == 0:
            return []
    clips = []
    for w_idx, window in enumerate(slide_windows(stream, cfg)):
        rng = np.random.default_rng(window_seed(master_seed, stream.source_id, w_idx))
        clips.append(subwindow_sample(
            window, cfg, rng, stream.sensor_width, stream.sensor_height,
            label=stream.label, source_id=stream.source_id,
        ))
    return clips
