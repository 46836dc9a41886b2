"""Domain types for event streams and the point clouds sampled from them.

Streams are stored column-wise (numpy arrays per field) with timestamps in
microseconds as int64; a single record view is available as the `Event`
named tuple for convenience.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from ttpc.errors import ConfigError, DataError


class Event(NamedTuple):
    t_us: int
    x: int
    y: int
    polarity: int


@dataclass
class EventStream:
    """Time-ordered event records from one recording."""

    t: np.ndarray  # int64 microseconds, non-decreasing
    x: np.ndarray  # int32 pixel column
    y: np.ndarray  # int32 pixel row
    p: np.ndarray  # uint8 polarity flag
    sensor_width: int
    sensor_height: int
    label: Optional[int] = None
    source_id: str = ""

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def validate(self) -> None:
        n = len(self)
        if n == 0:
            raise DataError("empty stream")
        if not all(arr.shape == (n,) for arr in (self.x, self.y, self.p)):
            raise DataError("column length mismatch")
        if np.any(np.diff(self.t) < 0):
            raise DataError("timestamps not sorted")
        if self.t[0] < 0:
            raise DataError("negative timestamp")
        if np.any(self.x < 0) or np.any(self.x >= self.sensor_width):
            raise DataError("x coordinate out of sensor bounds")
        if np.any(self.y < 0) or np.any(self.y >= self.sensor_height):
            raise DataError("y coordinate out of sensor bounds")

    @staticmethod
    def from_records(records, sensor_width: int, sensor_height: int,
                     label: Optional[int] = None, source_id: str = "") -> "EventStream":
        """Build a stream from (t_us, x, y, p) tuples."""
        arr = np.asarray(list(records), dtype=np.int64)
        if arr.size == 0:
            arr = arr.reshape(0, 4)
        return EventStream(
            t=arr[:, 0].astype(np.int64),
            x=arr[:, 1].astype(np.int32),
            y=arr[:, 2].astype(np.int32),
            p=arr[:, 3].astype(np.uint8),
            sensor_width=sensor_width,
            sensor_height=sensor_height,
            label=label,
            source_id=source_id,
        )


@dataclass
class WindowConfig:
    """Sliding-window and sampling parameters.

    subwindow_len_us == 0 disables subwindows (plain uniform sampling of the
    whole window).
    """

    window_len_us: int = 500_000
    overlap_us: int = 250_000
    subwindow_len_us: int = 125_000
    num_points: int = 1024
    min_events: int = 32

    def validate(self) -> None:
        if self.window_len_us <= 0:
            raise ConfigError("window_len_us must be positive")
        if not 0 <= self.overlap_us < self.window_len_us:
            raise ConfigError("need 0 <= overlap_us < window_len_us")
        if self.subwindow_len_us < 0 or self.subwindow_len_us > self.window_len_us:
            raise ConfigError("need subwindow_len_us == 0 or <= window_len_us")
        if self.num_points < 1:
            raise ConfigError("num_points must be >= 1")
        if self.min_events < 1:
            raise ConfigError("min_events must be >= 1")

    @property
    def stride_us(self) -> int:
        return self.window_len_us - self.overlap_us


@dataclass
class WindowSlice:
    """One sliding window's bounds and its event subsequence (views)."""

    start_us: int
    end_us: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __len__(self) -> int:
        return int(self.t.shape[0])


NO_LABEL = 0xFFFFFFFF


@dataclass
class ClipSample:
    """Fixed-size normalized point cloud sampled from one window."""

    points: np.ndarray  # (N, 3) float32 in [0, 1]
    label: Optional[int] = None
    window_start_us: int = 0
    window_end_us: int = 0
    source_id: str = ""

    def validate(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise DataError(f"points must be (N, 3), got {self.points.shape}")
        if np.any(self.points < 0.0) or np.any(self.points > 1.0):
            raise DataError("clip coordinates outside [0, 1]")

    @property
    def num_points(self) -> int:
        return int(self.points.shape[0])
