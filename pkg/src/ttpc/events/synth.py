"""Synthetic event-stream generator: desk-scale labeled action sets.

Each class is a parametric motion traced by an emitter across the sensor;
the instantaneous event rate is proportional to the emitter's speed, which
reproduces the real DVS density skew (fast motion floods the stream, slow
motion barely registers). Streams are deterministic functions of
(spec, seed, class, stream index).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ttpc.errors import ConfigError
from ttpc.events.stream import EventStream

_STEP_US = 2_000  # simulation step; events get uniform timestamps inside a step

_KINDS = ("sweep", "circle", "zigzag", "blob")
FULL_FRAME = (0.05, 0.05, 0.95, 0.95)


@dataclass
class MotionSpec:
    """One action class as a sequence of equal-duration motion segments.

    Each segment has a speed multiplier, a motion kind ("sweep", "circle",
    "zigzag", "blob"), and a normalized frame region; single values
    broadcast over all segments. The emitter retraces its segment's path
    from start to finish within that segment, and the event rate follows
    the segment speed, so (1.0, 5.0) means a slow half followed by a 5x
    faster, 5x denser half.
    """

    name: str
    kind: str | tuple[str, ...] = "sweep"
    speeds: tuple[float, ...] = (1.0,)
    region: tuple = FULL_FRAME

    def segments(self) -> list[tuple[float, str, tuple[float, float, float, float]]]:
        n = len(self.speeds)
        kinds = (self.kind,) * n if isinstance(self.kind, str) else tuple(self.kind)
        regions = (
            (self.region,) * n
            if not isinstance(self.region[0], (tuple, list))
            else tuple(self.region)
        )
        if len(kinds) != n or len(regions) != n:
            raise ConfigError(f"{self.name}: kinds/regions do not match speeds")
        return list(zip(self.speeds, kinds, regions))

    def validate(self) -> None:
        if not self.speeds or any(s <= 0 for s in self.speeds):
            raise ConfigError("speeds must be positive")
        for _, kind, region in self.segments():
            if kind not in _KINDS:
                raise ConfigError(f"unknown motion kind {kind!r}")
            x0, y0, x1, y1 = region
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise ConfigError(f"bad region {region}")


@dataclass
class SynthSpec:
    classes: list[MotionSpec] = field(default_factory=list)
    sensor_width: int = 128
    sensor_height: int = 128
    duration_us: int = 1_050_000
    streams_per_class: int = 50
    base_rate_hz: float = 8_000.0  # events per second at unit speed
    jitter_px: float = 1.5

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ConfigError("need at least 2 classes")
        if self.duration_us <= 0:
            raise ConfigError("duration must be positive")
        if self.streams_per_class < 1:
            raise ConfigError("streams_per_class must be >= 1")
        if self.base_rate_hz <= 0:
            raise ConfigError("base_rate_hz must be positive")
        for cls in self.classes:
            cls.validate()


def _trajectory(kind: str, q: np.ndarray, phase: float, wobble: float) -> np.ndarray:
    """Emitter path over segment progress q in [0, 1]; (len(q), 2) in [0, 1]^2."""
    if kind == "sweep":
        x = q
        y = np.full_like(q, 0.3 + 0.4 * phase) + wobble * np.sin(2 * np.pi * (q + phase))
    elif kind == "circle":
        ang = 2 * np.pi * (q + phase)
        x = 0.5 + 0.38 * np.cos(ang)
        y = 0.5 + 0.38 * np.sin(ang)
    elif kind == "zigzag":
        x = q
        tri = np.abs(((q * 4 + phase) % 1.0) * 2 - 1)
        y = 0.2 + 0.6 * tri
    elif kind == "blob":
        ang = 2 * np.pi * ((q * 0.25 + phase) % 1.0)
        r = 0.05 + 0.4 * q
        x = 0.5 + r * np.cos(ang)
        y = 0.5 + r * np.sin(ang)
    else:  # pragma: no cover - validated upstream
        raise ConfigError(f"unknown motion kind {kind!r}")
    return np.clip(np.stack([x, y], axis=1), 0.0, 1.0)


def _synth_stream(
    spec: SynthSpec, cls: MotionSpec, label: int, index: int,
    rng: np.random.Generator,
) -> EventStream:
    segments = cls.segments()
    n_seg = len(segments)
    n_steps = max(n_seg, spec.duration_us // _STEP_US)
    step_s = _STEP_US / 1e6
    seg_of_step = np.minimum((np.arange(n_steps) * n_seg) // n_steps, n_seg - 1)
    speeds = np.asarray([s for s, _, _ in segments])[seg_of_step]

    counts = rng.poisson(spec.base_rate_hz * speeds * step_s)
    total = int(counts.sum())
    if total == 0:
        counts[0] = 1  # degenerate spec; keep the stream non-empty
        total = 1

    step_idx = np.repeat(np.arange(n_steps), counts)
    frac = rng.uniform(0.0, 1.0, total)
    t = ((step_idx + frac) * _STEP_US).astype(np.int64)

    # progress within each segment: fraction of the segment's steps elapsed
    seg_idx = seg_of_step[step_idx]
    seg_starts = np.searchsorted(seg_of_step, np.arange(n_seg), side="left")
    seg_lens = np.diff(np.concatenate([seg_starts, [n_steps]]))
    q = (step_idx - seg_starts[seg_idx] + frac) / seg_lens[seg_idx]

    phase = float(rng.uniform(0.0, 1.0))
    wobble = float(rng.uniform(0.0, 0.04))
    px = np.empty(total)
    py = np.empty(total)
    for j, (_, kind, region) in enumerate(segments):
        mask = seg_idx == j
        if not mask.any():
            continue
        path = _trajectory(kind, q[mask], phase, wobble)
        x0, y0, x1, y1 = region
        px[mask] = (x0 + path[:, 0] * (x1 - x0)) * (spec.sensor_width - 1)
        py[mask] = (y0 + path[:, 1] * (y1 - y0)) * (spec.sensor_height - 1)
    px = px + rng.normal(0.0, spec.jitter_px, total)
    py = py + rng.normal(0.0, spec.jitter_px, total)

    order = np.argsort(t, kind="stable")
    stream = EventStream(
        t=t[order],
        x=np.clip(np.rint(px[order]), 0, spec.sensor_width - 1).astype(np.int32),
        y=np.clip(np.rint(py[order]), 0, spec.sensor_height - 1).astype(np.int32),
        p=rng.integers(0, 2, total, dtype=np.uint8)[order],
        sensor_width=spec.sensor_width,
        sensor_height=spec.sensor_height,
        label=label,
        source_id=f"{cls.name}-{index:03d}",
    )
    stream.validate()
    return stream


def synth_actions(spec: SynthSpec, seed: int) -> list[EventStream]:
    """Generate streams_per_class labeled streams for every class.

    Each stream draws from its own child seed of (seed, class, index), so
    the output is reproducible stream by stream regardless of order.
    """
    spec.validate()
    streams = []
    for label, cls in enumerate(spec.classes):
        for i in range(spec.streams_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, i]))
            streams.append(_synth_stream(spec, cls, label, i, rng))
    return streams


def default_actions_spec(streams_per_class: int = 50) -> SynthSpec:
    """Four geometrically distinct constant-speed actions."""
    return SynthSpec(
        classes=[
            MotionSpec("sweep", kind="sweep"),
            MotionSpec("circle", kind="circle"),
            MotionSpec("zigzag", kind="zigzag"),
            MotionSpec("blob", kind="blob"),
        ],
        streams_per_class=streams_per_class,
    )


def speed_probe_spec(streams_per_class: int = 15, fast_speed: float = 20.0) -> SynthSpec:
    """Classes that differ only during a slow, event-sparse phase.

    The fast second half of every stream is the same full-frame circle
    (label-free carrier motion); the class signal is a slow sweep confined
    to one quadrant in the first half. Uniform sampling starves the
    informative phase; subwindow quotas keep it represented.
    """
    quadrants = [
        (0.02, 0.02, 0.44, 0.44),
        (0.56, 0.02, 0.98, 0.44),
        (0.02, 0.56, 0.44, 0.98),
        (0.56, 0.56, 0.98, 0.98),
    ]
    classes = [
        MotionSpec(
            f"probe{i}",
            kind=("sweep", "circle"),
            speeds=(1.0, fast_speed),
            region=(q, FULL_FRAME),
        )
        for i, q in enumerate(quadrants)
    ]
    return SynthSpec(
        classes=classes,
        streams_per_class=streams_per_class,
        base_rate_hz=2_000.0,
        duration_us=500_000,
    )
