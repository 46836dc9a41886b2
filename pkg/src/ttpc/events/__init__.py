from ttpc.events.stream import ClipSample, Event, EventStream, WindowConfig
from ttpc.events.io import (
    load_clip,
    load_clip_archive,
    load_events,
    save_clip,
    save_clip_archive,
    write_events,
)
from ttpc.events.windows import (
    normalize_points,
    slide_windows,
    stream_to_clips,
    subwindow_quotas,
    subwindow_sample,
)
from ttpc.events.synth import MotionSpec, SynthSpec, default_actions_spec, speed_probe_spec, synth_actions

__all__ = [
    "ClipSample",
    "Event",
    "EventStream",
    "WindowConfig",
    "load_clip",
    "load_clip_archive",
    "load_events",
    "save_clip",
    "save_clip_archive",
    "write_events",
    "normalize_points",
    "slide_windows",
    "stream_to_clips",
    "subwindow_quotas",
    "subwindow_sample",
    "MotionSpec",
    "SynthSpec",
    "default_actions_spec",
    "speed_probe_spec",
    "synth_actions",
]
