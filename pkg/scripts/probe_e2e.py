"""Probe the end-to-end synthetic acceptance run (criterion-6 parameters)."""
import logging
import sys
import time

import numpy as np

sys.path.insert(0, "src")
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

from ttpc.events.stream import WindowConfig
from ttpc.events.synth import default_actions_spec, synth_actions
from ttpc.events.windows import stream_to_clips
from ttpc.harness.train import TrainConfig, split_streams, train
from ttpc.model import build_model, reference_config

SEED = 0
t0 = time.perf_counter()
spec = default_actions_spec(streams_per_class=70)
streams = synth_actions(spec, seed=SEED)
train_streams, test_streams = split_streams(streams, test_fraction=80 / 280, seed=SEED)
print(f"streams: {len(train_streams)} train / {len(test_streams)} test", flush=True)

wcfg = WindowConfig(window_len_us=500_000, overlap_us=250_000,
                    subwindow_len_us=125_000, num_points=1024, min_events=32)
train_clips, test_clips = [], []
for s in train_streams:
    train_clips.extend(stream_to_clips(s, wcfg, master_seed=SEED))
for s in test_streams:
    test_clips.extend(stream_to_clips(s, wcfg, master_seed=SEED + 1))
print(f"clips: {len(train_clips)} train / {len(test_clips)} test "
      f"({time.perf_counter() - t0:.0f}s)", flush=True)

model = build_model(reference_config(num_classes=4, rank=8), seed=SEED)
tcfg = TrainConfig(batch_size=16, epochs=50, lr0=0.1, momentum=0.9, seed=SEED,
                   eval_every=1, target_acc=0.95)
history = train(model, train_clips, test_clips, tcfg, out_dir="/tmp/e2e_probe")
for m in history:
    print(f"epoch {m.epoch}: lr {m.lr:.4f} loss {m.loss:.4f} "
          f"window {m.window_acc:.4f} voted {m.voted_acc:.4f} ({m.seconds:.0f}s)")
print(f"TOTAL {time.perf_counter() - t0:.0f}s best voted "
      f"{max(m.voted_acc for m in history):.4f}")
