"""Ablation drivers: subwindow-length sweep, rank comparison, extractor
comparison. All runs in a mode share the same streams, split, and seed so
rows differ only in the ablated knob.
"""

from __future__ import annotations

import copy
import logging
from typing import Optional, Sequence

from ttpc.errors import ConfigError
from ttpc.events.stream import EventStream, WindowConfig
from ttpc.events.windows import stream_to_clips
from ttpc.harness.train import TrainConfig, evaluate, split_streams, train
from ttpc.model import ModelConfig, build_model, report_complexity

logger = logging.getLogger(__name__)

ABLATE_MODES = ("subwindow-sweep", "rank-compare", "extractor-compare")


def _clips_for(streams, window_cfg, seed):
    clips = []
    for s in streams:
        clips.extend(stream_to_clips(s, window_cfg, master_seed=seed))
    return clips


def _run_once(streams_train, streams_test, window_cfg, model_cfg, train_cfg):
    train_clips = _clips_for(streams_train, window_cfg, train_cfg.seed)
    test_clips = _clips_for(streams_test, window_cfg, train_cfg.seed + 1)
    model = build_model(model_cfg, seed=train_cfg.seed)
    history = train(model, train_clips, test_clips, train_cfg)
    window_acc, voted_acc = evaluate(model, test_clips)
    best_voted = max(m.voted_acc for m in history if m.voted_acc == m.voted_acc)
    report = report_complexity(model)
    return {
        "params": report["params_total"],
        "flops": report["flops_forward"],
        "window_acc": window_acc,
        "voted_acc": voted_acc,
        "best_voted_acc": max(best_voted, voted_acc),
        "final_loss": history[-1].loss,
        "epochs_run": len(history),
    }


def ablate(
    mode: str,
    streams: Sequence[EventStream],
    window_cfg: WindowConfig,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    test_fraction: float = 0.3,
) -> list[dict]:
    """Train one model per setting of the ablated knob; returns table rows."""
    if mode not in ABLATE_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; pick from {ABLATE_MODES}")
    streams_train, streams_test = split_streams(streams, test_fraction, train_cfg.seed)
    rows = []
    if mode == "subwindow-sweep":
        length = window_cfg.window_len_us
        for sub_len in (0, length // 2, length // 4, length // 8):
            wc = copy.deepcopy(window_cfg)
            wc.subwindow_len_us = sub_len
            row = {"setting": "no subwindow" if sub_len == 0 else f"L_sub={sub_len}us",
                   "subwindow_len_us": sub_len}
            logger.info("subwindow-sweep: %s", row["setting"])
            row.update(_run_once(streams_train, streams_test, wc, model_cfg, train_cfg))
            rows.append(row)
    elif mode == "rank-compare":
        for rank in (0, 8, 4):
            mc = ModelConfig.from_dict({**model_cfg.to_dict(), "rank": rank})
            row = {"setting": "uncompressed" if rank == 0 else f"rank={rank}",
                   "rank": rank}
            logger.info("rank-compare: %s", row["setting"])
            row.update(_run_once(streams_train, streams_test, window_cfg, mc, train_cfg))
            rows.append(row)
    else:  # extractor-compare
        for em in ("both", "local_only", "global_only"):
            mc = ModelConfig.from_dict({**model_cfg.to_dict(), "extractor_mode": em})
            row = {"setting": em, "extractor_mode": em}
            logger.info("extractor-compare: %s", em)
            row.update(_run_once(streams_train, streams_test, window_cfg, mc, train_cfg))
            rows.append(row)
    return rows
