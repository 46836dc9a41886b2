"""Training loop, evaluation, and the stream-level train/test split.

Everything is deterministic under (seed, data, config): the epoch shuffle
draws from an epoch-derived child seed, batches run single-threaded in
order, and the best checkpoint (by voted accuracy) is written whenever the
running best improves strictly.
"""

from __future__ import annotations

import csv
import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttpc import checkpoint as ckpt
from ttpc import nn
from ttpc.errors import ConfigError, DataError
from ttpc.events.stream import ClipSample, EventStream
from ttpc.harness.optim import SGDMomentum, cosine_lr
from ttpc.model import (
    Model,
    logits_for_points,
    precompute_clip_groups,
    stack_clip_groups,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 50
    lr0: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 1
    checkpoint_path: Optional[str] = None
    target_acc: Optional[float] = None  # early stop once voted accuracy reaches this

    def validate(self) -> None:
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    loss: float
    window_acc: float
    voted_acc: float
    seconds: float

    CSV_FIELDS = ("epoch", "lr", "loss", "window_acc", "voted_acc", "seconds")

    def row(self) -> list:
        return [self.epoch, f"{self.lr:.8g}", f"{self.loss:.8g}",
                f"{self.window_acc:.6f}", f"{self.voted_acc:.6f}",
                f"{self.seconds:.3f}"]


def _clip_tensors(clips: Sequence[ClipSample], num_points: int, num_classes: int):
    if not clips:
        raise DataError("empty clip archive")
    points = np.empty((len(clips), num_points, 3), dtype=np.float32)
    labels = np.empty(len(clips), dtype=np.int64)
    for i, c in enumerate(clips):
        if c.num_points != num_points:
            raise DataError(f"clip {c.source_id} has {c.num_points} points, expected {num_points}")
        if c.label is None or not 0 <= c.label < num_classes:
            raise DataError(f"clip {c.source_id} label {c.label} outside [0, {num_classes})")
        points[i] = c.points
        labels[i] = c.label
    return points, labels


def evaluate(model: Model, clips: Sequence[ClipSample], batch_size: int = 64,
             clip_groups=None):
    """Window-level accuracy plus per-stream voted accuracy."""
    points, labels = _clip_tensors(clips, model.config.num_points,
                                   model.config.num_classes)
    logits = logits_for_points(model, points.astype(model.config.np_dtype),
                               batch_size, clip_groups)
    preds = np.argmax(logits, axis=1)
    window_acc = float(np.mean(preds == labels))

    by_stream: dict[str, list[int]] = defaultdict(list)
    for i, c in enumerate(clips):
        by_stream[c.source_id].append(i)
    probs = nn.softmax(logits)
    correct = 0
    for source_id, idxs in by_stream.items():
        votes = np.bincount(preds[idxs], minlength=model.config.num_classes)
        best = votes.max()
        tied = np.flatnonzero(votes == best)
        if len(tied) == 1:
            voted = int(tied[0])
        else:
            voted = int(tied[np.argmax(probs[idxs].sum(axis=0)[tied])])
        if voted == labels[idxs[0]]:
            correct += 1
    voted_acc = correct / len(by_stream)
    return window_acc, voted_acc


def train(
    model: Model,
    train_clips: Sequence[ClipSample],
    test_clips: Sequence[ClipSample],
    cfg: TrainConfig,
    out_dir=None,
) -> list[EpochMetrics]:
    """Run the full schedule; returns the metric history.

    Writes `metrics.csv` and the best-voted-accuracy checkpoint `best.ttpt`
    into out_dir (or cfg.checkpoint_path) when given. Stops early once
    cfg.target_acc is reached, if set.
    """
    cfg.validate()
    num_points = model.config.num_points
    num_classes = model.config.num_classes
    points, labels = _clip_tensors(train_clips, num_points, num_classes)
    n = len(train_clips)

    # grouping depends only on coordinates; compute it once per clip
    tic = time.perf_counter()
    train_groups = precompute_clip_groups(model.config, points)
    test_points, _ = _clip_tensors(test_clips, num_points, num_classes)
    test_groups = precompute_clip_groups(model.config, test_points)
    logger.info("precomputed group indices for %d+%d clips in %.1fs",
                n, len(test_clips), time.perf_counter() - tic)

    params = dict(model.named_parameters())
    opt = SGDMomentum(params, momentum=cfg.momentum)

    ckpt_path = None
    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "best.ttpt"
        metrics_path = out_dir / "metrics.csv"
    if cfg.checkpoint_path:
        ckpt_path = Path(cfg.checkpoint_path)

    history: list[EpochMetrics] = []
    best_voted = -1.0
    model_dtype = model.config.np_dtype
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            batch = points[idx].astype(model_dtype)
            target = labels[idx]
            model.zero_grads()
            logits = model.forward(batch, train=True,
                                   groups=stack_clip_groups(train_groups, idx))
            loss, dlogits, _ = nn.softmax_cross_entropy(logits, target)
            model.backward(dlogits)
            if not opt.step(dict(model.named_grads()), lr):
                logger.error("epoch %d: skipped step on non-finite gradients", epoch)
            loss_sum += loss * len(idx)
        epoch_loss = loss_sum / n

        window_acc = voted_acc = float("nan")
        is_eval_epoch = (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1
        if is_eval_epoch:
            window_acc, voted_acc = evaluate(model, test_clips,
                                             clip_groups=test_groups)
            if voted_acc > best_voted:
                best_voted = voted_acc
                if ckpt_path is not None:
                    ckpt.save_checkpoint(
                        ckpt_path, model, epoch=epoch,
                        optimizer_state=opt.velocity,
                    )
        seconds = time.perf_counter() - tic
        history.append(EpochMetrics(epoch, lr, epoch_loss, window_acc, voted_acc, seconds))
        logger.info("epoch %d lr %.4f loss %.4f window %.3f voted %.3f (%.1fs)",
                    epoch, lr, epoch_loss, window_acc, voted_acc, seconds)
        if metrics_path is not None:
            _write_metrics(metrics_path, history)
        if cfg.target_acc is not None and is_eval_epoch and voted_acc >= cfg.target_acc:
            logger.info("target voted accuracy %.3f reached at epoch %d",
                        cfg.target_acc, epoch)
            break
    return history


def _write_metrics(path, history: list[EpochMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EpochMetrics.CSV_FIELDS)
        for m in history:
            writer.writerow(m.row())


def split_streams(streams: Sequence[EventStream], test_fraction: float = 0.3,
                  seed: int = 0):
    """Stratified split by stream (never by clip, to avoid window leakage)."""
    by_label: dict[int, list[EventStream]] = defaultdict(list)
    for s in streams:
        if s.label is None:
            raise DataError(f"stream {s.source_id} has no label")
        by_label[s.label].append(s)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    train_set: list[EventStream] = []
    test_set: list[EventStream] = []
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_test = max(1, int(round(len(group) * test_fraction)))
        for j, k in enumerate(order):
            (test_set if j < n_test else train_set).append(group[k])
    return train_set, test_set
