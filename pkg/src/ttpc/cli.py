"""Command-line interface.

Commands: synth, preprocess, train, eval, report, ablate. Global flags:
--config (JSON file, see ttpc.config), --seed, --out. Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from ttpc import config as cfgmod
from ttpc.checkpoint import load_model
from ttpc.errors import ConfigError, DataError
from ttpc.events.io import load_clip_archive, load_events, save_clip_archive, write_events
from ttpc.events.synth import synth_actions
from ttpc.events.windows import stream_to_clips
from ttpc.harness.ablate import ABLATE_MODES, ablate
from ttpc.harness.train import evaluate, split_streams, train
from ttpc.model import build_model, report_complexity

logger = logging.getLogger("ttpc")

# design budget the reference model is held against (millions of
# parameters / GFLOPs at one multiply-add per FLOP, batch 1)
BUDGET_PARAMS_M = 0.334
BUDGET_GMACS = 0.587

MANIFEST = "labels.csv"


def _load_raw_config(args) -> dict:
    return cfgmod.load_config_file(args.config) if args.config else {}


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> int:
    raw = _load_raw_config(args)
    spec = cfgmod.synth_spec(raw)
    streams = synth_actions(spec, seed=args.seed)
    out = _out_dir(args) / "events"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in streams:
        name = f"{s.source_id}.evt"
        write_events(out / name, s, format=args.format)
        rows.append((name, s.label, s.source_id.rsplit("-", 1)[0]))
    with open(out / MANIFEST, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "class_name"])
        writer.writerows(rows)
    print(f"wrote {len(streams)} streams ({len(spec.classes)} classes) to {out}")
    return 0


def _load_manifest_streams(events_dir: Path, fmt: str):
    manifest = events_dir / MANIFEST
    if not manifest.exists():
        raise DataError(f"{manifest}: manifest not found")
    streams = []
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            stream = load_events(events_dir / row["filename"], format=fmt)
            stream.label = int(row["label"])
            streams.append(stream)
    if not streams:
        raise DataError(f"{manifest}: empty manifest")
    return streams


def cmd_preprocess(args) -> int:
    raw = _load_raw_config(args)
    wcfg = cfgmod.window_config(raw)
    streams = _load_manifest_streams(Path(args.events), args.format)
    train_streams, test_streams = split_streams(streams, args.test_fraction, args.seed)
    out = _out_dir(args) / "clips"
    counts = {}
    for name, subset, seed in (("train", train_streams, args.seed),
                               ("test", test_streams, args.seed + 1)):
        clips = []
        for s in subset:
            clips.extend(stream_to_clips(s, wcfg, master_seed=seed,
                                         start_fraction=args.start_fraction))
        if not clips:
            raise DataError(f"no {name} clips produced; check window config")
        save_clip_archive(out / name, clips)
        counts[name] = len(clips)
    print(f"wrote {counts['train']} train / {counts['test']} test clips to {out}")
    return 0


def _load_split(clips_dir: Path):
    train_clips = load_clip_archive(clips_dir / "train")
    test_clips = load_clip_archive(clips_dir / "test")
    return train_clips, test_clips


def _num_classes(clips) -> int:
    labels = {c.label for c in clips if c.label is not None}
    if not labels:
        raise DataError("clips carry no labels")
    return max(labels) + 1


def cmd_train(args) -> int:
    raw = _load_raw_config(args)
    train_clips, test_clips = _load_split(Path(args.clips))
    n_classes = _num_classes(train_clips + test_clips)
    mcfg = cfgmod.model_config(raw, num_classes=n_classes)
    tcfg = cfgmod.train_config(raw, seed=args.seed)
    out = _out_dir(args)
    model = build_model(mcfg, seed=tcfg.seed)
    history = train(model, train_clips, test_clips, tcfg, out_dir=out)
    best = max(m.voted_acc for m in history if m.voted_acc == m.voted_acc)
    print(f"trained {len(history)} epochs; best voted accuracy {best:.4f}; "
          f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    model, meta = load_model(args.ckpt)
    clips = load_clip_archive(Path(args.clips))
    window_acc, voted_acc = evaluate(model, clips)
    streams = len({c.source_id for c in clips})
    print(f"clips {len(clips)} streams {streams} "
          f"window_acc {window_acc:.4f} voted_acc {voted_acc:.4f}")
    return 0


def cmd_report(args) -> int:
    if args.ckpt:
        model, _ = load_model(args.ckpt)
    else:
        raw = _load_raw_config(args)
        mcfg = cfgmod.model_config(raw, num_classes=args.num_classes)
        model = build_model(mcfg, seed=args.seed)
    rep = report_complexity(model, batch=args.batch)
    header = f"{'layer':<24}{'kind':>6}{'params':>10}{'dense':>10}{'ratio':>8}{'MFLOPs':>10}"
    print(header)
    print("-" * len(header))
    for e in rep["per_layer"]:
        print(f"{e['layer']:<24}{e['kind']:>6}{e['params']:>10}{e['dense_params']:>10}"
              f"{e['ratio']:>8.2f}{e['flops'] / 1e6:>10.2f}")
    print("-" * len(header))
    params_m = rep["params_total"] / 1e6
    gmacs = rep["flops_forward_macs"] / 1e9
    print(f"total params        {rep['params_total']:>10} ({params_m:.3f} M; "
          f"batch-norm {rep['params_batchnorm']})")
    print(f"dense twin params   {rep['dense_params_total']:>10} "
          f"(aggregate compression {rep['compression_ratio']:.2f}x, "
          f"best layer {rep['per_layer_max_ratio']:.1f}x)")
    print(f"forward flops       {rep['flops_forward'] / 1e9:>10.3f} G (2 per multiply-add) "
          f"| {gmacs:.3f} G (1 per multiply-add), batch {args.batch}")
    print(f"vs design budget    {BUDGET_PARAMS_M:.3f} M params -> "
          f"delta {params_m - BUDGET_PARAMS_M:+.3f} M; "
          f"{BUDGET_GMACS:.3f} GMACs -> delta {gmacs - BUDGET_GMACS:+.3f} G")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rep["per_layer"][0]))
            writer.writeheader()
            writer.writerows(rep["per_layer"])
        print(f"per-layer table written to {args.csv}")
    return 0


def cmd_ablate(args) -> int:
    raw = _load_raw_config(args)
    spec = cfgmod.synth_spec(raw)
    wcfg = cfgmod.window_config(raw)
    streams = synth_actions(spec, seed=args.seed)
    mcfg = cfgmod.model_config(raw, num_classes=len(spec.classes))
    mcfg.num_points = wcfg.num_points
    mcfg.validate()
    tcfg = cfgmod.train_config(raw, seed=args.seed)
    rows = ablate(args.mode, streams, wcfg, mcfg, tcfg)
    cols = list(rows[0])
    print(",".join(cols))
    for row in rows:
        print(",".join(_fmt(row[c]) for c in cols))
    out = _out_dir(args) / f"ablate_{args.mode}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        writer.writerows(rows)
    print(f"table written to {out}")
    return 0


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttpc",
        description="Event-camera action recognition with TT-compressed point networks",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", help="output directory (default: cwd)")

    p = sub.add_parser("synth", help="generate a labeled synthetic event dataset")
    common(p)
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="window and sample events into clip archives")
    common(p)
    p.add_argument("--events", required=True, help="directory with events + labels.csv")
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--start-fraction", type=float, default=0.0,
                   help="skip this leading fraction of each stream")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a clip archive")
    common(p)
    p.add_argument("--clips", required=True, help="directory with train/ and test/ archives")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a clip archive")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--clips", required=True, help="clip archive directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="parameter and FLOP accounting")
    common(p)
    p.add_argument("--ckpt", help="report a trained checkpoint instead of a config")
    p.add_argument("--num-classes", type=int, default=11)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--csv", help="also write the per-layer table as CSV")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ablate", help="run an ablation comparison")
    common(p)
    p.add_argument("--mode", choices=ABLATE_MODES, required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
