"""Four-stage hierarchical point network with TT-compressed extractors.

Each stage picks group centers by farthest point sampling, gathers kNN
neighborhoods, runs residual blocks on the grouped tensors (local path),
max-pools over neighbors, and runs residual blocks on the pooled group
features (global path). Channel lifts between widths stay dense; the
residual-block linears are tensor trains at rank > 0 and plain dense at
rank 0, which builds the shape-identical uncompressed twin.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ttpc import geometry, nn, ttcore
from ttpc.errors import ConfigError
from ttpc.events.stream import ClipSample

EXTRACTOR_MODES = ("both", "local_only", "global_only")


@dataclass
class StageConfig:
    num_groups: int
    neighbors: int
    in_channels: int
    out_channels: int
    local_blocks: int = 1
    global_blocks: int = 1


@dataclass
class ModelConfig:
    stages: list[StageConfig]
    num_classes: int
    rank: int = 8  # 0 builds the uncompressed dense twin
    embed_channels: int = 32
    classifier_dims: list[int] = field(default_factory=lambda: [128])
    extractor_mode: str = "both"
    num_points: int = 1024
    fps_start_index: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise ConfigError("the hierarchy uses exactly four stages")
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.extractor_mode not in EXTRACTOR_MODES:
            raise ConfigError(f"extractor_mode must be one of {EXTRACTOR_MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.rank < 0:
            raise ConfigError("rank must be >= 0")
        groups = self.num_points
        chans = self.embed_channels
        for i, st in enumerate(self.stages):
            if st.num_groups > groups:
                raise ConfigError(
                    f"stage {i}: num_groups {st.num_groups} exceeds incoming {groups}"
                )
            if st.in_channels != chans:
                raise ConfigError(
                    f"stage {i}: in_channels {st.in_channels} != incoming {chans}"
                )
            if st.neighbors < 1 or st.neighbors > groups:
                raise ConfigError(f"stage {i}: bad neighbor count {st.neighbors}")
            if self.rank > 0:
                for width in (st.in_channels, st.out_channels):
                    if not ttcore.is_plannable(width):
                        raise ConfigError(
                            f"stage {i}: width {width} not TT-plannable at rank "
                            f"{self.rank}; use rank 0 or a power-of-two width"
                        )
            groups = st.num_groups
            chans = st.out_channels
        if not self.classifier_dims:
            raise ConfigError("classifier_dims must not be empty")
        if self.classifier_dims[-1] != self.num_classes:
            raise ConfigError("classifier_dims must end in num_classes")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["stages"] = [StageConfig(**s) for s in d["stages"]]
        cfg = ModelConfig(**d)
        cfg.validate()
        return cfg

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def reference_config(num_classes: int, rank: int = 8, num_points: int = 1024,
                     extractor_mode: str = "both", dtype: str = "float32") -> ModelConfig:
    """The `tt-ref-v1` architecture: 1024 points, K=24, four stages."""
    cfg = ModelConfig(
        stages=[
            StageConfig(512, 24, 32, 64),
            StageConfig(256, 24, 64, 128),
            StageConfig(128, 24, 128, 256),
            StageConfig(64, 24, 256, 256),
        ],
        num_classes=num_classes,
        rank=rank,
        embed_channels=32,
        classifier_dims=[128, num_classes],
        extractor_mode=extractor_mode,
        num_points=num_points,
        dtype=dtype,
    )
    cfg.validate()
    return cfg


def tiny_config(num_classes: int, rank: int = 4, num_points: int = 128,
                extractor_mode: str = "both", dtype: str = "float32") -> ModelConfig:
    """Small shape-compatible variant for tests and the ablation harness."""
    cfg = ModelConfig(
        stages=[
            StageConfig(64, 8, 16, 32),
            StageConfig(32, 8, 32, 32),
            StageConfig(16, 8, 32, 64),
            StageConfig(8, 8, 64, 64),
        ],
        num_classes=num_classes,
        rank=rank,
        embed_channels=16,
        classifier_dims=[32, num_classes],
        extractor_mode=extractor_mode,
        num_points=num_points,
        dtype=dtype,
    )
    cfg.validate()
    return cfg


def _res_kind(rank: int) -> str:
    return "tt" if rank > 0 else "dense"


class _Lift(nn.Layer):
    """Dense linear + BN + ReLU channel adapter."""

    def __init__(self, in_dim, out_dim, rng, dtype):
        super().__init__()
        self.linear = nn.Linear(in_dim, out_dim, rng, dtype=dtype)
        self.bn = nn.BatchNorm(out_dim, dtype=dtype)
        self.act = nn.ReLU()

    def forward(self, x, train=False, update_stats=True):
        h = self.linear.forward(x, train)
        h = self.bn.forward(h, train, update_stats)
        return self.act.forward(h)

    def backward(self, dy):
        return self.linear.backward(self.bn.backward(self.act.backward(dy)))


class Stage(nn.Layer):
    """One hierarchy stage: group -> local blocks -> pool -> global blocks."""

    def __init__(self, cfg: StageConfig, rank: int, extractor_mode: str,
                 fps_start_index: int, rng: np.random.Generator, dtype) -> None:
        super().__init__()
        self.cfg = cfg
        self.fps_start_index = fps_start_index
        kind = _res_kind(rank)
        self.local_lift = _Lift(cfg.in_channels + 3, cfg.in_channels, rng, dtype)
        n_local = cfg.local_blocks if extractor_mode in ("both", "local_only") else 0
        n_global = cfg.global_blocks if extractor_mode in ("both", "global_only") else 0
        self.local_blocks = [
            nn.ResBlock(cfg.in_channels, kind, rank, rng, dtype=dtype)
            for _ in range(n_local)
        ]
        self.pool = nn.GroupMaxPool()
        self.global_lift = _Lift(cfg.in_channels, cfg.out_channels, rng, dtype)
        self.global_blocks = [
            nn.ResBlock(cfg.out_channels, kind, rank, rng, dtype=dtype)
            for _ in range(n_global)
        ]

    def group(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """FPS centers and kNN neighbor indices for each batch element."""
        b = coords.shape[0]
        centers = np.empty((b, self.cfg.num_groups), dtype=np.int64)
        neighbors = np.empty((b, self.cfg.num_groups, self.cfg.neighbors), dtype=np.int64)
        for i in range(b):
            centers[i] = geometry.farthest_point_sampling(
                coords[i], self.cfg.num_groups, self.fps_start_index
            )
            neighbors[i] = geometry.knn_group(coords[i], centers[i], self.cfg.neighbors)
        return centers, neighbors

    def forward(self, coords, feats, train=False, update_stats=True, group=None):
        b, n, d = feats.shape
        centers, neighbors = self.group(coords) if group is None else group
        bidx = np.arange(b)[:, None, None]
        rel = coords[bidx, neighbors] - coords[np.arange(b)[:, None], centers][:, :, None, :]
        grouped = np.concatenate(
            [feats[bidx, neighbors], rel.astype(feats.dtype)], axis=-1
        )
        self._cache = (neighbors, n, d)
        x = self.local_lift.forward(grouped, train, update_stats)
        for blk in self.local_blocks:
            x = blk.forward(x, train, update_stats)
        pooled = self.pool.forward(x)
        y = self.global_lift.forward(pooled, train, update_stats)
        for blk in self.global_blocks:
            y = blk.forward(y, train, update_stats)
        new_coords = coords[np.arange(b)[:, None], centers]
        return new_coords, y

    def backward(self, dy):
        neighbors, n, d = self._cache
        for blk in reversed(self.global_blocks):
            dy = blk.backward(dy)
        dpooled = self.global_lift.backward(dy)
        dx = self.pool.backward(dpooled)
        for blk in reversed(self.local_blocks):
            dx = blk.backward(dx)
        dgrouped = self.local_lift.backward(dx)
        b = dgrouped.shape[0]
        dfeats = np.zeros((b, n, d), dtype=dgrouped.dtype)
        bidx = np.arange(b)[:, None, None]
        np.add.at(dfeats, (bidx, neighbors), dgrouped[..., :d])
        return dfeats


class Model(nn.Layer):
    """Point-cloud classifier over (B, N, 3) clips."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        config.validate()
        self.config = config
        dtype = config.np_dtype
        self.embed = _Lift(3, config.embed_channels, rng, dtype)
        self.stages = [
            Stage(st, config.rank, config.extractor_mode,
                  config.fps_start_index, rng, dtype)
            for st in config.stages
        ]
        dims = [config.stages[-1].out_channels] + list(config.classifier_dims)
        self.classifier = [
            nn.Linear(dims[i], dims[i + 1], rng, dtype=dtype)
            for i in range(len(dims) - 1)
        ]
        # small-scale head: untrained logits stay near zero, so the starting
        # loss sits at ln(num_classes)
        self.classifier[-1].params["weight"] *= dtype(0.1)
        self._cls_masks: list[np.ndarray] = []

    def forward(self, clips: np.ndarray, train: bool = False,
                update_stats: bool = True, groups=None) -> np.ndarray:
        if clips.ndim != 3 or clips.shape[2] != 3:
            raise ValueError(f"clips must be (B, N, 3), got {clips.shape}")
        if clips.shape[1] != self.config.num_points:
            raise ValueError(
                f"expected {self.config.num_points} points per clip, got {clips.shape[1]}"
            )
        dtype = self.config.np_dtype
        coords = clips.astype(dtype)
        feats = self.embed.forward(coords, train, update_stats)
        for i, stage in enumerate(self.stages):
            group = None if groups is None else groups[i]
            coords, feats = stage.forward(coords, feats, train, update_stats, group)
        # global pool over the remaining groups
        self._pre_pool_shape = feats.shape
        pooled, self._pool_idx = nn.max_pool_groups(feats[:, None, :, :])
        x = pooled[:, 0, :]
        self._cls_masks = []
        for i, lin in enumerate(self.classifier):
            x = lin.forward(x, train)
            if i < len(self.classifier) - 1:
                self._cls_masks.append(nn.relu_grad_mask(x))
                x = nn.relu(x)
        return x

    def backward(self, dlogits: np.ndarray) -> None:
        dx = dlogits
        for i in range(len(self.classifier) - 1, -1, -1):
            if i < len(self.classifier) - 1:
                dx = dx * self._cls_masks[i]
            dx = self.classifier[i].backward(dx)
        dfeats = nn.max_pool_groups_backward(
            dx[:, None, :], self._pool_idx, self._pre_pool_shape[1]
        )[:, 0, :, :]
        for stage in reversed(self.stages):
            dfeats = stage.backward(dfeats)
        # embed has no upstream consumers of its input gradient
        self.embed.backward(dfeats)


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    """Deterministic model construction: same (config, seed), same bits."""
    return Model(config, np.random.default_rng(np.random.SeedSequence([seed])))


def precompute_clip_groups(config: ModelConfig, points: np.ndarray) -> list:
    """Per-clip FPS/kNN structure for every stage.

    Grouping is a pure function of the clip coordinates (features never
    enter), so training loops compute it once per clip instead of once per
    epoch. Returns groups[clip][stage] = (centers, neighbors) as int32.
    """
    out = []
    for m in range(points.shape[0]):
        coords = points[m]
        per_stage = []
        for st in config.stages:
            centers = geometry.farthest_point_sampling(
                coords, st.num_groups, config.fps_start_index
            )
            neighbors = geometry.knn_group(coords, centers, st.neighbors)
            per_stage.append((centers.astype(np.int32), neighbors.astype(np.int32)))
            coords = coords[centers]
        out.append(per_stage)
    return out


def stack_clip_groups(clip_groups: list, indices) -> list:
    """Batch per-clip group structures into per-stage stacked index arrays."""
    n_stages = len(clip_groups[0])
    stacked = []
    for s in range(n_stages):
        centers = np.stack([clip_groups[i][s][0] for i in indices])
        neighbors = np.stack([clip_groups[i][s][1] for i in indices])
        stacked.append((centers, neighbors))
    return stacked


def logits_for_points(model: Model, points: np.ndarray, batch_size: int = 64,
                      clip_groups: Optional[list] = None) -> np.ndarray:
    """Eval-mode logits over an (M, N, 3) stack, in deterministic chunks."""
    outs = []
    for lo in range(0, points.shape[0], batch_size):
        idx = range(lo, min(lo + batch_size, points.shape[0]))
        groups = None if clip_groups is None else stack_clip_groups(clip_groups, idx)
        outs.append(model.forward(points[lo:lo + batch_size], train=False,
                                  groups=groups))
    return np.concatenate(outs, axis=0)


def predict_with_voting(model: Model, clips: Sequence[ClipSample],
                        batch_size: int = 64) -> int:
    """Majority vote over per-clip argmax predictions.

    Ties break by the highest summed softmax probability, then the lowest
    class id.
    """
    if not clips:
        raise ValueError("empty clip sequence")
    points = np.stack([c.points for c in clips]).astype(model.config.np_dtype)
    logits = logits_for_points(model, points, batch_size)
    probs = nn.softmax(logits)
    preds = np.argmax(logits, axis=1)
    votes = np.bincount(preds, minlength=model.config.num_classes)
    best = int(votes.max())
    tied = np.flatnonzero(votes == best)
    if len(tied) == 1:
        return int(tied[0])
    sums = probs.sum(axis=0)[tied]
    return int(tied[np.argmax(sums)])  # argmax ties resolve to the lowest id


# ------------------------------------------------------------------ profiling

def _layer_entries(model: Model) -> list[tuple[str, nn.Layer, int]]:
    """(name, layer, forward rows per batch element) for every linear layer."""
    cfg = model.config
    entries = [("embed", model.embed.linear, cfg.num_points)]
    for i, (st, stage) in enumerate(zip(cfg.stages, model.stages)):
        rows_local = st.num_groups * st.neighbors
        rows_global = st.num_groups
        entries.append((f"stage{i}.local_lift", stage.local_lift.linear, rows_local))
        for j, blk in enumerate(stage.local_blocks):
            entries.append((f"stage{i}.local{j}.l1", blk.l1, rows_local))
            entries.append((f"stage{i}.local{j}.l2", blk.l2, rows_local))
        entries.append((f"stage{i}.global_lift", stage.global_lift.linear, rows_global))
        for j, blk in enumerate(stage.global_blocks):
            entries.append((f"stage{i}.global{j}.l1", blk.l1, rows_global))
            entries.append((f"stage{i}.global{j}.l2", blk.l2, rows_global))
    for i, lin in enumerate(model.classifier):
        entries.append((f"classifier.{i}", lin, 1))
    return entries


def _dense_twin_count(layer: nn.Layer) -> int:
    if isinstance(layer, nn.TTLinear):
        return layer.in_dim * layer.out_dim + layer.out_dim
    return layer.param_count()


def _dense_twin_flops(layer: nn.Layer, rows: int) -> int:
    return 2 * rows * layer.in_dim * layer.out_dim


def report_complexity(model: Model, batch: int = 1) -> dict:
    """Exact parameter and FLOP accounting, against the rank-0 twin.

    FLOPs count matmul work only (as 2 x multiply-adds; `flops_macs` is the
    1-FLOP-per-MAC convention); BN/ReLU/pool bookkeeping is excluded.
    Parameters include every trainable tensor (cores, weights, biases, BN
    affine parameters).
    """
    per_layer = []
    flops = 0
    dense_flops = 0
    max_ratio = 1.0
    for name, layer, rows in _layer_entries(model):
        lf = layer.flops_forward(rows * batch)
        df = _dense_twin_flops(layer, rows * batch)
        pc = layer.param_count()
        dc = _dense_twin_count(layer)
        ratio = dc / pc
        max_ratio = max(max_ratio, ratio)
        flops += lf
        dense_flops += df
        per_layer.append({
            "layer": name,
            "kind": "tt" if isinstance(layer, nn.TTLinear) else "dense",
            "params": pc,
            "dense_params": dc,
            "ratio": ratio,
            "flops": lf,
            "dense_flops": df,
        })
    params_by_layer = {name: layer.param_count() for name, layer, _ in _layer_entries(model)}
    params_total = model.param_count()
    linear_params = sum(params_by_layer.values())
    other_params = params_total - linear_params  # batch-norm affine parameters
    dense_total = sum(e["dense_params"] for e in per_layer) + other_params
    return {
        "params_total": params_total,
        "params_by_layer": params_by_layer,
        "params_batchnorm": other_params,
        "dense_params_total": dense_total,
        "compression_ratio": dense_total / params_total,
        "per_layer_max_ratio": max_ratio,
        "flops_forward": flops,
        "flops_forward_macs": flops // 2,
        "dense_flops_forward": dense_flops,
        "per_layer": per_layer,
        "batch": batch,
    }


def densify(model: Model) -> Model:
    """Rank-0 twin whose dense weights reconstruct the TT layers exactly.

    Forward outputs agree with the source model up to matmul-order rounding;
    used by the function-preservation oracle.
    """
    cfg_dict = model.config.to_dict()
    cfg_dict["rank"] = 0
    twin = build_model(ModelConfig.from_dict(cfg_dict), seed=0)
    src_layers = dict(_walk_layers(model, ""))
    for name, layer in _walk_layers(twin, ""):
        src = src_layers[name]
        if isinstance(src, nn.TTLinear):
            layer.params["weight"][...] = src.dense_weight()
            layer.params["bias"][...] = src.params["bias"]
        else:
            for key, arr in src.params.items():
                layer.params[key][...] = arr
        for key, arr in src.buffers.items():
            layer.buffers[key][...] = arr
    return twin


def _walk_layers(layer: nn.Layer, prefix: str):
    if layer.params or layer.buffers:
        yield prefix.rstrip("."), layer
    for cname, child in layer.children():
        yield from _walk_layers(child, prefix + cname + ".")
