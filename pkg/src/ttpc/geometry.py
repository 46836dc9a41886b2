"""Point-cloud structuring: farthest point sampling, kNN grouping, and
assembly of per-group local feature tensors.

Clouds here are small (N <= 1024), so everything is exact brute force on
squared Euclidean distances; comparisons never take square roots, and all
ties break to the lowest point index so results are bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def farthest_point_sampling(points: np.ndarray, s: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min selection of `s` center indices from an (N, 3) cloud.

    The first pick is `start_index`; each subsequent pick maximizes the
    squared distance to the already-chosen set, ties going to the lowest
    index. Chosen points are masked out so duplicate coordinates can never
    be picked twice.
    """
    n = points.shape[0]
    if not 1 <= s <= n:
        raise ValueError(f"need 1 <= s <= {n}, got {s}")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} out of range")
    chosen = np.empty(s, dtype=np.int64)
    chosen[0] = start_index
    dist = np.sum((points - points[start_index]) ** 2, axis=1)
    dist[start_index] = -1.0
    for i in range(1, s):
        nxt = int(np.argmax(dist))  # argmax returns the first (lowest) index on ties
        chosen[i] = nxt
        cand = np.sum((points - points[nxt]) ** 2, axis=1)
        np.minimum(dist, cand, out=dist)
        dist[nxt] = -1.0
    return chosen


def knn_group(points: np.ndarray, centers: np.ndarray, k: int) -> np.ndarray:
    """Per-center neighbor indices, shape (S, k).

    Slot 0 of each row is the center itself; the remaining slots hold the
    nearest other points ordered by (squared distance, index). Stable
    argsort keeps distance ties at the lowest index.
    """
    n = points.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds cloud size {n}")
    centers = np.asarray(centers, dtype=np.int64)
    d2 = np.sum((points[centers][:, None, :] - points[None, :, :]) ** 2, axis=2)
    # pin the center to slot 0 even if another point shares its coordinates
    d2[np.arange(len(centers)), centers] = -1.0
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def gather_group_features(
    features: np.ndarray | None,
    points: np.ndarray,
    center_indices: np.ndarray,
    neighbor_indices: np.ndarray,
) -> np.ndarray:
    """Per-group tensors of neighbor features plus center-relative coordinates.

    Returns (S, K, D + 3); with `features=None` (first stage) the output is
    just the (S, K, 3) relative positions. Coordinates are constants for
    gradient purposes; use `scatter_feature_grad` for the feature path.
    """
    rel = points[neighbor_indices] - points[center_indices][:, None, :]
    if features is None or features.shape[-1] == 0:
        return rel
    return np.concatenate([features[neighbor_indices], rel], axis=-1)


def scatter_feature_grad(
    d_grouped: np.ndarray, neighbor_indices: np.ndarray, num_points: int, d_feat: int
) -> np.ndarray:
    """Accumulate grouped-tensor gradients back onto the (N, D) feature array.

    Only the first D channels of the grouped gradient flow back; the
    relative-coordinate channels are constants.
    """
    d_features = np.zeros((num_points, d_feat), dtype=d_grouped.dtype)
    if d_feat:
        np.add.at(d_features, neighbor_indices.reshape(-1),
                  d_grouped[..., :d_feat].reshape(-1, d_feat))
    return d_features
