"""Independent reference implementations used as test oracles.

Everything in here is deliberately written in the most literal way possible
(einsum formulas, Fraction arithmetic, exhaustive loops) and shares no code
with the library paths it checks.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations

import numpy as np

_EINSUM_LETTERS = "abcdefgh"
_MODE_LETTERS_O = "ijkl"
_MODE_LETTERS_P = "vwxy"


def dense_from_cores_einsum(cores) -> np.ndarray:
    """Dense weight via a single einsum over all cores (order <= 4)."""
    d = len(cores)
    assert d <= 4
    terms = []
    for m in range(d):
        terms.append(
            _EINSUM_LETTERS[m]
            + _MODE_LETTERS_O[m]
            + _MODE_LETTERS_P[m]
            + _EINSUM_LETTERS[m + 1]
        )
    out = _MODE_LETTERS_O[:d] + _MODE_LETTERS_P[:d]
    spec = ",".join(terms) + "->" + out
    w = np.einsum(spec, *cores)
    in_dim = int(np.prod([c.shape[1] for c in cores]))
    out_dim = int(np.prod([c.shape[2] for c in cores]))
    return w.reshape(in_dim, out_dim)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_err(analytic: np.ndarray, reference: np.ndarray) -> float:
    """Max absolute deviation normalized by the largest reference magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(float(np.max(np.abs(reference))), 1e-12)
    return float(np.max(np.abs(analytic - reference))) / scale


def grad_close(analytic, reference, tol: float, zero_floor: float = 1e-7) -> bool:
    """Relative gradient agreement with a floor for structurally-zero grads.

    A bias feeding straight into batch norm has a true gradient of exactly
    zero; both the analytic result and the finite-difference estimate are
    then pure noise, so anything below `zero_floor` on both sides counts as
    agreement.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = max(float(np.max(np.abs(reference))), float(np.max(np.abs(analytic))))
    if denom < zero_floor:
        return True
    return float(np.max(np.abs(analytic - reference))) / denom <= tol


def quota_oracle(num_points: int, counts) -> list[int]:
    """Brute-force subwindow quotas with exact Fraction arithmetic.

    Base quotas are floor(N / n_sub) with the remainder handed to the
    earliest subwindows; quotas of empty subwindows are pooled and
    redistributed over non-empty ones proportionally to their event counts
    with largest-remainder rounding (ties to the lowest index).
    """
    n_sub = len(counts)
    base = num_points // n_sub
    rem = num_points % n_sub
    quotas = [base + (1 if i < rem else 0) for i in range(n_sub)]
    pool = sum(q for q, c in zip(quotas, counts) if c == 0)
    if pool == 0:
        return quotas
    nonempty = [i for i, c in enumerate(counts) if c > 0]
    if not nonempty:
        return quotas
    for i in range(n_sub):
        if counts[i] == 0:
            quotas[i] = 0
    total = sum(counts[i] for i in nonempty)
    shares = {i: Fraction(pool * counts[i], total) for i in nonempty}
    floors = {i: shares[i].numerator // shares[i].denominator for i in nonempty}
    leftover = pool - sum(floors.values())
    order = sorted(nonempty, key=lambda i: (-(shares[i] - floors[i]), i))
    for i in nonempty:
        quotas[i] += floors[i]
    for i in order[:leftover]:
        quotas[i] += 1
    return quotas


def brute_force_fps(points: np.ndarray, s: int, start_index: int = 0) -> list[int]:
    """Literal greedy max-min selection with explicit loops."""
    n = points.shape[0]
    chosen = [start_index]
    for _ in range(s - 1):
        best_idx = -1
        best_dist = -1.0
        for i in range(n):
            if i in chosen:
                continue
            d = min(float(np.sum((points[i] - points[j]) ** 2)) for j in chosen)
            if d > best_dist:
                best_dist = d
                best_idx = i
        chosen.append(best_idx)
    return chosen


def brute_force_knn(points: np.ndarray, center: int, k: int) -> list[int]:
    """Center pinned first, then the nearest others by (squared dist, index)."""
    n = points.shape[0]
    others = [i for i in range(n) if i != center]
    keyed = sorted(
        others, key=lambda i: (float(np.sum((points[i] - points[center]) ** 2)), i)
    )
    return [center] + keyed[: k - 1]


def min_pairwise_dist_sq(points: np.ndarray, indices) -> float:
    best = np.inf
    for a, b in combinations(indices, 2):
        best = min(best, float(np.sum((points[a] - points[b]) ** 2)))
    return best
