"""Tensor-train representation of weight matrices.

A linear layer's weight W (in_dim x out_dim) is reshaped into a 2d-way
tensor by splitting the row index into factors o_1..o_d and the column
index into factors p_1..p_d (most-significant factor first on both sides).
The tensor is stored as a chain of four-way cores, core m shaped
(r_{m-1}, o_m, p_m, r_m) with r_0 = r_d = 1 and a uniform interior rank.

`tt_forward` evaluates X @ W + bias without materializing W, contracting
one core at a time strictly left to right; the fixed schedule makes both
the output bits and the FLOP count reproducible. `tt_backward` replays the
same schedule in reverse for exact gradients. `reconstruct_dense` builds
the dense W and serves as the independent oracle for both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ttpc.errors import ConfigError

# Factor tables for the supported layer widths. Entries are chosen so the
# factor product equals the width (the published table has two entries whose
# products do not match their keys; those are corrected here).
_FACTOR_TABLE: dict[int, tuple[int, ...]] = {
    16: (2, 2, 2, 2),
    32: (4, 2, 2, 2),
    64: (4, 4, 2, 2),
    128: (4, 4, 4, 2),
    256: (4, 4, 4, 4),
    512: (8, 4, 4, 4),
    1024: (8, 8, 4, 4),
}

MAX_PLANNABLE_DIM = 2048
MIN_PLANNABLE_DIM = 16


def is_plannable(dim: int) -> bool:
    """Whether `dim` can be factorized for a TT layer (power of two in [16, 2048])."""
    return (
        MIN_PLANNABLE_DIM <= dim <= MAX_PLANNABLE_DIM
        and dim & (dim - 1) == 0
    )


def plan_factorization(dim: int) -> tuple[int, ...]:
    """Factorize a layer width into a length-4 tuple of descending factors <= 8.

    Tabulated widths return their table entry; other powers of two in range
    are factored greedily. Raises ConfigError for widths that cannot back a
    TT layer (caller falls back to a dense layer).
    """
    if not is_plannable(dim):
        raise ConfigError(
            f"width {dim} is not TT-plannable (need a power of two in "
            f"[{MIN_PLANNABLE_DIM}, {MAX_PLANNABLE_DIM}])"
        )
    if dim in _FACTOR_TABLE:
        return _FACTOR_TABLE[dim]
    factors = []
    remaining = dim
    for slots_left in range(4, 0, -1):
        f = 8
        # leave the rest expressible by at most slots_left-1 factors of <= 8
        while f > 1 and (remaining // f) > 8 ** (slots_left - 1):
            f //= 2
        while remaining % f:
            f //= 2
        factors.append(f)
        remaining //= f
    if remaining != 1:
        raise ConfigError(f"could not factorize width {dim}")
    return tuple(factors)


@dataclass(frozen=True)
class FactorPlan:
    """Paired factorizations of a layer's input and output widths.

    o_factors split the input dimension, p_factors the output dimension;
    both have the same length d (the tensor order).
    """

    o_factors: tuple[int, ...]
    p_factors: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.o_factors) != len(self.p_factors):
            raise ConfigError("factor lists must have equal length")
        if any(f < 1 for f in self.o_factors + self.p_factors):
            raise ConfigError("factors must be positive")

    @property
    def order(self) -> int:
        return len(self.o_factors)

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.o_factors))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.p_factors))


def make_plan(in_dim: int, out_dim: int) -> FactorPlan:
    """Plan a TT layer for a (possibly rectangular) weight matrix.

    Each dimension is factorized independently; if the factor lists differ
    in length the shorter is padded with trailing 1-factors (mathematically
    neutral).
    """
    o = list(plan_factorization(in_dim))
    p = list(plan_factorization(out_dim))
    while len(o) < len(p):
        o.append(1)
    while len(p) < len(o):
        p.append(1)
    return FactorPlan(tuple(o), tuple(p))


def tt_ranks(order: int, rank: int) -> tuple[int, ...]:
    """Rank chain r_0..r_d with r_0 = r_d = 1 and uniform interior rank."""
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    return (1,) + (rank,) * (order - 1) + (1,)


def init_cores(
    plan: FactorPlan,
    rank: int,
    rng: np.random.Generator,
    dtype: np.dtype = np.float64,
) -> list[np.ndarray]:
    """Random cores whose reconstructed dense matrix has He-style variance.

    Each reconstructed entry is a sum over prod(interior ranks) paths of
    products of d core entries, so i.i.d. zero-mean cores with per-core
    variance (sigma_target^2 / prod_ranks)^(1/d) give the dense matrix
    variance sigma_target^2 = 2 / in_dim.
    """
    d = plan.order
    ranks = tt_ranks(d, rank)
    interior = 1
    for r in ranks[1:-1]:
        interior *= r
    sigma_target_sq = 2.0 / plan.in_dim
    sigma_core = (sigma_target_sq / interior) ** (1.0 / (2 * d))
    cores = []
    for m in range(d):
        shape = (ranks[m], plan.o_factors[m], plan.p_factors[m], ranks[m + 1])
        cores.append((rng.standard_normal(shape) * sigma_core).astype(dtype))
    return cores


def core_plan(cores: Sequence[np.ndarray]) -> FactorPlan:
    """Recover the FactorPlan implied by a core chain's shapes."""
    return FactorPlan(
        tuple(int(c.shape[1]) for c in cores),
        tuple(int(c.shape[2]) for c in cores),
    )


def validate_cores(cores: Sequence[np.ndarray]) -> None:
    if not cores:
        raise ConfigError("empty core chain")
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        raise ConfigError("boundary ranks must be 1")
    for a, b in zip(cores, cores[1:]):
        if a.shape[-1] != b.shape[0]:
            raise ConfigError(
                f"rank mismatch between cores: {a.shape} -> {b.shape}"
            )


def _interleave_perm(d: int) -> list[int]:
    # (o1,p1,...,od,pd) axis order -> (o1..od, p1..pd)
    return list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))


def reconstruct_dense_cached(cores: Sequence[np.ndarray]):
    """Dense weight plus the partial chain products needed for its gradient."""
    validate_cores(cores)
    plan = core_plan(cores)
    d = plan.order
    # Chain the cores over the rank index, accumulating (o_m, p_m) pairs in
    # interleaved order, then unshuffle into (o_1..o_d, p_1..p_d).
    acc = cores[0].reshape(-1, cores[0].shape[-1])  # (o1*p1, r1)
    partials = [acc]
    for core in cores[1:]:
        r_prev = core.shape[0]
        acc = (acc @ core.reshape(r_prev, -1)).reshape(-1, core.shape[-1])
        partials.append(acc)
    interleaved = []
    for m in range(d):
        interleaved.extend((plan.o_factors[m], plan.p_factors[m]))
    w = np.ascontiguousarray(
        acc.reshape(interleaved).transpose(_interleave_perm(d))
    ).reshape(plan.in_dim, plan.out_dim)
    return w, (plan, partials)


def reconstruct_dense(cores: Sequence[np.ndarray]) -> np.ndarray:
    """Materialize the dense weight matrix held by a core chain.

    Row index is the mixed-radix encoding of (o_1..o_d) and column index of
    (p_1..p_d), most-significant factor first. This is the oracle that
    `tt_forward` is tested against.
    """
    return reconstruct_dense_cached(cores)[0]


def reconstruct_backward(cores: Sequence[np.ndarray], cache, dW: np.ndarray):
    """Core gradients for W = reconstruct_dense(cores), given dL/dW.

    Cheap relative to any matmul that uses W: every step is a GEMM of core
    size. Together with a dense product this gives a fast exact gradient
    path for TT layers without running the elementwise contraction.
    """
    plan, partials = cache
    d = plan.order
    interleaved = []
    for m in range(d):
        interleaved.extend((plan.o_factors[m], plan.p_factors[m]))
    inv_perm = np.argsort(_interleave_perm(d))
    d_acc = np.ascontiguousarray(
        dW.reshape(plan.o_factors + plan.p_factors).transpose(inv_perm)
    ).reshape(partials[-1].shape)
    d_cores: list[np.ndarray] = [None] * d  # type: ignore[list-item]
    for m in range(d - 1, 0, -1):
        r_prev, o_m, p_m, r_m = cores[m].shape
        prev = partials[m - 1]  # (P_{m-1}, r_prev)
        d_flat = d_acc.reshape(prev.shape[0], o_m * p_m * r_m)
        d_cores[m] = (prev.T @ d_flat).reshape(cores[m].shape)
        d_acc = (d_flat @ cores[m].reshape(r_prev, -1).T)
    d_cores[0] = d_acc.reshape(cores[0].shape)
    return d_cores


def _forward_steps(cores: Sequence[np.ndarray], X: np.ndarray, keep_inputs: bool):
    """Shared left-to-right contraction; optionally records matmul operands."""
    plan = core_plan(cores)
    d = plan.order
    batch = X.shape[0]
    t = X.reshape((batch,) + plan.o_factors + (1,))
    inputs = [] if keep_inputs else None
    for m in range(d):
        o_m = plan.o_factors[m]
        p_m = plan.p_factors[m]
        r_prev, r_next = cores[m].shape[0], cores[m].shape[-1]
        # t: (batch, p_1..p_m-1, o_m, o_m+1..o_d, r_prev)
        t = np.moveaxis(t, 1 + m, -2)
        lead_shape = t.shape[:-2]
        a = np.ascontiguousarray(t).reshape(-1, o_m * r_prev)
        c = np.ascontiguousarray(
            cores[m].transpose(1, 0, 2, 3)
        ).reshape(o_m * r_prev, p_m * r_next)
        if keep_inputs:
            inputs.append((a, c, lead_shape))
        t = (a @ c).reshape(lead_shape + (p_m, r_next))
        t = np.moveaxis(t, -2, 1 + m)
    y = t.reshape(batch, plan.out_dim)
    return y, inputs


def tt_forward(
    cores: Sequence[np.ndarray],
    X: np.ndarray,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Y = X @ W + bias for the TT-compressed W, shape (batch, out_dim)."""
    plan = core_plan(cores)
    if X.ndim != 2 or X.shape[1] != plan.in_dim:
        raise ValueError(
            f"input shape {X.shape} incompatible with plan in_dim {plan.in_dim}"
        )
    y, _ = _forward_steps(cores, X, keep_inputs=False)
    if bias is not None:
        if bias.shape != (plan.out_dim,):
            raise ValueError(f"bias shape {bias.shape} != ({plan.out_dim},)")
        y = y + bias
    return y


def tt_forward_cached(cores: Sequence[np.ndarray], X: np.ndarray, bias=None):
    """Forward pass that also returns the cache needed by `tt_backward`."""
    plan = core_plan(cores)
    if X.ndim != 2 or X.shape[1] != plan.in_dim:
        raise ValueError(
            f"input shape {X.shape} incompatible with plan in_dim {plan.in_dim}"
        )
    y, inputs = _forward_steps(cores, X, keep_inputs=True)
    if bias is not None:
        y = y + bias
    return y, (plan, X.shape[0], inputs)


def tt_backward(cores: Sequence[np.ndarray], cache, dY: np.ndarray):
    """Gradients of tt_forward: (dX, dCores, dBias).

    Replays the recorded left-to-right schedule in reverse, so the gradient
    bits are as deterministic as the forward bits.
    """
    plan, batch, inputs = cache
    d = plan.order
    if dY.shape != (batch, plan.out_dim):
        raise ValueError(f"dY shape {dY.shape} != ({batch}, {plan.out_dim})")
    d_bias = dY.sum(axis=0)
    d_cores: list[np.ndarray] = [None] * d  # type: ignore[list-item]
    dt = dY.reshape((batch,) + plan.p_factors + (1,))
    for m in range(d - 1, -1, -1):
        o_m = plan.o_factors[m]
        p_m = plan.p_factors[m]
        r_prev, r_next = cores[m].shape[0], cores[m].shape[-1]
        a, c, lead_shape = inputs[m]
        dt = np.moveaxis(dt, 1 + m, -2)
        dd = np.ascontiguousarray(dt).reshape(-1, p_m * r_next)
        da = dd @ c.T
        dc = a.T @ dd
        d_cores[m] = np.ascontiguousarray(
            dc.reshape(o_m, r_prev, p_m, r_next).transpose(1, 0, 2, 3)
        )
        dt = da.reshape(lead_shape + (o_m, r_prev))
        dt = np.moveaxis(dt, -2, 1 + m)
    dX = dt.reshape(batch, plan.in_dim)
    return dX, d_cores, d_bias


def count_params(cores: Sequence[np.ndarray], with_bias: bool = False) -> int:
    """Total core entries, optionally plus out_dim for the bias vector."""
    total = sum(int(c.size) for c in cores)
    if with_bias:
        total += core_plan(cores).out_dim
    return total


def count_flops_forward(cores: Sequence[np.ndarray], batch: int) -> int:
    """Exact FLOPs of the left-to-right contraction, as 2 x multiply-adds.

    Bias addition is not included; the model profiler treats matmul work
    uniformly for dense and TT layers.
    """
    plan = core_plan(cores)
    d = plan.order
    ranks = [c.shape[0] for c in cores] + [cores[-1].shape[-1]]
    macs = 0
    for m in range(d):
        lead = batch
        for j in range(m):
            lead *= plan.p_factors[j]
        for j in range(m + 1, d):
            lead *= plan.o_factors[j]
        macs += (
            lead
            * (plan.o_factors[m] * ranks[m])
            * (plan.p_factors[m] * ranks[m + 1])
        )
    return 2 * macs


def dense_param_count(plan: FactorPlan, with_bias: bool = False) -> int:
    """Parameter count of the uncompressed twin of a planned layer."""
    total = plan.in_dim * plan.out_dim
    if with_bias:
        total += plan.out_dim
    return total
