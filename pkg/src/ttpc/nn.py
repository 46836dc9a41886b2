"""Minimal layer toolkit with hand-written exact gradients.

Every layer follows the same contract: `forward(x, train=..., ...)` caches
whatever the backward pass needs on the instance, `backward(dy)` returns
the input gradient and fills `self.grads` (keyed like `self.params`).
Composite layers collect child parameters with dotted prefixes. Nothing
here builds a graph; the model wires the chain explicitly, which keeps the
execution order (and therefore the output bits) fixed.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ttpc import ttcore
from ttpc.errors import ConfigError


class Layer:
    """Base for parameterized layers; subclasses fill params/grads dicts."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}  # non-trainable state (BN running stats)

    def children(self) -> Iterator[tuple[str, "Layer"]]:
        for name, value in vars(self).items():
            if isinstance(value, Layer):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.params.items():
            yield prefix + name, arr
        for cname, child in self.children():
            yield from child.named_parameters(prefix + cname + ".")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self.params:
            yield prefix + name, self.grads[name]
        for cname, child in self.children():
            yield from child.named_grads(prefix + cname + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.buffers.items():
            yield prefix + name, arr
        for cname, child in self.children():
            yield from child.named_buffers(prefix + cname + ".")

    def zero_grads(self) -> None:
        for name, arr in self.params.items():
            self.grads[name] = np.zeros_like(arr)
        for _, child in self.children():
            child.zero_grads()

    def param_count(self) -> int:
        return sum(int(a.size) for _, a in self.named_parameters())

    def load_state(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        for store in (self.params, self.buffers):
            for name in store:
                key = prefix + name
                src = state[key]
                if src.shape != store[name].shape:
                    raise ConfigError(
                        f"shape mismatch for {key}: {src.shape} vs {store[name].shape}"
                    )
                store[name][...] = src
        for cname, child in self.children():
            child.load_state(state, prefix + cname + ".")


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad_mask(x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is defined as 0
    return (x > 0.0).astype(x.dtype)


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        self._mask = relu_grad_mask(x)
        return relu(x)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * self._mask


class Linear(Layer):
    """Dense y = x @ W + b on the last axis; x may have any leading shape."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        scale = np.sqrt(2.0 / in_dim)
        self.params["weight"] = (rng.standard_normal((in_dim, out_dim)) * scale).astype(dtype)
        self.params["bias"] = np.zeros(out_dim, dtype=dtype)
        self.zero_grads()

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected last axis {self.in_dim}, got {x.shape}")
        self._x2d = x.reshape(-1, self.in_dim)
        self._lead = x.shape[:-1]
        y = self._x2d @ self.params["weight"] + self.params["bias"]
        return y.reshape(self._lead + (self.out_dim,))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy2d = dy.reshape(-1, self.out_dim)
        self.grads["weight"] += self._x2d.T @ dy2d
        self.grads["bias"] += dy2d.sum(axis=0)
        dx = dy2d @ self.params["weight"].T
        return dx.reshape(self._lead + (self.in_dim,))

    def flops_forward(self, rows: int) -> int:
        return 2 * rows * self.in_dim * self.out_dim


class TTLinear(Layer):
    """Linear layer whose weight lives as a tensor-train core chain.

    The default forward fuses the cores into the dense weight (a handful of
    core-sized GEMMs) and runs one matrix product, which is far faster than
    streaming the contraction at these layer widths on a CPU; gradients
    flow exactly through the fusion. `fused=False` runs the pure
    core-by-core contraction instead, which computes the same function.
    `flops_forward` reports the contraction schedule either way, since that
    is the count the compression story is about.
    """

    def __init__(self, in_dim: int, out_dim: int, rank: int,
                 rng: np.random.Generator, dtype=np.float32,
                 fused: bool = True) -> None:
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.rank = rank
        self.fused = fused
        self.plan = ttcore.make_plan(in_dim, out_dim)
        cores = ttcore.init_cores(self.plan, rank, rng, dtype=dtype)
        for m, core in enumerate(cores):
            self.params[f"core{m}"] = core
        self.params["bias"] = np.zeros(out_dim, dtype=dtype)
        self.zero_grads()

    def cores(self) -> list[np.ndarray]:
        return [self.params[f"core{m}"] for m in range(self.plan.order)]

    def dense_weight(self) -> np.ndarray:
        return ttcore.reconstruct_dense(self.cores())

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected last axis {self.in_dim}, got {x.shape}")
        self._lead = x.shape[:-1]
        x2d = x.reshape(-1, self.in_dim)
        if self.fused:
            w, rcache = ttcore.reconstruct_dense_cached(self.cores())
            y = x2d @ w + self.params["bias"]
            self._cache = (x2d, w, rcache)
        else:
            y, self._cache = ttcore.tt_forward_cached(
                self.cores(), x2d, self.params["bias"]
            )
        return y.reshape(self._lead + (self.out_dim,))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dy2d = dy.reshape(-1, self.out_dim)
        if self.fused:
            x2d, w, rcache = self._cache
            dw = x2d.T @ dy2d
            dx = dy2d @ w.T
            dcores = ttcore.reconstruct_backward(self.cores(), rcache, dw)
            dbias = dy2d.sum(axis=0)
        else:
            dx, dcores, dbias = ttcore.tt_backward(self.cores(), self._cache, dy2d)
        for m, g in enumerate(dcores):
            self.grads[f"core{m}"] += g
        self.grads["bias"] += dbias
        return dx.reshape(self._lead + (self.in_dim,))

    def flops_forward(self, rows: int) -> int:
        return ttcore.count_flops_forward(self.cores(), rows)


class BatchNorm(Layer):
    """Per-channel batch normalization over all non-channel axes.

    Train mode normalizes with batch statistics and folds them into the
    running averages with the configured momentum; eval mode applies the
    running statistics as a fixed affine map. `update_stats=False` runs
    train-mode math without committing, which keeps the map pure for
    finite-difference checks.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 dtype=np.float32) -> None:
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grads()

    @property
    def running_mean(self) -> np.ndarray:
        return self.buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self.buffers["running_var"]

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        if x.shape[-1] != self.channels:
            raise ValueError(f"expected last axis {self.channels}, got {x.shape}")
        x2d = x.reshape(-1, self.channels)
        if train:
            if x2d.shape[0] < 2:
                raise ValueError("degenerate batch: need >= 2 elements per channel")
            mean = x2d.mean(axis=0)
            var = x2d.var(axis=0)
            if update_stats:
                m = self.momentum
                rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
                rm[...] = (1 - m) * rm + m * mean
                rv[...] = (1 - m) * rv + m * var
        else:
            mean = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x2d - mean) * inv_std
        self._cache = (xhat, inv_std, train, x.shape)
        y = xhat * self.params["gamma"] + self.params["beta"]
        return y.reshape(x.shape)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std, train, shape = self._cache
        dy2d = dy.reshape(-1, self.channels)
        self.grads["gamma"] += (dy2d * xhat).sum(axis=0)
        self.grads["beta"] += dy2d.sum(axis=0)
        g = self.params["gamma"]
        if train:
            # batch statistics depend on x: full normalization gradient
            dxhat = dy2d * g
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=0)
                - xhat * (dxhat * xhat).mean(axis=0)
            )
        else:
            dx = dy2d * (g * inv_std)
        return dx.reshape(shape)


def max_pool_groups(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over the neighbor axis of a (B, S, K, D) tensor.

    Returns (pooled (B,S,D), argmax indices); ties resolve to the lowest
    neighbor index, and the gradient routes there.
    """
    if x.ndim != 4:
        raise ValueError(f"expected (B, S, K, D), got {x.shape}")
    idx = np.argmax(x, axis=2)
    pooled = np.take_along_axis(x, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return pooled, idx


def max_pool_groups_backward(dy: np.ndarray, idx: np.ndarray, k: int) -> np.ndarray:
    b, s, d = dy.shape
    dx = np.zeros((b, s, k, d), dtype=dy.dtype)
    np.put_along_axis(dx, idx[:, :, None, :], dy[:, :, None, :], axis=2)
    return dx


class GroupMaxPool(Layer):
    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        self._k = x.shape[2]
        y, self._idx = max_pool_groups(x)
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return max_pool_groups_backward(dy, self._idx, self._k)


class ResBlock(Layer):
    """Residual unit: relu(x + bn2(l2(relu(bn1(l1(x)))))).

    The two inner linears are dense or TT per `layer_kind`; channel count
    is preserved so the skip addition is well-formed.
    """

    def __init__(self, channels: int, layer_kind: str, rank: int,
                 rng: np.random.Generator, dtype=np.float32) -> None:
        super().__init__()
        if layer_kind == "tt":
            self.l1 = TTLinear(channels, channels, rank, rng, dtype=dtype)
            self.l2 = TTLinear(channels, channels, rank, rng, dtype=dtype)
        elif layer_kind == "dense":
            self.l1 = Linear(channels, channels, rng, dtype=dtype)
            self.l2 = Linear(channels, channels, rng, dtype=dtype)
        else:
            raise ConfigError(f"unknown layer kind {layer_kind!r}")
        self.bn1 = BatchNorm(channels, dtype=dtype)
        self.bn2 = BatchNorm(channels, dtype=dtype)
        # zero-init the closing gamma so the block starts as identity; keeps
        # early steps stable at the spec's 0.1 learning rate
        self.bn2.params["gamma"][...] = 0.0
        self.channels = channels

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True):
        h = self.bn1.forward(self.l1.forward(x, train), train, update_stats)
        self._inner_mask = relu_grad_mask(h)
        h = relu(h)
        h = self.bn2.forward(self.l2.forward(h, train), train, update_stats)
        pre = x + h
        self._out_mask = relu_grad_mask(pre)
        return relu(pre)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dpre = dy * self._out_mask
        dh = self.l2.backward(self.bn2.backward(dpre))
        dh = dh * self._inner_mask
        dx_branch = self.l1.backward(self.bn1.backward(dh))
        return dpre + dx_branch


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits, probs)."""
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    probs = softmax(logits)
    picked = probs[np.arange(b), labels]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    return loss, dlogits.astype(logits.dtype), probs
