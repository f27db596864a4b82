"""Neural network layers composed from the autodiff primitives."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

__all__ = [
    "glorot_uniform",
    "Dense",
    "Conv3d",
    "BatchNorm",
    "ConvBlock",
    "ResidualBlock",
    "GRU",
    "recalibrate_stats",
]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense:
    """Affine layer ``x @ w + b`` over the last axis of a 2-d input."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 name: str = "dense", dtype=np.float32):
        self.w = Parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), f"{name}/w")
        self.b = Parameter(np.zeros(n_out, dtype), f"{name}/b")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)

    def parameters(self):
        return [self.w, self.b]


class Conv3d:
    """Stride-1 3-d convolution, channels last."""

    def __init__(self, c_in: int, c_out: int, kernel: tuple, rng: np.random.Generator,
                 padding: str = "valid", name: str = "conv", dtype=np.float32):
        k1, k2, k3 = kernel
        receptive = k1 * k2 * k3
        self.w = Parameter(
            glorot_uniform(rng, (k1, k2, k3, c_in, c_out),
                           receptive * c_in, receptive * c_out, dtype),
            f"{name}/w",
        )
        self.b = Parameter(np.zeros(c_out, dtype), f"{name}/b")
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.w, self.b, padding=self.padding)

    def parameters(self):
        return [self.w, self.b]


class BatchNorm:
    """Batch normalization over the trailing channel axis.

    Training mode normalizes with batch statistics over all other axes and
    folds them into running estimates (momentum 0.99, biased variance);
    inference mode uses the running estimates. Built entirely from recorded
    primitives, so its backward pass needs no dedicated rule.

    The running estimates converge over hundreds of steps while upstream
    weights keep moving, so short runs leave them stale. Before the running
    estimates are consumed they should be re-estimated with
    :meth:`start_collect` / :meth:`finish_collect` around batch-stat
    forwards over training data (see :func:`recalibrate_stats`).
    """

    def __init__(self, channels: int, rng=None, eps: float = 1e-3,
                 momentum: float = 0.99, name: str = "bn", dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype), f"{name}/gamma")
        self.beta = Parameter(np.zeros(channels, dtype), f"{name}/beta")
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.eps = eps
        self.momentum = momentum
        self.name = name
        self._collecting = False
        self._collected: list[tuple[np.ndarray, np.ndarray]] = []

    def __call__(self, x: Tensor, training: bool = False) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if training or self._collecting:
            mu = T.mean(x, axis=axes, keepdims=True)
            centered = T.sub(x, mu)
            var = T.mean(T.mul(centered, centered), axis=axes, keepdims=True)
            if self._collecting:
                self._collected.append((mu.data.reshape(-1).copy(),
                                        var.data.reshape(-1).copy()))
            else:
                m = self.momentum
                self.running_mean = (m * self.running_mean
                                     + (1.0 - m) * mu.data.reshape(-1)).astype(self.running_mean.dtype)
                self.running_var = (m * self.running_var
                                    + (1.0 - m) * var.data.reshape(-1)).astype(self.running_var.dtype)
        else:
            mu = Tensor(self.running_mean)
            centered = T.sub(x, mu)
            var = Tensor(self.running_var)
        std = T.sqrt(T.add(var, np.asarray(self.eps, x.dtype)))
        normed = T.div(centered, std)
        return T.add(T.mul(normed, self.gamma), self.beta)

    def start_collect(self):
        """Begin re-estimating the running statistics from batch forwards."""
        self._collecting = True
        self._collected = []

    def finish_collect(self):
        """Average the collected batch statistics into the running buffers."""
        self._collecting = False
        if not self._collected:
            return
        means = np.stack([m for m, _ in self._collected])
        variances = np.stack([v for _, v in self._collected])
        self.running_mean = means.mean(axis=0).astype(self.running_mean.dtype)
        self.running_var = variances.mean(axis=0).astype(self.running_var.dtype)
        self._collected = []

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}/running_mean", self.running_mean),
                (f"{self.name}/running_var", self.running_var)]

    def set_buffers(self, mean: np.ndarray, var: np.ndarray):
        self.running_mean = mean.astype(self.running_mean.dtype)
        self.running_var = var.astype(self.running_var.dtype)


class ConvBlock:
    """conv3d -> batch norm -> ReLU -> dropout.

    Kernel extents are capped at 3 per axis. When the block is frozen its
    parameters stop updating and it runs in inference mode (running-stat
    normalization, no dropout) even inside a training step.
    """

    def __init__(self, c_in: int, c_out: int, kernel: tuple, rng: np.random.Generator,
                 padding: str = "valid", dropout: float = 0.2,
                 name: str = "block", dtype=np.float32):
        if not all(1 <= k <= 3 for k in kernel):
            raise ValueError(f"kernel extents must lie in 1..3, got {kernel}")
        self.conv = Conv3d(c_in, c_out, kernel, rng, padding=padding,
                           name=f"{name}/conv", dtype=dtype)
        self.bn = BatchNorm(c_out, name=f"{name}/bn", dtype=dtype)
        self.dropout = dropout
        self.frozen = False

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        active = training and not self.frozen
        y = self.conv(x)
        y = self.bn(y, training=active)
        y = T.relu(y)
        if active and self.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            y = T.dropout(y, self.dropout, rng, training=True)
        return y

    def parameters(self):
        return self.conv.parameters() + self.bn.parameters()

    def buffers(self):
        return self.bn.buffers()

    def bn_layers(self):
        """Normalization layers still updating; empty once frozen."""
        return [] if self.frozen else [self.bn]

    def freeze(self):
        self.frozen = True
        for p in self.parameters():
            p.freeze()


class ResidualBlock:
    """Identity shortcut around a stack of shape-preserving conv blocks."""

    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __call__(self, x: Tensor, training: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        y = x
        for block in self.blocks:
            y = block(y, training=training, rng=rng)
        if y.shape != x.shape:
            raise ValueError(
                f"residual branch changed shape {x.shape} -> {y.shape}"
            )
        return T.add(y, x)

    def parameters(self):
        return [p for b in self.blocks for p in b.parameters()]

    def buffers(self):
        return [buf for b in self.blocks for buf in b.buffers()]

    def bn_layers(self):
        return [bn for b in self.blocks for bn in b.bn_layers()]

    def freeze(self):
        for b in self.blocks:
            b.freeze()


class _GRUCell:
    """One gated recurrent unit layer.

    Update gate z, reset gate r, candidate state c::

        z = sigmoid(x Wz + h Uz + bz)
        r = sigmoid(x Wr + h Ur + br)
        c = tanh(x Wc + (r * h) Uc + bc)
        h' = (1 - z) * h + z * c

    With all weights zero, z = 1/2 and c = 0, so a zero initial state stays
    zero for any input.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator,
                 name: str, dtype=np.float32):
        def mat(rows, cols, tag):
            return Parameter(glorot_uniform(rng, (rows, cols), rows, cols, dtype),
                             f"{name}/{tag}")

        self.wz, self.uz = mat(n_in, n_hidden, "wz"), mat(n_hidden, n_hidden, "uz")
        self.wr, self.ur = mat(n_in, n_hidden, "wr"), mat(n_hidden, n_hidden, "ur")
        self.wc, self.uc = mat(n_in, n_hidden, "wc"), mat(n_hidden, n_hidden, "uc")
        self.bz = Parameter(np.zeros(n_hidden, dtype), f"{name}/bz")
        self.br = Parameter(np.zeros(n_hidden, dtype), f"{name}/br")
        self.bc = Parameter(np.zeros(n_hidden, dtype), f"{name}/bc")
        self.n_hidden = n_hidden

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = T.sigmoid(T.add(T.add(T.matmul(x, self.wz), T.matmul(h, self.uz)), self.bz))
        r = T.sigmoid(T.add(T.add(T.matmul(x, self.wr), T.matmul(h, self.ur)), self.br))
        c = T.tanh(T.add(T.add(T.matmul(x, self.wc), T.matmul(T.mul(r, h), self.uc)), self.bc))
        one = np.asarray(1.0, x.dtype)
        return T.add(T.mul(T.sub(one, z), h), T.mul(z, c))

    def parameters(self):
        return [self.wz, self.uz, self.wr, self.ur, self.wc, self.uc,
                self.bz, self.br, self.bc]


class GRU:
    """Stacked GRU over a [batch, steps, features] sequence.

    Returns the final hidden state of the top layer. Hidden states start at
    zero.
    """

    def __init__(self, n_in: int, n_hidden: int, n_layers: int,
                 rng: np.random.Generator, name: str = "gru", dtype=np.float32):
        if n_layers < 1:
            raise ValueError("GRU needs at least one layer")
        self.cells = []
        for layer in range(n_layers):
            size_in = n_in if layer == 0 else n_hidden
            self.cells.append(_GRUCell(size_in, n_hidden, rng,
                                       f"{name}/l{layer}", dtype=dtype))
        self.dtype = dtype

    def __call__(self, seq: Tensor) -> Tensor:
        batch, steps = seq.shape[0], seq.shape[1]
        states = [Tensor(np.zeros((batch, cell.n_hidden), self.dtype))
                  for cell in self.cells]
        for t in range(steps):
            x = T.select(seq, t, axis=1)
            for i, cell in enumerate(self.cells):
                states[i] = cell.step(x, states[i])
                x = states[i]
        return states[-1]

    def parameters(self):
        return [p for cell in self.cells for p in cell.parameters()]


def recalibrate_stats(bns, run_forwards):
    """Re-estimate batch norm running statistics with fresh forwards.

    ``run_forwards`` is a callable running inference forwards over training
    batches; while it runs, every layer in ``bns`` normalizes with batch
    statistics and records them, and afterwards the recorded statistics are
    averaged into the running buffers. Use this before the running buffers
    are consumed: the momentum-0.99 estimate maintained during training
    trails the weights by hundreds of steps.
    """
    for bn in bns:
        bn.start_collect()
    try:
        run_forwards()
    finally:
        for bn in bns:
            bn.finish_collect()
