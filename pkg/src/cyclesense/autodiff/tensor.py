"""Minimal reverse-mode automatic differentiation on numpy arrays.

Design: a :class:`Tensor` wraps an ndarray; every differentiable op computes
its result eagerly and, when a :class:`Tape` is active, appends a closure
that propagates the output gradient to its inputs. ``Tape.backward`` seeds
the loss gradient and runs the closures in exact reverse execution order;
where a tensor feeds several ops, the contributions accumulate by addition.

Gradients are stored on the tensors themselves (``t.grad``). Tensors that do
not lie on a path to the loss keep ``grad = None`` and their closures are
skipped, so dead branches cost nothing in the backward pass.

Networks train in float32; the same graph runs in float64 for gradient
checking.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "record",
    "add", "sub", "mul", "div", "neg", "matmul",
    "reshape", "transpose", "concat", "broadcast_to", "select",
    "mean", "sum_", "relu", "sigmoid", "tanh", "log", "sqrt", "clip",
    "conv3d", "dropout",
]


class Tensor:
    """An ndarray plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # Operator sugar; all routed through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named, trainable tensor. ``frozen`` excludes it from updates."""

    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.frozen = False

    def freeze(self):
        self.frozen = True
        self.requires_grad = False

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, frozen={self.frozen})"


class Tape:
    """Records backward closures of the ops executed while active."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def backward(self, output: Tensor, seed=None):
        """Seed ``output.grad`` and run all closures in reverse order."""
        if seed is None:
            seed = np.ones_like(output.data)
        output.grad = np.asarray(seed, dtype=output.data.dtype)
        for fn in reversed(self._ops):
            fn()


_TAPES: list[Tape] = []


@contextmanager
def record():
    """Context manager activating a fresh tape."""
    tape = Tape()
    _TAPES.append(tape)
    try:
        yield tape
    finally:
        _TAPES.pop()


def _tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, contribution: np.ndarray):
    """Add a gradient contribution; copies on first write so later in-place
    additions never alias another tensor's gradient buffer."""
    if t.grad is None:
        t.grad = np.array(contribution, dtype=t.data.dtype)
    else:
        t.grad += contribution


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, *parents: Tensor) -> tuple[Tensor, bool]:
    """Build the output tensor; second value says whether to record."""
    tape = _tape()
    track = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    return out, track


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, track = _make(a.data + b.data, a, b)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad, b.data.shape))
        _tape()._ops.append(backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, track = _make(a.data - b.data, a, b)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-out.grad, b.data.shape))
        _tape()._ops.append(backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, track = _make(a.data * b.data, a, b)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
        _tape()._ops.append(backward)
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, track = _make(a.data / b.data, a, b)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accumulate(a, _unbroadcast(out.grad / b.data, a.data.shape))
            if b.requires_grad:
                _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))
        _tape()._ops.append(backward)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(-a.data, a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, -out.grad)
        _tape()._ops.append(backward)
    return out


def matmul(a, b) -> Tensor:
    """2-d matrix product [m, k] @ [k, n]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    out, track = _make(a.data @ b.data, a, b)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.requires_grad:
                _accumulate(a, out.grad @ b.data.T)
            if b.requires_grad:
                _accumulate(b, a.data.T @ out.grad)
        _tape()._ops.append(backward)
    return out


# ---------------------------------------------------------------------------
# shape ops

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(a.data.reshape(shape), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad.reshape(a.data.shape))
        _tape()._ops.append(backward)
    return out


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out, track = _make(a.data.transpose(axes), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad.transpose(inverse))
        _tape()._ops.append(backward)
    return out


def concat(tensors, axis: int) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    out, track = _make(np.concatenate([p.data for p in parts], axis=axis), *parts)
    if track:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward():
            if out.grad is None:
                return
            for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    index = [slice(None)] * out.grad.ndim
                    index[axis] = slice(start, stop)
                    _accumulate(p, out.grad[tuple(index)])
        _tape()._ops.append(backward)
    return out


def broadcast_to(a, shape) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(np.broadcast_to(a.data, shape), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _tape()._ops.append(backward)
    return out


def select(a, index: int, axis: int = 1) -> Tensor:
    """Take one slice along ``axis`` (used to step through sequences)."""
    a = _as_tensor(a)
    out, track = _make(np.take(a.data, index, axis=axis), a)
    if track:
        def backward():
            if out.grad is None:
                return
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            a.grad[tuple(sl)] += out.grad
        _tape()._ops.append(backward)
    return out


# ---------------------------------------------------------------------------
# reductions and nonlinearities

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(a.data.sum(axis=axis, keepdims=keepdims), a)
    if track:
        def backward():
            if out.grad is None:
                return
            g = out.grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        _tape()._ops.append(backward)
    return out


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(a.data.mean(axis=axis, keepdims=keepdims), a)
    if track:
        count = a.data.size if axis is None else int(
            np.prod([a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
        )

        def backward():
            if out.grad is None:
                return
            g = out.grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
            _accumulate(a, np.broadcast_to(g, a.data.shape) / count)
        _tape()._ops.append(backward)
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(np.maximum(a.data, 0), a)
    if track:
        mask = a.data > 0

        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * mask)
        _tape()._ops.append(backward)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    # Stable in both tails.
    x = a.data
    value = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out, track = _make(value.astype(x.dtype, copy=False), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * out.data * (1.0 - out.data))
        _tape()._ops.append(backward)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(np.tanh(a.data), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * (1.0 - out.data * out.data))
        _tape()._ops.append(backward)
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(np.log(a.data), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad / a.data)
        _tape()._ops.append(backward)
    return out


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out, track = _make(np.sqrt(a.data), a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * 0.5 / out.data)
        _tape()._ops.append(backward)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where nothing was clamped."""
    a = _as_tensor(a)
    out, track = _make(np.clip(a.data, lo, hi), a)
    if track:
        mask = (a.data > lo) & (a.data < hi)

        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * mask)
        _tape()._ops.append(backward)
    return out


# ---------------------------------------------------------------------------
# convolution

def _pad_amounts(kernel: tuple, padding: str) -> tuple:
    if padding == "valid":
        return ((0, 0),) * 3
    if padding == "same":
        # Total k-1 per axis, the extra zero (for even k) after.
        return tuple(((k - 1) // 2, k - 1 - (k - 1) // 2) for k in kernel)
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


def _im2col(xp: np.ndarray, kernel: tuple) -> np.ndarray:
    """[B, D1, D2, D3, C] -> [B*O1*O2*O3, k1*k2*k3*C] windows as rows."""
    k1, k2, k3 = kernel
    view = sliding_window_view(xp, (k1, k2, k3), axis=(1, 2, 3))
    # view: [B, O1, O2, O3, C, k1, k2, k3] -> rows ordered (k1, k2, k3, C)
    b, o1, o2, o3 = view.shape[:4]
    cols = view.transpose(0, 1, 2, 3, 5, 6, 7, 4).reshape(b * o1 * o2 * o3, -1)
    return np.ascontiguousarray(cols)


def conv3d(x, w, b=None, padding: str = "valid") -> Tensor:
    """3-d convolution with stride 1 over a [B, D1, D2, D3, Cin] input.

    ``w`` is [k1, k2, k3, Cin, Cout]; 'same' keeps the spatial extents by
    zero padding, 'valid' shrinks each axis by k-1. Implemented as im2col
    plus one matrix product; the backward pass rebuilds the column matrix
    rather than keeping it alive, trading a little compute for memory.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if b is not None:
        b = _as_tensor(b)
    if x.ndim != 5 or w.ndim != 5:
        raise ValueError(f"conv3d expects rank-5 input and kernel, got {x.ndim} and {w.ndim}")
    if x.data.shape[4] != w.data.shape[3]:
        raise ValueError(
            f"input channels {x.data.shape[4]} != kernel channels {w.data.shape[3]}"
        )
    kernel = w.data.shape[:3]
    pads = _pad_amounts(kernel, padding)
    xp = np.pad(x.data, ((0, 0), *pads, (0, 0))) if padding == "same" else x.data
    out_spatial = tuple(xp.shape[1 + i] - kernel[i] + 1 for i in range(3))
    if min(out_spatial) < 1:
        raise ValueError(
            f"kernel {kernel} does not fit input of spatial shape {x.data.shape[1:4]}"
        )
    batch = x.data.shape[0]
    cout = w.data.shape[4]
    cols = _im2col(xp, kernel)
    wmat = w.data.reshape(-1, cout)
    y = cols @ wmat
    if b is not None:
        y = y + b.data
    y = y.reshape(batch, *out_spatial, cout)

    parents = (x, w) if b is None else (x, w, b)
    out, track = _make(y, *parents)
    if track:
        def backward():
            if out.grad is None:
                return
            gy = out.grad.reshape(-1, cout)
            if b is not None and b.requires_grad:
                _accumulate(b, gy.sum(axis=0))
            need_cols = w.requires_grad
            if need_cols:
                cols_b = _im2col(xp, kernel)
                _accumulate(w, (cols_b.T @ gy).reshape(w.data.shape))
            if x.requires_grad:
                dcols = gy @ wmat.T
                k1, k2, k3 = kernel
                o1, o2, o3 = out_spatial
                dcols = dcols.reshape(batch, o1, o2, o3, k1, k2, k3, -1)
                dxp = np.zeros_like(xp)
                for i in range(k1):
                    for j in range(k2):
                        for l in range(k3):
                            dxp[:, i:i + o1, j:j + o2, l:l + o3, :] += dcols[:, :, :, :, i, j, l, :]
                if padding == "same":
                    sl = tuple(
                        slice(p[0], dxp.shape[1 + i] - p[1]) for i, p in enumerate(pads)
                    )
                    dxp = dxp[:, sl[0], sl[1], sl[2], :]
                _accumulate(x, dxp)
        _tape()._ops.append(backward)
    return out


def dropout(a, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero a ``rate`` fraction, scale the rest by
    1/(1-rate) so the expectation is unchanged. Identity when not training.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    a = _as_tensor(a)
    if not training or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=a.data.dtype)
    mask = keep * scale
    out, track = _make(a.data * mask, a)
    if track:
        def backward():
            if out.grad is not None:
                _accumulate(a, out.grad * mask)
        _tape()._ops.append(backward)
    return out
