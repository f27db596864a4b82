"""Loss and optimizer used by all trained models."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

__all__ = ["bce_loss_weighted", "adam_step", "Adam", "NonFiniteLossError"]

#: Predictions are clamped to this interval before the logarithms.
BCE_CLAMP = 1e-7


class NonFiniteLossError(RuntimeError):
    """Raised when a training loss stops being finite."""

    def __init__(self, message: str, epoch: int = -1, batch: int = -1):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


def bce_loss_weighted(pred: Tensor, target, w_pos: float = 1.0, w_neg: float = 1.0) -> Tensor:
    """Class-weighted binary cross entropy, averaged over the batch.

    ``pred`` holds probabilities in (0, 1); they are clamped to
    ``[1e-7, 1 - 1e-7]`` so a saturated sigmoid cannot produce an infinite
    loss. ``target`` is a 0/1 array broadcastable to ``pred``.
    """
    if isinstance(target, Tensor):
        target = target.data
    y = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    p = T.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one = np.asarray(1.0, pred.dtype)
    pos = T.mul(T.mul(Tensor(y), T.log(p)), np.asarray(w_pos, pred.dtype))
    neg = T.mul(T.mul(Tensor(1.0 - y), T.log(T.sub(one, p))), np.asarray(w_neg, pred.dtype))
    return T.neg(T.mean(T.add(pos, neg)))


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-7) -> None:
    """One Adam update, in place on ``param``, ``m`` and ``v``.

    ``t`` is the 1-based step count. On the first step with a constant
    gradient the update magnitude is close to ``lr`` per element.
    """
    if t < 1:
        raise ValueError(f"step count must be >= 1, got {t}")
    m += (1.0 - beta1) * (grad - m)
    v += (1.0 - beta2) * (grad * grad - v)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a list of parameters; frozen parameters are skipped.

    Moment buffers are float64 regardless of the parameter dtype to keep the
    update arithmetic stable across long runs.
    """

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-7):
        self.params: list[Parameter] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros(p.data.shape) for p in self.params]
        self._v = [np.zeros(p.data.shape) for p in self.params]

    def step(self):
        """Apply one update from the gradients currently on the parameters."""
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            if p.frozen or p.grad is None:
                continue
            grad = p.grad.astype(np.float64, copy=False)
            m += (1.0 - self.beta1) * (grad - m)
            v += (1.0 - self.beta2) * (grad * grad - v)
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
