"""Central-difference gradient verification.

The checker runs one recorded forward/backward pass to collect analytic
gradients, then perturbs input coordinates one at a time (x +- h) and
compares. The function under test must be deterministic: anything stochastic
inside it has to draw from a freshly seeded generator on every call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, record

__all__ = ["GradCheckReport", "NonFiniteGradientError", "grad_check"]

#: Central difference step; gradients are informative down to roughly the
#: forward-evaluation noise divided by h, so keep inputs of order one.
DEFAULT_STEP = 1e-5


class NonFiniteGradientError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    ``max_rel_error`` is ``|analytic - numeric| / max(|analytic|, |numeric|,
    1e-6)`` over all checked coordinates.
    """

    max_rel_error: float
    n_checked: int
    tolerance: float
    worst_input: int = -1
    worst_coord: tuple = ()
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _coords(shape, max_coords, rng):
    total = int(np.prod(shape)) if shape else 1
    if max_coords is None or total <= max_coords:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=max_coords, replace=False)
    return [np.unravel_index(i, shape) if shape else () for i in flat]


def grad_check(fn, inputs, tolerance: float = 1e-4, h: float = DEFAULT_STEP,
               max_coords_per_input: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar function.

    ``fn(*inputs)`` must return a scalar Tensor. Only inputs with
    ``requires_grad`` are checked; ``max_coords_per_input`` caps the number
    of perturbed coordinates per input (sampled with ``rng``) so large
    graphs stay affordable.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with record() as tape:
        out = fn(*inputs)
        if out.shape != ():
            raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
        tape.backward(out)
    analytic = []
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            analytic.append(None)
            continue
        g = x.grad if x.grad is not None else np.zeros_like(x.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"analytic gradient of input {i} is not finite")
        analytic.append(np.array(g, dtype=np.float64))
        x.grad = None

    report = GradCheckReport(max_rel_error=0.0, n_checked=0, tolerance=tolerance)
    for i, x in enumerate(inputs):
        if analytic[i] is None:
            continue
        for coord in _coords(x.data.shape, max_coords_per_input, rng):
            original = x.data[coord]
            x.data[coord] = original + h
            f_plus = fn(*inputs).item()
            x.data[coord] = original - h
            f_minus = fn(*inputs).item()
            x.data[coord] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NonFiniteGradientError(
                    f"numeric gradient of input {i} at {coord} is not finite"
                )
            a = float(analytic[i][coord])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            report.n_checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_input = i
                report.worst_coord = tuple(int(c) for c in coord)
                report.worst_analytic = a
                report.worst_numeric = numeric
    return report
