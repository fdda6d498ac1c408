"""Central finite-difference gradient checking."""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .tensor import NonFiniteError, Tensor


def _scalar(value) -> float:
    v = value.item() if isinstance(value, Tensor) else float(value)
    if not math.isfinite(v):
        raise NonFiniteError(f"gradcheck: objective returned {v}")
    return v


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def gradcheck(f: Callable, x: Union[Tensor, Sequence[Tensor]], eps: float = 1e-6,
              coords: Optional[Sequence[Sequence[int]]] = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``f`` is called with no arguments and must read the current values of the
    tensors in ``x``; it returns a scalar :class:`Tensor`. Coordinates are
    perturbed in place and restored afterwards. ``coords`` optionally restricts
    the check to a list of flat indices per tensor (``None`` entries mean all).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"gradcheck: eps must lie in [1e-7, 1e-4], got {eps}")
    tensors = [x] if isinstance(x, Tensor) else list(x)
    for t in tensors:
        t.requires_grad = True
        t.grad = None

    out = f()
    _scalar(out)
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]

    worst = 0.0
    for k, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        idx = range(flat.size) if coords is None or coords[k] is None else coords[k]
        a_flat = analytic[k].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _scalar(f())
            flat[i] = orig - eps
            f_minus = _scalar(f())
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            worst = max(worst, relative_error(a_flat[i], numeric))
    for t in tensors:
        t.grad = None
    return worst
