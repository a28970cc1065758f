"""Central finite-difference checks against the autograd gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients of ``f()``.

    ``f`` takes no arguments and reads ``inputs`` (tensors whose ``data`` is
    perturbed in place); run it with float64 inputs. The relative error of a
    coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    analytic, numeric = gradients(f, inputs, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5):
    """Return (analytic, numeric) gradient arrays, one pair per input."""
    for t in inputs:
        if t.data.dtype != np.float64:
            raise NumericError("grad_check needs float64 inputs")
        t.grad = None
        t.requires_grad = True
    out = f()
    if out.data.size != 1:
        raise NumericError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in inputs]
    numeric = []
    for t in inputs:
        num = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num.reshape(-1)[i] = (fp - fm) / (2 * h)
        numeric.append(num)
    for a, n in zip(analytic, numeric):
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(n))):
            raise NumericError("non-finite gradient encountered in grad_check")
    return analytic, numeric
