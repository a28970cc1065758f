"""Differentiable building blocks with hand-written fused backward passes."""

from __future__ import annotations

import math

import numpy as np

from .tensor import NumericError, ShapeError, Tensor, as_tensor, matmul

LAYER_NORM_EPS = 1e-5


class DegenerateMaskError(ValueError):
    pass


class LabelMaskError(ValueError):
    pass


class ConfigError(ValueError):
    pass


def _masked_logits(x: np.ndarray, mask) -> np.ndarray:
    z = x if mask is None else x + np.asarray(mask, dtype=x.dtype)
    if mask is not None and np.isneginf(z).all(axis=-1).any():
        raise DegenerateMaskError("softmax row has every entry masked")
    return z


def softmax_masked(logits: Tensor, mask=None) -> Tensor:
    """Row softmax of ``logits + mask`` over the last axis.

    ``mask`` is additive with entries 0 or -inf and broadcasts against
    ``logits``; masked entries come out as exact zeros.
    """
    logits = as_tensor(logits)
    z = _masked_logits(logits.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._make(y, (logits,), backward)


def log_softmax_masked(logits: Tensor, mask=None) -> Tensor:
    """Log of :func:`softmax_masked`; masked entries are -inf.

    Upstream gradients at masked entries must be zero (as produced by
    :func:`cross_entropy_smoothed`).
    """
    logits = as_tensor(logits)
    z = _masked_logits(logits.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor._make(out, (logits,), backward)


def smoothed_targets(target: np.ndarray, n: int, smoothing: float, feasible: np.ndarray) -> np.ndarray:
    """Target distributions: ``1 - smoothing`` on the target, the rest spread
    evenly over the other feasible entries of the row."""
    target = np.asarray(target, dtype=np.int64)[..., None]
    onehot = np.zeros(target.shape[:-1] + (n,), dtype=bool)
    np.put_along_axis(onehot, target, True, axis=-1)
    others = feasible & ~onehot
    k = others.sum(axis=-1, keepdims=True)
    share = np.divide(smoothing, k, out=np.zeros(k.shape), where=k > 0)
    q = np.where(others, share, 0.0)
    np.put_along_axis(q, target, np.where(k > 0, 1.0 - smoothing, 1.0), axis=-1)
    return q


def cross_entropy_smoothed(log_probs: Tensor, target, smoothing: float = 0.0, mask=None) -> Tensor:
    """Summed cross entropy ``-sum_rows sum_j q_j log p_j``.

    ``log_probs`` has shape (..., S, n) and ``target`` (..., S). ``mask`` is the
    additive mask the distribution was built with; entries that are not 0 are
    infeasible and never receive smoothing mass.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {smoothing}")
    log_probs = as_tensor(log_probs)
    lp = log_probs.data
    n = lp.shape[-1]
    target = np.asarray(target, dtype=np.int64)
    if target.shape != lp.shape[:-1]:
        raise ShapeError(f"targets {target.shape} do not match log-probs {lp.shape}")
    if mask is None:
        feasible = np.isfinite(lp)
    else:
        feasible = np.broadcast_to(np.asarray(mask) == 0, lp.shape)
    if not np.take_along_axis(feasible, target[..., None], axis=-1).all():
        raise LabelMaskError("a target index falls on a masked entry")
    q = smoothed_targets(target, n, smoothing, feasible).astype(lp.dtype)
    safe = np.where(q > 0, lp, 0.0)
    loss = -(q * safe).sum()
    if not np.isfinite(loss):
        raise NumericError("cross entropy is not finite (a target has probability 0)")

    def backward(g):
        return (-g * q,)

    return Tensor._make(np.asarray(loss, dtype=lp.dtype), (log_probs,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._make(out, (x, gamma, beta), backward)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(keep)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored as (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    return out if bias is None else out + bias


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, length, d = x.shape
    return x.reshape(*lead, length, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, length, dk = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, length, heads * dk)


def multi_head_attention(q, k, v, heads: int, mask, params) -> Tensor:
    """Scaled dot-product attention with ``heads`` heads.

    ``params`` supplies ``wq, bq, wk, wv, bv, wo, bo`` (weights as (in, out)).
    Keys carry no bias: it would add a per-query constant to every score and so
    cancel in the softmax. ``mask`` is additive, shape (..., Lq, Lk), and is
    shared by all heads.
    """
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
            raise ShapeError(f"attention mask {mask.shape} does not match ({q.shape[-2]}, {k.shape[-2]})")
        mask = mask[..., None, :, :]
    qh = _split_heads(linear(q, params.wq, params.bq), heads)
    kh = _split_heads(linear(k, params.wk), heads)
    vh = _split_heads(linear(v, params.wv, params.bv), heads)
    scores = matmul(qh, kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(d // heads))
    attn = softmax_masked(scores, mask)
    return linear(_merge_heads(matmul(attn, vh)), params.wo, params.bo)


def ffn(x: Tensor, params) -> Tensor:
    """Position-wise ``relu(x W1 + b1) W2 + b2``."""
    return linear(linear(x, params.w1, params.b1).relu(), params.w2, params.b2)
