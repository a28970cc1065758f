"""Parameter containers for the transformer building blocks."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Module:
    """Minimal parameter container: attributes that are Parameters, Modules or
    lists of Modules are discovered recursively in definition order."""

    training: bool = False

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for value in vars(self).values():
            items = value if isinstance(value, (list, tuple)) else [value]
            for item in items:
                if isinstance(item, Module):
                    yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(xavier_uniform(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = F.LAYER_NORM_EPS):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise F.ConfigError(f"model dim {d} is not divisible by {heads} heads")
        self.heads = heads
        self.wq = Parameter(xavier_uniform(rng, d, d))
        self.bq = Parameter(np.zeros(d))
        self.wk = Parameter(xavier_uniform(rng, d, d))
        self.wv = Parameter(xavier_uniform(rng, d, d))
        self.bv = Parameter(np.zeros(d))
        self.wo = Parameter(xavier_uniform(rng, d, d))
        self.bo = Parameter(np.zeros(d))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
        return F.multi_head_attention(q, k, v, self.heads, mask, self)


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.w1 = Parameter(xavier_uniform(rng, d, hidden))
        self.b1 = Parameter(np.zeros(hidden))
        self.w2 = Parameter(xavier_uniform(rng, hidden, d))
        self.b2 = Parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return F.ffn(x, self)
