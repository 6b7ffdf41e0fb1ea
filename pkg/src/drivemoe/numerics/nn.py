"""Small layer library on top of :mod:`drivemoe.numerics.tensor`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter, Tensor, layer_norm


class Module:
    """Container that discovers parameters and sub-modules by attribute scan."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
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
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def assign_names(self) -> "Module":
        """Rename every parameter to its attribute path (stable checkpoint keys)."""
        for name, p in self.named_parameters():
            p.name = name
        return self


def _init(rng: np.random.Generator, shape, scale: float, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * scale).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32,
                 bias: bool = True, scale: float | None = None, name: str = "linear"):
        scale = 1.0 / np.sqrt(d_in) if scale is None else scale
        self.weight = Parameter(_init(rng, (d_in, d_out), scale, dtype), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), name=f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, name: str = "ln"):
        self.gamma = Parameter(np.ones(d, dtype=dtype), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(d, dtype=dtype), name=f"{name}.beta")

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Two-layer perceptron ``d_in -> d_hidden -> d_out``."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32, activation: str = "gelu", name: str = "mlp",
                 out_scale: float | None = None):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype, name=f"{name}.fc1")
        self.fc2 = Linear(d_hidden, d_out, rng, dtype, name=f"{name}.fc2", scale=out_scale)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        h = self.fc1(x)
        h = h.gelu() if self.activation == "gelu" else h.tanh()
        return self.fc2(h)


class Attention(Module):
    """Multi-head scaled dot-product attention (self or cross)."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, dtype=np.float32,
                 name: str = "attn"):
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng, dtype, name=f"{name}.q")
        # key bias is redundant under softmax (zero gradient), so omitted
        self.k = Linear(d, d, rng, dtype, name=f"{name}.k", bias=False)
        self.v = Linear(d, d, rng, dtype, name=f"{name}.v")
        self.o = Linear(d, d, rng, dtype, name=f"{name}.o", scale=0.5 / np.sqrt(d))

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, context: Tensor | None = None) -> Tensor:
        context = x if context is None else context
        b, t, d = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(context))
        v = self._split(self.v(context))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d // self.n_heads))
        att = scores.softmax(axis=-1)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.o(y)


class EncoderBlock(Module):
    """Pre-norm transformer block: self-attention then feed-forward."""

    def __init__(self, d: int, n_heads: int, d_ff: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "block"):
        self.ln1 = LayerNorm(d, dtype, name=f"{name}.ln1")
        self.attn = Attention(d, n_heads, rng, dtype, name=f"{name}.attn")
        self.ln2 = LayerNorm(d, dtype, name=f"{name}.ln2")
        self.ff = MLP(d, d_ff, d, rng, dtype, name=f"{name}.ff", out_scale=0.5 / np.sqrt(d_ff))

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))
