"""Parameters, modules, and the handful of layers the model is built from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Array


class Parameter(Array):
    """A trainable leaf array with a stable dotted name."""

    __slots__ = ("name", "init_spec")

    def __init__(self, data, init_spec: str = "given", name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.init_spec = init_spec

    def assign(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=self.data.dtype)
        if values.shape != self.data.shape:
            raise ValueError(f"{self.name or 'parameter'}: shape {values.shape} != {self.data.shape}")
        self.data[...] = values


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples re-drawn until they fall within two standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container that discovers parameters from its attributes, in definition order."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                name = prefix + key
                value.name = name
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Parameter):
                        item.name = f"{prefix}{key}.{i}"
                        yield item.name, item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            p.assign(state[name])

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """y = x @ weight + bias, with weight stored as (in, out)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 init: str = "xavier", bias: bool = True):
        if init == "xavier":
            w = xavier_uniform(rng, in_dim, out_dim, (in_dim, out_dim))
        elif init == "trunc_normal":
            w = trunc_normal(rng, (in_dim, out_dim))
        elif init == "zeros":
            w = np.zeros((in_dim, out_dim))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Parameter(w, init_spec=init)
        self.bias = Parameter(np.zeros(out_dim), init_spec="zeros") if bias else None

    def forward(self, x: Array) -> Array:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    """Channels-last convolution with fan-in scaled normal initialization."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        fan_in = in_ch * kernel * kernel
        w = rng.standard_normal((out_ch, in_ch, kernel, kernel)) / math.sqrt(fan_in)
        self.weight = Parameter(w, init_spec="fan_in_normal")
        self.bias = Parameter(np.zeros(out_ch), init_spec="zeros")
        self.stride = stride
        self.padding = padding

    def forward(self, x: Array) -> Array:
        return nx.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.weight = Parameter(np.ones(dim), init_spec="ones")
        self.bias = Parameter(np.zeros(dim), init_spec="zeros")
        self.eps = eps

    def forward(self, x: Array) -> Array:
        return nx.layer_norm(x, self.weight, self.bias, self.eps)


class MLP(Module):
    """Linear layers with ReLU in between; the last layer can start at zero."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, layers: int,
                 rng: np.random.Generator, zero_last: bool = False):
        dims = [in_dim] + [hidden] * (layers - 1) + [out_dim]
        self.layers = [
            Linear(dims[i], dims[i + 1], rng,
                   init="zeros" if zero_last and i == layers - 1 else "xavier")
            for i in range(layers)
        ]

    def forward(self, x: Array) -> Array:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = nx.relu(x)
        return x
