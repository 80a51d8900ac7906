"""Layer wrappers and the module tree shared by both model families.

Parameters are Tensors with ``requires_grad=True`` registered on assignment;
buffers (batch-norm running statistics) are plain numpy arrays registered
explicitly. Construction consumes a caller-supplied Generator in a fixed
order, so two builds from the same seed are bit-identical.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np
from scipy.special import erfinv

from . import ops
from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to [-2*std, 2*std] via inverse-CDF sampling."""
    lo = 0.5 * (1.0 + math.erf(-2.0 / math.sqrt(2.0)))
    hi = 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))
    u = rng.uniform(lo, hi, size=shape)
    return (std * math.sqrt(2.0) * erfinv(2.0 * u - 1.0)).astype(dtype)


def fan_in_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(dtype)


class Module:
    """Minimal module tree: tracks parameters, buffers, children, train/eval mode."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self) -> "Module":
        object.__setattr__(self, "training", True)
        for m in self._modules.values():
            m.train()
        return self

    def eval(self) -> "Module":
        object.__setattr__(self, "training", False)
        for m in self._modules.values():
            m.eval()
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            self._modules[str(i)] = m

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel, stride=1, padding=0, groups: int = 1,
                 bias: bool = True, init: str = "fan_in", rng: Optional[np.random.Generator] = None,
                 dtype=np.float32):
        super().__init__()
        kernel = kernel if isinstance(kernel, tuple) else (kernel,) * 3
        shape = (c_out, c_in // groups, *kernel)
        if init == "zero":
            w = np.zeros(shape, dtype=dtype)
        elif init == "fan_in":
            fan = (c_in // groups) * kernel[0] * kernel[1] * kernel[2]
            w = fan_in_normal(rng, shape, fan, dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias, stride=self.stride,
                          padding=self.padding, groups=self.groups)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, bias: bool = True, init: str = "trunc_normal",
                 rng: Optional[np.random.Generator] = None, dtype=np.float32):
        super().__init__()
        if init == "zero":
            w = np.zeros((c_out, c_in), dtype=dtype)
        elif init == "trunc_normal":
            w = trunc_normal(rng, (c_out, c_in), std=0.02, dtype=dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm3d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, epsilon: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.stats = ops.RunningStats(channels, dtype=dtype)
        self.register_buffer("running_mean", self.stats.mean)
        self.register_buffer("running_var", self.stats.var)
        self.momentum = momentum
        self.epsilon = epsilon

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.scale, self.shift, self.stats, training=self.training,
                              momentum=self.momentum, epsilon=self.epsilon)


class LayerNorm(Module):
    """Per-token feature normalization along ``axis`` (channel axis 0 for grids, -1 for sequences)."""

    def __init__(self, channels: int, axis: int, epsilon: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.scale = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.axis = axis
        self.epsilon = epsilon

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.scale, self.shift, epsilon=self.epsilon, axis=self.axis)
