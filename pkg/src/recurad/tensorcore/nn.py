"""Minimal module system: parameter discovery, state dicts, convolution layers."""
from __future__ import annotations

import hashlib
from typing import Dict, Iterator, Tuple

import numpy as np

from .conv import conv_nd, conv_transpose_nd
from .tensor import DTYPE, Parameter, Tensor


class Module:
    """Parameters are discovered from attributes, recursing into sub-modules and lists."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}", seen)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for n, p in own.items():
            arr = np.asarray(state[n], dtype=DTYPE)
            if arr.shape != p.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()
            p.m = np.zeros_like(p.data)
            p.v = np.zeros_like(p.data)
            p.step = 0

    def freeze(self) -> None:
        for p in self.parameters():
            p.trainable = False
            p.requires_grad = False

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.trainable = True
            p.requires_grad = True

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for n, p in self.named_parameters():
            h.update(n.encode())
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return h.hexdigest()

    def zero_(self) -> None:
        for p in self.parameters():
            p.data[...] = 0.0

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(value, name, seen):
    if isinstance(value, Parameter):
        if id(value) not in seen:
            seen.add(id(value))
            yield name, value
    elif isinstance(value, Module):
        for n, v in vars(value).items():
            yield from _walk(v, f"{name}.{n}", seen)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{name}.{i}", seen)


def he_init(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.01,
            linear: bool = False) -> np.ndarray:
    """Variance-preserving normal init.

    He gain for layers whose output goes through a leaky ReLU, unit gain
    (LeCun) for layers with a linear output. Deep chains of small units only
    keep their input dependence at init if every layer preserves variance.
    """
    gain = 1.0 if linear else 2.0 / (1.0 + slope ** 2)
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(DTYPE)


class ConvNd(Module):
    def __init__(self, cin: int, cout: int, kernel, rng: np.random.Generator,
                 stride=1, padding=0, nd: int = 2, linear: bool = False):
        kernel = (kernel,) * nd if isinstance(kernel, int) else tuple(kernel)
        fan_in = cin * int(np.prod(kernel))
        self.weight = Parameter(he_init(rng, (cout, cin) + kernel, fan_in, linear=linear))
        self.bias = Parameter(np.zeros(cout, dtype=DTYPE))
        self.stride, self.padding = stride, padding

    def forward(self, x: Tensor) -> Tensor:
        return conv_nd(x, self.weight, self.bias, self.stride, self.padding)


class ConvTransposeNd(Module):
    def __init__(self, cin: int, cout: int, kernel, rng: np.random.Generator, stride=1, nd: int = 2,
                 linear: bool = False):
        kernel = (kernel,) * nd if isinstance(kernel, int) else tuple(kernel)
        # each output pixel sees cin inputs per kernel tap it overlaps
        fan_in = cin * max(1, int(np.prod(kernel)) // int(np.prod(
            (stride,) * nd if isinstance(stride, int) else stride)))
        self.weight = Parameter(he_init(rng, (cin, cout) + kernel, fan_in, linear=linear))
        self.bias = Parameter(np.zeros(cout, dtype=DTYPE))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv_transpose_nd(x, self.weight, self.bias, self.stride)
