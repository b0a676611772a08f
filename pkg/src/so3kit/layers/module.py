"""Parameter containers and the dense building blocks used inside layers."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Parameter
from ..errors import ShapeError


def _key_name(key) -> str:
    if isinstance(key, tuple):
        return "(" + ",".join(str(k) for k in key) + ")"
    return str(key)


class Module:
    """Walks attributes to find parameters; names are dotted attribute paths."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            yield from _walk(value, f"{prefix}{attr}")

    def parameters(self) -> list[Parameter]:
        params = []
        for name, p in self.named_parameters():
            p.name = name
            params.append(p)
        return params

    def load_arrays(self, arrays: dict):
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"missing parameter {p.name}")
            if arrays[p.name].shape != p.data.shape:
                raise ShapeError(f"{p.name}: stored shape {arrays[p.name].shape}, expected {p.data.shape}")
            p.data[...] = arrays[p.name]


def _walk(value, path):
    if isinstance(value, Parameter):
        yield path, value
    elif isinstance(value, Module):
        yield from value.named_parameters(path + ".")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{path}.{_key_name(k)}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{path}.{i}")


def kaiming_uniform(rng, fan_out, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Linear(Module):
    """``y = x W^T + b`` over the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias=True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform(rng, out_features, in_features))
        bound = 1.0 / math.sqrt(in_features)
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_features)) if bias else None

    def __call__(self, x):
        x = ad.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear: input shape {x.shape} does not end in {self.in_features}")
        y = ad.matmul(ad.reshape(x, (-1, self.in_features)), ad.transpose(self.weight))
        if self.bias is not None:
            y = y + self.bias
        return ad.reshape(y, x.shape[:-1] + (self.out_features,))


class LayerNorm(Module):
    """Standardize the last axis, then apply a learned gain and shift."""

    def __init__(self, features: int, eps=1e-12):
        self.eps = eps
        self.gain = Parameter(np.ones(features))
        self.shift = Parameter(np.zeros(features))

    def __call__(self, x):
        return ad.layer_norm(x, self.eps) * self.gain + self.shift
