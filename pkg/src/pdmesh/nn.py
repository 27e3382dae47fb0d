"""Minimal module containers on top of :mod:`pdmesh.autograd`."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter


class Module:
    training = True

    def named_parameters(self) -> dict[str, Parameter]:
        out = {}
        for value in self.__dict__.values():
            _collect(value, out)
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def modules(self):
        yield self
        for value in self.__dict__.values():
            for m in _submodules(value):
                yield from m.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for m in self.modules():
            if isinstance(m, BatchNorm):
                out[m.name + ".running_mean"] = m.running_mean
                out[m.name + ".running_var"] = m.running_var
        return out


def _submodules(value):
    if isinstance(value, Module):
        return [value]
    if isinstance(value, (list, tuple)):
        return [v for v in value if isinstance(v, Module)]
    return []


def _collect(value, out):
    if isinstance(value, Parameter):
        out[value.name] = value
    elif isinstance(value, Module):
        out.update(value.named_parameters())
    elif isinstance(value, (list, tuple)):
        for v in value:
            _collect(v, out)


class Linear(Module):
    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(ag.glorot(rng, n_in, n_out), name=f"{name}.W")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.b") if bias else None

    def __call__(self, x):
        y = ag.matmul(x, self.weight)
        return ag.add(y, self.bias) if self.bias is not None else y


def default_groups(channels: int, max_groups: int = 4) -> int:
    g = min(max_groups, channels)
    return g if channels % g == 0 else 1


class GroupNorm(Module):
    def __init__(self, name: str, channels: int, groups: int | None = None, eps: float = 1e-5):
        self.groups = default_groups(channels) if groups is None else groups
        self.eps = eps
        self.gain = Parameter(np.ones(channels), name=f"{name}.gain")
        self.bias = Parameter(np.zeros(channels), name=f"{name}.bias")

    def __call__(self, x):
        return ag.group_norm(x, self.groups, self.gain, self.bias, self.eps)


class BatchNorm(Module):
    """Per-channel normalisation over all nodes of a batch, with running statistics."""

    def __init__(self, name: str, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gain = Parameter(np.ones(channels), name=f"{name}.gain")
        self.bias = Parameter(np.zeros(channels), name=f"{name}.bias")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x):
        x = ag.as_tensor(x)
        if self.training and len(x) > 1:
            n = len(x)
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            self.running_mean *= 1.0 - self.momentum
            self.running_mean += self.momentum * mu
            self.running_var *= 1.0 - self.momentum
            self.running_var += self.momentum * var * n / (n - 1)
            return ag.batch_norm(x, self.gain, self.bias, self.eps)
        return ag.batch_norm(x, self.gain, self.bias, self.eps,
                             running=(self.running_mean, self.running_var))
