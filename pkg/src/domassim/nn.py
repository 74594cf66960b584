"""Parameterised layers on top of ``tensor``."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DTYPE, Tensor


class Module:
    """Base layer: tracks parameters, buffers, children and the train flag."""

    def __init__(self):
        self.training = True
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self._children: "OrderedDict[str, Module]" = OrderedDict()

    def add_param(self, name, value) -> Tensor:
        t = Tensor(np.asarray(value, dtype=DTYPE), requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name, value) -> np.ndarray:
        arr = np.asarray(value, dtype=DTYPE).copy()
        self._buffers[name] = arr
        return arr

    def add_child(self, name, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix="") -> Iterator:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix="") -> Iterator:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters and buffers by dotted name (copies)."""
        sd = OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())
        sd.update((k, b.copy()) for k, b in self.named_buffers())
        return sd

    def load_state_dict(self, state, strict=True):
        targets = {k: p.data for k, p in self.named_parameters()}
        targets.update(self.named_buffers())
        if strict:
            missing = sorted(set(targets) - set(state))
            extra = sorted(set(state) - set(targets))
            if missing or extra:
                raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for k, arr in state.items():
            if k not in targets:
                continue
            if targets[k].shape != np.shape(arr):
                raise ValueError(f"shape mismatch for parameter {k}: expected {targets[k].shape}, got {np.shape(arr)}")
        for k, arr in state.items():
            if k in targets:
                targets[k][...] = arr

    def train(self, mode=True):
        self.training = mode
        for c in self._children.values():
            c.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, x):  # pragma: no cover
        raise NotImplementedError


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.weight = self.add_param("weight", _kaiming_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel))
        self.bias = self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, kernel, stride=1, padding=0, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        fan_in = cin * kernel * kernel // (stride * stride)
        self.weight = self.add_param("weight", _kaiming_uniform(rng, (cin, cout, kernel, kernel), max(fan_in, 1)))
        self.bias = self.add_param("bias", np.zeros(cout))

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
        self.running_var = self.add_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return T.batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.eps, self.momentum)


class Linear(Module):
    def __init__(self, din, dout, rng=None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = self.add_param("weight", _kaiming_uniform(rng, (dout, din), din))
        self.bias = self.add_param("bias", np.zeros(dout))

    def forward(self, x):
        return T.dense(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x):
        return x.relu()


class Sigmoid(Module):
    def forward(self, x):
        return x.sigmoid()


class MaxPool2d(Module):
    def __init__(self, window=2, stride=None):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x):
        return T.max_pool2d(x, self.window, self.stride)[0]


class GlobalAvgPool(Module):
    def forward(self, x):
        return x.mean(axis=(2, 3))


class Dropout(Module):
    """Inverted dropout drawing masks from its own seeded generator."""

    def __init__(self, p=0.5, seed=0):
        super().__init__()
        self.p = p
        self.rng = np.random.default_rng(seed)

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, x):
        return T.dropout(x, self.p, self.training, self.rng)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        for i, layer in enumerate(layers):
            self.add_child(str(i), layer)

    def __iter__(self):
        return iter(self._children.values())

    def forward(self, x):
        for layer in self._children.values():
            x = layer(x)
        return x
