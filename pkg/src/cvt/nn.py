"""Module/parameter containers, layers, and the SGD optimizer.

Modules register parameters and child modules simply by attribute assignment
(insertion order is the traversal order, which keeps checkpoints and
parameter counts deterministic). Layers that need randomness at construction
take an explicit ``numpy.random.Generator`` so a fixed seed reproduces the
same weights bit for bit.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    _buffer_fields: tuple = ()

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state (e.g. batch-norm running statistics)."""
        for name in self._buffer_fields:
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{full}.{i}.")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def count_parameters(module: Module) -> int:
    """Total number of trainable scalars in ``module``."""
    return int(sum(p.data.size for p in module.parameters()))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_features, in_features)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, stride: int = 1, padding: int = 1, bias: bool = True):
        fan_in = in_channels * kernel_size * kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        self.weight = Parameter(
            rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel_size, kernel_size))
        )
        self.bias = Parameter(rng.uniform(-bound, bound, size=out_channels)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Batch normalization over axis 0 of a (rows, features) input.

    Training mode normalizes with batch statistics (gradients flow through
    them) and updates running estimates used in eval mode.
    """

    _buffer_fields = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if train:
            out, mu, var = ag.batch_norm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var
            return out
        xhat = ag.mul(ag.sub(x, Tensor(self.running_mean)),
                      Tensor(1.0 / np.sqrt(self.running_var + self.eps)))
        return ag.add(ag.mul(xhat, self.gamma), self.beta)


class BatchNorm2d(Module):
    """Per-channel batch norm on NCHW maps (statistics over batch and space)."""

    def __init__(self, num_channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.bn = BatchNorm(num_channels, momentum=momentum, eps=eps)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        b, c, h, w = x.shape
        flat = ag.reshape(ag.transpose(x, (0, 2, 3, 1)), (b * h * w, c))
        out = self.bn(flat, train)
        return ag.transpose(ag.reshape(out, (b, h, w, c)), (0, 3, 1, 2))


class LayerNorm(Module):
    def __init__(self, num_features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not train or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return ag.mul(x, Tensor(mask))


class SGD:
    """Plain stochastic gradient descent with optional momentum and weight decay."""

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params] if momentum else None
        self.step_count = 0

    def step(self):
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.velocity is not None:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.data -= self.lr * g
        self.step_count += 1

    def zero_grad(self):
        for p in self.params:
            p.grad = None
