"""Parameter containers and the few layers the networks are built from."""
from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Tensor, default_dtype


class Module:
    """Ordered registry of parameters, buffers and child modules.

    Names are dotted paths (``stage1.conv_a.weight``), stable across runs, and
    used as keys by the optimizer and the checkpoint format.
    """

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}
        self.training = True

    def param(self, name, value, trainable=True):
        t = Tensor(value, requires_grad=trainable)
        self._params[name] = t
        return t

    def buffer(self, name, value):
        self._buffers[name] = np.array(value, dtype=default_dtype())
        return self._buffers[name]

    def add(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix=""):
        out = {prefix + k: v for k, v in self._buffers.items()}
        for cname, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{cname}."))
        return out

    def set_buffer(self, path, value):
        head, _, rest = path.partition(".")
        if rest:
            self._children[head].set_buffer(rest, value)
        else:
            self._buffers[head][...] = value

    def trainable_parameters(self, prefix=""):
        return {k: v for k, v in self.named_parameters(prefix).items() if v.requires_grad}

    def freeze(self):
        for p in self.named_parameters().values():
            p.requires_grad = False
            p.grad = None
        return self

    def train(self, mode=True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, padding=0, dilation=1, bias=True):
        super().__init__()
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.weight = self.param("weight", he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = self.param("bias", np.zeros(cout)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class BatchNorm2d(Module):
    """Batch statistics while training (with running averages), running
    statistics at eval time. ``track=False`` pins it to the stored stats."""

    def __init__(self, c, momentum=0.1, eps=1e-5, track=True):
        super().__init__()
        self.momentum, self.eps, self.track = momentum, eps, track
        self.gamma = self.param("gamma", np.ones(c))
        self.beta = self.param("beta", np.zeros(c))
        self.running_mean = self.buffer("running_mean", np.zeros(c))
        self.running_var = self.buffer("running_var", np.ones(c))

    def forward(self, x):
        if self.training and self.track:
            out, mu, var = ops.batchnorm_train(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * var
            return out
        return ops.batchnorm_infer(x, self.running_mean, self.running_var,
                                   self.gamma, self.beta, self.eps)


def channel_linear(x, W, b):
    """Affine map over the channel axis of ``[N, C, H, W]`` at every pixel."""
    y = ops.linear(ops.transpose(x, (0, 2, 3, 1)), W, b)
    return ops.transpose(y, (0, 3, 1, 2))
