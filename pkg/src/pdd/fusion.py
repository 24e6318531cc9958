"""Bridges between the two teacher feature spaces.

``ina_fuse``   parameter-free: resize global features onto the local grid, add.
``mmu_fuse``   residual conv adapter on the global features, then the same add.
``mpa_project`` per-stage channel affine map feeding the second student's skips.
"""
from __future__ import annotations

import numpy as np

from .errors import ArgumentError, ShapeError
from .numerics import BatchNorm2d, Conv2d, Module, bilinear_resize, channel_linear, gelu


def scale_factors(f_m, f_c):
    """Spatial ratios ``(h'/h, w'/w)`` taking ``f_m``'s grid onto ``f_c``'s."""
    return f_c.shape[2] / f_m.shape[2], f_c.shape[3] / f_m.shape[3]


def _align(f, like):
    return bilinear_resize(f, like.shape[2], like.shape[3])


def ina_fuse(f_m, f_c):
    if f_m.shape[:2] != f_c.shape[:2]:
        raise ShapeError(f"ina_fuse: batch/channel mismatch {f_m.shape} vs {f_c.shape}")
    return _align(f_m, f_c) + f_c


class MmuBlock(Module):
    """``C3(GeLU(BN(C1(x)))) + C1(x)``.

    C1 is a plain 1x1 conv; dilation has no effect at kernel size 1.
    """

    def __init__(self, cin, cout, rng):
        super().__init__()
        self.c1 = self.add("c1", Conv2d(cin, cout, 1, rng))
        self.bn = self.add("bn", BatchNorm2d(cout))
        self.c3 = self.add("c3", Conv2d(cout, cout, 3, rng, padding=1))

    def forward(self, f_m):
        if f_m.shape[1] != self.c1.weight.shape[1]:
            raise ShapeError(f"mmu: input has {f_m.shape[1]} channels, C1 expects {self.c1.weight.shape[1]}")
        base = self.c1(f_m)
        return self.c3(gelu(self.bn(base))) + base


def mmu_adapt(f_m, block):
    return block(f_m)


def mmu_fuse(f_m, f_c, block):
    adapted = block(f_m)
    if adapted.shape[:2] != f_c.shape[:2]:
        raise ShapeError(f"mmu_fuse: adapted {adapted.shape} vs local {f_c.shape}")
    return _align(adapted, f_c) + f_c


class MpaHead(Module):
    """One square ``(W_p, b_p)`` per stage, applied along channels."""

    def __init__(self, channels, rng):
        super().__init__()
        self.channels = list(channels)
        self.weights, self.biases = [], []
        for i, c in enumerate(self.channels, start=1):
            self.weights.append(self.param(f"w{i}", rng.normal(0.0, 1.0 / np.sqrt(c), size=(c, c))))
            self.biases.append(self.param(f"b{i}", np.zeros(c)))


def mpa_project(f_t, head, stage):
    if not 1 <= stage <= len(head.weights):
        raise ArgumentError(f"mpa stage must be in [1, {len(head.weights)}], got {stage}")
    W, b = head.weights[stage - 1], head.biases[stage - 1]
    if f_t.shape[1] != W.shape[1]:
        raise ShapeError(f"mpa stage {stage}: {f_t.shape[1]} channels, head expects {W.shape[1]}")
    return channel_linear(f_t, W, b)
