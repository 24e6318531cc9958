"""Adam with bias correction, and a cosine-annealed learning rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, NonFiniteError, ShapeError


@dataclass
class LrSchedule:
    lr_max: float
    total_steps: int
    lr_min: float = 0.0

    def __post_init__(self):
        if self.total_steps < 0:
            raise ArgumentError("total_steps must be >= 0")


def lr_at(schedule, t):
    """Cosine annealing from ``lr_max`` at t=0 to ``lr_min`` at t=T."""
    T = schedule.total_steps
    if not 0 <= t <= T:
        raise ArgumentError(f"step {t} outside schedule [0, {T}]")
    if T == 0:
        return schedule.lr_max
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + math.cos(math.pi * t / T))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One in-place Adam update.

    ``params`` maps names to :class:`Tensor`; ``grads`` maps the same names
    to arrays (a missing or ``None`` gradient counts as zero). Moments are
    created lazily at zero. Non-finite gradients reject the whole step
    before anything is modified.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"grad for {name} has shape {g.shape}, param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("adam_step", f"non-finite gradient for parameter '{name}'")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        dtype = p.dtype
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape, dtype=dtype)
            state.v[name] = np.zeros(p.shape, dtype=dtype)
        v = state.v[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape, dtype=dtype)
        m = (b1 * m + (1.0 - b1) * g).astype(dtype)
        v = (b2 * v + (1.0 - b2) * g * g).astype(dtype)
        state.m[name], state.v[name] = m, v
        m_hat = m / dtype.type(c1)
        v_hat = v / dtype.type(c2)
        p.data = (p.data - dtype.type(lr) * m_hat / (np.sqrt(v_hat) + dtype.type(state.eps))).astype(dtype)
    return params, state
