"""Training losses over four-stage feature pyramids."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ConfigError, ShapeError
from .numerics import Tensor, cosine_similarity, mean, mse, ops, relu


@dataclass
class LossWeights:
    lambda_kr: float = 0.02
    lambda_prp: float = 0.02
    lambda_div: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ConfigError(f"loss.{k} must be non-negative, got {v}")


@dataclass
class DivThresholds:
    tau_low: float = 0.30
    tau_high: float = 0.75
    l_low: int = 2

    def __post_init__(self):
        for k in ("tau_low", "tau_high"):
            if not -1.0 <= getattr(self, k) <= 1.0:
                raise ConfigError(f"div.{k} must lie in [-1, 1]")
        if not 0 <= self.l_low <= 4:
            raise ConfigError("div.l_low must lie in [0, 4]")


def _check(p, q, name):
    if len(p) != len(q):
        raise ShapeError(f"{name}: pyramids have {len(p)} and {len(q)} stages")
    for i, (a, b) in enumerate(zip(p, q), start=1):
        if a.shape != b.shape:
            raise ShapeError(f"{name}: stage {i} shapes differ, {a.shape} vs {b.shape}")


def cos_flat(a, b):
    """Batch mean of one cosine per sample over all of its stage features."""
    n = a.shape[0]
    return mean(cosine_similarity(ops.reshape(a, (n, -1)), ops.reshape(b, (n, -1)), axis=1))


def _total(terms):
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def loss_kr(f_b, f_eu):
    _check(f_b, f_eu, "loss_kr")
    return _total([mse(t, s) for t, s in zip(f_b, f_eu)])


def loss_prp(f_b, f_ep, w):
    _check(f_b, f_ep, "loss_prp")
    terms = [mse(t, s) * w.alpha + (1.0 - cos_flat(t, s)) * w.beta for t, s in zip(f_b, f_ep)]
    return _total(terms)


def loss_div(f_eu, f_ep, thr):
    """Hinge on student-student cosine: push apart below ``l_low``, together above."""
    _check(f_eu, f_ep, "loss_div")
    terms = []
    for i, (a, b) in enumerate(zip(f_eu, f_ep), start=1):
        c = cos_flat(a, b)
        if i <= thr.l_low:
            terms.append(relu(c - thr.tau_low))
        else:
            # -min(0, c - tau_high) == max(0, tau_high - c)
            terms.append(relu(thr.tau_high - c))
    return _total(terms)


def loss_total(kr, prp, div, w):
    for k in ("lambda_kr", "lambda_prp", "lambda_div"):
        if getattr(w, k) < 0:
            raise ConfigError(f"{k} must be non-negative")
    return kr * w.lambda_kr + prp * w.lambda_prp + div * w.lambda_div


def zero_like(t):
    return Tensor(0.0, dtype=t.dtype)
