"""Central finite-difference checks for the autodiff engine."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, precision


def _project(out, weights):
    # scalarize a non-scalar output with fixed random weights
    from .ops import mul, sum as tsum

    return tsum(mul(out, Tensor(weights)))


def numeric_grad(fn, arrays, index, h=1e-5):
    """d fn / d arrays[index] by central differences; ``fn`` maps arrays to a float."""
    base = [a.copy() for a in arrays]
    x = base[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = fn(base)
        x[i] = old - h
        fm = fn(base)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b, floor=1e-10):
    """Norm-wise relative error; both near zero counts as agreement."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if max(na, nb) < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / max(na, nb))


def gradcheck(op, arrays, h=1e-5, seed=0, wrt=None):
    """Compare analytic and numeric gradients of ``op`` in 64-bit precision.

    ``op(*tensors)`` returns a Tensor of any shape; a non-scalar output is
    reduced with fixed random weights first. Returns the worst relative error
    over the inputs listed in ``wrt`` (default: all of them).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    with precision("float64"):
        probe = op(*[Tensor(a) for a in arrays])
        weights = np.random.default_rng(seed).normal(size=probe.shape)

        def scalar(arrs):
            out = op(*[Tensor(a) for a in arrs])
            return float(np.sum(out.data * weights))

        leaves = [Tensor(a, requires_grad=i in wrt) for i, a in enumerate(arrays)]
        out = op(*leaves)
        backward(_project(out, weights))
        worst = 0.0
        for i in wrt:
            analytic = leaves[i].grad if leaves[i].grad is not None else np.zeros_like(arrays[i])
            worst = max(worst, rel_error(analytic, numeric_grad(scalar, arrays, i, h)))
    return worst
