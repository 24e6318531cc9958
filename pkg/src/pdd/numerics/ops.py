"""Differentiable primitives.

Every function takes and returns :class:`Tensor` values; the backward rule of
each op is a closure recorded on the tape by :func:`make`.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import ArgumentError, ShapeError
from .tensor import Tensor, as_tensor, make

COS_EPS = 1e-8


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make("add", a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make("sub", a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make("mul", a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, sa), _unbroadcast(g * a.data, sb)))


def relu(x):
    """max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0
    return make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,),
                lambda g: (g * mask,))


def gelu(x):
    """Exact GeLU, ``0.5 * x * (1 + erf(x / sqrt(2)))``."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))
    out = (x.data * cdf).astype(x.dtype)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + x.data * pdf),)

    return make("gelu", out, (x,), vjp)


# ------------------------------------------------------------------ reshaping

def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None):
    axes = _axes(axis, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    out = x.data.sum(axis=axes)
    return make("sum", np.asarray(out, dtype=x.dtype), (x,),
                lambda g: (np.broadcast_to(np.reshape(g, kept), shape),))


def mean(x, axis=None):
    axes = _axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axes), 1.0 / n)


def reshape(x, shape):
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return make("reshape", out, (x,), lambda g: (np.reshape(g, old),))


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,),
                lambda g: (g.transpose(inv),))


# ---------------------------------------------------------------- convolution

def conv_output_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2-D cross-correlation over ``[N, Cin, H, W]`` inputs."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and weight")
    N, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, weight expects {Cw}")
    if bias is not None and bias.shape != (O,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({O},)")
    Ho = conv_output_size(H, kh, stride, padding, dilation)
    Wo = conv_output_size(W, kw, stride, padding, dilation)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be {Ho}x{Wo}")

    # columns laid out [C, kh, kw, N, Ho, Wo] so one GEMM covers the batch
    xt = x.data.transpose(1, 0, 2, 3)
    if padding:
        xp = np.zeros((C, N, H + 2 * padding, W + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + H, padding:padding + W] = xt
    else:
        xp = xt
    hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
    K, L = C * kh * kw, N * Ho * Wo
    if kh == kw == 1 and stride == 1 and not padding:
        cols = np.ascontiguousarray(xp).reshape(K, L)
    else:
        cols = np.empty((C, kh, kw, N, Ho, Wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                r, c = i * dilation, j * dilation
                cols[:, i, j] = xp[:, :, r:r + hs:stride, c:c + ws:stride]
        cols = cols.reshape(K, L)
    w2 = weight.data.reshape(O, K)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(O, N, Ho, Wo).transpose(1, 0, 2, 3)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, L)
        gw = gx = gb = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=1)
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape(C, kh, kw, N, Ho, Wo)
            if kh == kw == 1 and stride == 1 and not padding:
                gxp = gcols.reshape(C, N, Ho, Wo)
            else:
                gxp = np.zeros(xp.shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        r, c = i * dilation, j * dilation
                        gxp[:, :, r:r + hs:stride, c:c + ws:stride] += gcols[:, i, j]
            gx = gxp[:, :, padding:padding + H, padding:padding + W] if padding else gxp
            gx = gx.transpose(1, 0, 2, 3)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make("conv2d", out, inputs, vjp)


# -------------------------------------------------------------- normalization

def _per_channel(v):
    return v.reshape(1, -1, 1, 1)


def batchnorm_infer(x, mean, var, gamma, beta, eps=1e-5):
    """Per-channel affine normalization with fixed statistics.

    ``mean`` and ``var`` are constants: no gradient flows to them.
    """
    mean, var = np.asarray(getattr(mean, "data", mean)), np.asarray(getattr(var, "data", var))
    if np.any(var < 0):
        raise ArgumentError("batchnorm_infer: negative variance")
    C = x.shape[1]
    for name, t in (("mean", mean), ("var", var), ("gamma", gamma.data), ("beta", beta.data)):
        if t.shape != (C,):
            raise ShapeError(f"batchnorm_infer: {name} shape {t.shape} != ({C},)")
    scale = 1.0 / np.sqrt(var.astype(x.dtype) + x.dtype.type(eps))
    xhat = (x.data - _per_channel(mean.astype(x.dtype))) * _per_channel(scale)
    out = _per_channel(gamma.data) * xhat + _per_channel(beta.data)

    def vjp(g):
        return (g * _per_channel(gamma.data * scale),
                (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))

    return make("batchnorm_infer", out.astype(x.dtype), (x, gamma, beta), vjp)


def batchnorm_train(x, gamma, beta, eps=1e-5):
    """Batch-statistics normalization.

    Returns ``(out, batch_mean, unbiased_batch_var)``; the statistics are
    plain arrays for running-average tracking.
    """
    axes = (0, 2, 3)
    M = x.shape[0] * x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    invstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - _per_channel(mu)) * _per_channel(invstd)
    out = _per_channel(gamma.data) * xhat + _per_channel(beta.data)

    def vjp(g):
        gg = g.sum(axis=axes)
        gxh = (g * xhat).sum(axis=axes)
        gx = (_per_channel(gamma.data * invstd / M)
              * (M * g - _per_channel(gg) - xhat * _per_channel(gxh)))
        return gx, gxh, gg

    unbiased = var * (M / (M - 1)) if M > 1 else var
    return make("batchnorm_train", out.astype(x.dtype), (x, gamma, beta), vjp), mu, unbiased


# -------------------------------------------------------------- interpolation

def _interp_matrix(n_in, n_out, dtype):
    """Row-stochastic matrix for half-pixel linear resampling with clamping."""
    A = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(math.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0 if i1 != i0 else 0.0
        A[o, i0] += 1.0 - frac
        A[o, i1] += frac
    return A.astype(dtype)


def bilinear_resize(x, out_h, out_w):
    """Bilinear resize of ``[N, C, h, w]`` (half-pixel centers, edge clamp)."""
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"bilinear_resize target must be positive, got {out_h}x{out_w}")
    if x.ndim != 4:
        raise ShapeError("bilinear_resize expects a 4-D tensor")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):
        return x
    Ah = _interp_matrix(h, out_h, x.dtype)
    Aw = _interp_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(Ah, x.data), Aw.T)
    return make("bilinear_resize", out, (x,),
                lambda g: (np.matmul(np.matmul(Ah.T, g), Aw),))


# -------------------------------------------------------------------- affine

def linear(x, W, b=None):
    """Affine map along the trailing axis: ``x @ W.T + b``."""
    Dout, Din = W.shape
    if x.shape[-1] != Din:
        raise ShapeError(f"linear: trailing dim {x.shape[-1]} != {Din}")
    if b is not None and b.shape != (Dout,):
        raise ShapeError(f"linear: bias shape {b.shape} != ({Dout},)")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def vjp(g):
        gx = g @ W.data if x.requires_grad else None
        gW = g.reshape(-1, Dout).T @ x.data.reshape(-1, Din) if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g.reshape(-1, Dout).sum(axis=0)

    inputs = (x, W) if b is None else (x, W, b)
    return make("linear", out, inputs, vjp)


# ------------------------------------------------------------------- similarity

def cosine_similarity(a, b, axis=-1, eps=COS_EPS):
    """``a.b / (|a| |b| + eps)`` reduced over ``axis``.

    A zero-norm operand gives 0 rather than NaN.
    """
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    axes = _axes(axis, a.ndim)
    s = (a.data * b.data).sum(axis=axes, keepdims=True)
    na = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axes, keepdims=True))
    D = na * nb + a.dtype.type(eps)
    out = np.squeeze(s / D, axis=axes)

    def vjp(g):
        g = np.expand_dims(g, axes)
        with np.errstate(invalid="ignore", divide="ignore"):
            ua = np.where(na > 0, a.data / np.where(na > 0, na, 1), 0)
            ub = np.where(nb > 0, b.data / np.where(nb > 0, nb, 1), 0)
        ga = g * (b.data / D - s * nb * ua / (D * D))
        gb = g * (a.data / D - s * na * ub / (D * D))
        return ga, gb

    return make("cosine_similarity", np.asarray(out, dtype=a.dtype), (a, b), vjp)


def mse(a, b):
    """Mean over all elements of ``(a - b) ** 2``."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: {a.shape} vs {b.shape}")
    d = a.data - b.data
    n = d.size
    out = np.asarray((d * d).sum() / n, dtype=a.dtype)
    return make("mse", out, (a, b),
                lambda g: (g * (2.0 / n) * d, g * (-2.0 / n) * d))


# ------------------------------------------------------------------------ scan

def _scan(x, a, reverse=False):
    out = np.empty_like(x)
    L = x.shape[-1]
    order = range(L - 1, -1, -1) if reverse else range(L)
    s = np.zeros(x.shape[:-1], dtype=x.dtype)
    for t in order:
        s = a * s + x[..., t]
        out[..., t] = s
    return out


def scan_bidirectional(x, a):
    """Average of forward and reversed decay scans over ``[N, C, L]``.

    Forward: ``s_t = a * s_{t-1} + x_t``; the reversed scan runs the same
    recurrence from the end. ``a`` is a per-channel gate of shape ``[C]``.
    """
    if x.ndim != 3 or a.shape != (x.shape[1],):
        raise ShapeError(f"scan_bidirectional: x {x.shape}, gate {a.shape}")
    gate = a.data
    fwd = _scan(x.data, gate[None, :])
    bwd = _scan(x.data, gate[None, :], reverse=True)
    out = 0.5 * (fwd + bwd)

    def vjp(g):
        lam = _scan(g, gate[None, :], reverse=True)   # adjoint of forward scan
        mu = _scan(g, gate[None, :])                  # adjoint of reversed scan
        gx = 0.5 * (lam + mu)
        ga = None
        if a.requires_grad:
            prev_f = np.concatenate([np.zeros_like(fwd[..., :1]), fwd[..., :-1]], axis=-1)
            next_b = np.concatenate([bwd[..., 1:], np.zeros_like(bwd[..., :1])], axis=-1)
            ga = 0.5 * ((lam * prev_f).sum(axis=(0, 2)) + (mu * next_b).sum(axis=(0, 2)))
        return gx, ga

    return make("scan_bidirectional", out, (x, a), vjp)


__all__ = [
    "add", "sub", "mul", "relu", "gelu", "sum", "mean", "reshape", "transpose",
    "conv2d", "conv_output_size", "batchnorm_infer", "batchnorm_train",
    "bilinear_resize", "linear", "cosine_similarity", "mse", "scan_bidirectional",
    "as_tensor", "COS_EPS",
]
