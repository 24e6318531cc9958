"""Minimal numpy tensor library with reverse-mode differentiation."""
from .module import BatchNorm2d, Conv2d, Module, channel_linear, he_normal
from .ops import (
    COS_EPS,
    add,
    batchnorm_infer,
    batchnorm_train,
    bilinear_resize,
    conv2d,
    cosine_similarity,
    gelu,
    linear,
    mean,
    mse,
    mul,
    relu,
    reshape,
    scan_bidirectional,
    sub,
    sum,
    transpose,
)
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .tensor import (
    Node,
    Tape,
    Tensor,
    as_tensor,
    backward,
    check_finite,
    default_dtype,
    no_grad,
    precision,
)
from .gradcheck import gradcheck, numeric_grad, rel_error
