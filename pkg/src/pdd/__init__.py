"""Dual-teacher, dual-student reverse distillation for image anomaly detection.

Everything runs on numpy: a small autodiff engine (:mod:`pdd.numerics`),
frozen stand-in encoders, fusion modules, losses, a training loop, scoring
and metrics, plus a synthetic dataset generator for end-to-end checks.
"""
from importlib.metadata import PackageNotFoundError, version

from .config import Config

try:
    __version__ = version("artifact")
except PackageNotFoundError:      # running from a source tree
    __version__ = "0.1.0"

__all__ = ["Config", "__version__"]
