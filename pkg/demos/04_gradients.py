"""Finite-difference checks of the autodiff engine, op by op.

    python3 demos/04_gradients.py
"""
import numpy as np

from pdd.numerics import Tensor, backward, bilinear_resize, conv2d, gradcheck, mse, precision, scan_bidirectional

r = np.random.default_rng(0)

checks = {
    "conv2d 3x3 pad 1": (lambda x, w: conv2d(x, w, padding=1), [r.normal(size=(2, 3, 6, 6)), r.normal(size=(4, 3, 3, 3))]),
    "bilinear 3x4 -> 7x9": (lambda x: bilinear_resize(x, 7, 9), [r.normal(size=(1, 2, 3, 4))]),
    "bidirectional scan": (scan_bidirectional, [r.normal(size=(2, 3, 10)), r.uniform(0.2, 0.9, size=3)]),
    "mse": (mse, [r.normal(size=(3, 5)), r.normal(size=(3, 5))]),
}
for name, (fn, arrays) in checks.items():
    print(f"{name:22s} relative error {gradcheck(fn, arrays):.2e}")

# The same machinery by hand: d/dx mean((2x)^2) = 8x / n.
with precision("float64"):
    x = Tensor(r.normal(size=4), requires_grad=True)
    y = Tensor(np.zeros(4))
    loss = mse(x * 2.0, y)
    backward(loss)
print("analytic", np.round(x.grad, 6))
print("expected", np.round(8 * x.data / 4, 6))
