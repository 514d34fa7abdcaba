"""Fixed-step RK4, differentiated by autograd through the discrete steps."""

from __future__ import annotations

import torch

from .errors import InvalidArgument


def _b(dt, y):
    """Reshape a per-row step size so it broadcasts against ``y``."""
    if not torch.is_tensor(dt) or dt.dim() == 0:
        return dt
    return dt.reshape(dt.shape + (1,) * (y.dim() - dt.dim()))


def rk4_step(f, t, y, dt):
    """One classic RK4 step.

    ``y`` is a tensor or a tuple of tensors (then ``f`` returns a matching
    tuple).  ``dt`` may be a scalar or a per-row tensor.
    """
    tup = isinstance(y, tuple)
    ys = y if tup else (y,)
    g = f if tup else (lambda t_, y_: (f(t_, y_[0]),))

    def add(a, k, s):
        return tuple(ai + _b(s, ai) * ki for ai, ki in zip(a, k))

    k1 = g(t, ys)
    k2 = g(t + dt / 2, add(ys, k1, dt / 2))
    k3 = g(t + dt / 2, add(ys, k2, dt / 2))
    k4 = g(t + dt, add(ys, k3, dt))
    out = tuple(yi + _b(dt, yi) / 6 * (a + 2 * b + 2 * c + d) for yi, a, b, c, d in zip(ys, k1, k2, k3, k4))
    return out if tup else out[0]


def rk4(f, y, t0, t1, steps: int = 20):
    """Integrate ``dy/dt = f(t, y)`` from ``t0`` to ``t1`` in ``steps`` equal steps."""
    if steps < 1:
        raise InvalidArgument("steps must be >= 1")
    dt = (t1 - t0) / steps
    t = t0
    for _ in range(steps):
        y = rk4_step(f, t, y, dt)
        t = t + dt
    return y


def hermite_midpoint(y0, y1, f0, f1, dt):
    """Cubic Hermite value at the midpoint of a step from slopes at both ends."""
    return 0.5 * (y0 + y1) + _b(dt, y0) / 8 * (f0 - f1)
