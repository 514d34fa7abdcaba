"""Independent numerical oracles: 2-D trapezoidal quadrature and
central-difference gradient checks."""

from __future__ import annotations

import numpy as np
import torch


def quadrature_integral(density, box, resolution: int = 200) -> float:
    """Trapezoidal integral of ``density`` over ``box = (x0, x1, y0, y1)``.

    ``density`` maps two equally shaped arrays ``(X, Y)`` to values; it is
    called once on the full ``resolution x resolution`` node mesh.
    """
    x0, x1, y0, y1 = box
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vals = np.asarray(density(X, Y), dtype=np.float64).reshape(X.shape)
    return float(np.trapezoid(np.trapezoid(vals, xs, axis=1), ys))


def _flat_grad(fn, params: torch.Tensor):
    p = params.detach().clone().requires_grad_(True)
    out = fn(p)
    (g,) = torch.autograd.grad(out, p, allow_unused=True)
    return torch.zeros_like(p) if g is None else g.detach()


def finite_diff_grad(fn, params, eps: float = 1e-6, coords=None, rel_floor: float = 1e-3):
    """Worst relative error between autograd and central differences.

    ``fn`` maps a flat float64 tensor to a scalar tensor.  ``coords``
    restricts the check to a subset of indices.  Per coordinate the error is
    ``|fd - ad| / max(|fd|, |ad|, rel_floor * max|ad|)`` so that entries
    which are tiny relative to the whole gradient are judged on the
    gradient's scale rather than their own.
    """
    params = torch.as_tensor(params, dtype=torch.float64).detach().reshape(-1)
    ad = _flat_grad(fn, params)
    idx = range(params.numel()) if coords is None else coords
    scale = float(ad.abs().max()) * rel_floor
    worst = 0.0
    with torch.no_grad():
        for i in idx:
            e = torch.zeros_like(params)
            e[i] = eps
            fd = (float(fn(params + e)) - float(fn(params - e))) / (2 * eps)
            a = float(ad[i])
            denom = max(abs(fd), abs(a), scale)
            if denom == 0.0:
                continue
            worst = max(worst, abs(fd - a) / denom)
    return worst


class _LossWrapper(torch.nn.Module):
    def __init__(self, inner: torch.nn.Module, loss_fn):
        super().__init__()
        self.inner = inner
        self.loss_fn = loss_fn

    def forward(self):
        return self.loss_fn(self.inner)


def module_grad_check(module: torch.nn.Module, loss_fn, eps: float = 1e-6, max_coords: int | None = None,
                      seed: int = 0, params=None) -> float:
    """:func:`finite_diff_grad` over a module's parameters (double precision).

    ``loss_fn(module)`` returns a scalar.  ``params`` limits the check to a
    list of the module's parameters; ``max_coords`` to a random subset.
    """
    module.double()
    plist = list(module.parameters()) if params is None else list(params)
    names = {id(p): n for n, p in module.named_parameters()}
    keys = ["inner." + names[id(p)] for p in plist]
    shapes = [p.shape for p in plist]
    sizes = [p.numel() for p in plist]
    base = torch.cat([p.detach().reshape(-1) for p in plist])
    wrapper = _LossWrapper(module, loss_fn)

    def fn(vec):
        chunks = torch.split(vec, sizes)
        override = {k: c.view(s) for k, c, s in zip(keys, chunks, shapes)}
        return torch.func.functional_call(wrapper, override, ())

    coords = None
    if max_coords is not None and base.numel() > max_coords:
        rng = np.random.default_rng(seed)
        coords = sorted(rng.choice(base.numel(), size=max_coords, replace=False).tolist())
    return finite_diff_grad(fn, base, eps, coords)
