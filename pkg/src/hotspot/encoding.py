"""Event encoders: learnable continuous-time encoding, fixed sinusoidal
spatial encoding and the target-aware location/type encoding."""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import InvalidArgument


def temporal_encode(t: torch.Tensor, omega: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Linear first coordinate, sinusoids after it.

    ``t`` has any shape; the result appends a trailing axis of size ``len(omega)``.
    """
    if omega.shape != alpha.shape:
        raise InvalidArgument("omega and alpha must have the same length")
    z = t.unsqueeze(-1) * omega + alpha
    return torch.cat([z[..., :1], torch.sin(z[..., 1:])], dim=-1)


def positional_encode(pos: torch.Tensor, half_dim: int) -> torch.Tensor:
    """Transformer sinusoid table evaluated at real positions."""
    pos = torch.as_tensor(pos)
    if not pos.is_floating_point():
        pos = pos.double()
    j = torch.arange(half_dim, device=pos.device)
    k = torch.div(j, 2, rounding_mode="floor").to(pos.dtype)
    scale = torch.pow(torch.tensor(10000.0, dtype=pos.dtype), 2.0 * k / half_dim)
    arg = pos.unsqueeze(-1) / scale
    return torch.where(j % 2 == 0, torch.sin(arg), torch.cos(arg))


def spatial_encode(xy: torch.Tensor, dim: int) -> torch.Tensor:
    """``phi(x) || phi(y)`` for standardized coordinates ``xy[..., 0:2]``."""
    if dim % 2:
        raise InvalidArgument(f"spatial encoding dimension must be even, got {dim}")
    half = dim // 2
    return torch.cat([positional_encode(xy[..., 0], half), positional_encode(xy[..., 1], half)], dim=-1)


class TemporalEncoder(nn.Module):
    def __init__(self, dim: int, horizon_days: float = 1.0, generator: torch.Generator | None = None):
        super().__init__()
        if dim < 2:
            raise InvalidArgument("temporal encoding needs at least 2 dimensions")
        # log-uniform frequencies in [0.1, 100] rad/day; the linear slot is scaled to the horizon
        u = torch.rand(dim, generator=generator, dtype=torch.float64)
        omega = torch.exp(math.log(0.1) + u * (math.log(100.0) - math.log(0.1)))
        omega[0] = 1.0 / max(horizon_days, 1.0)
        self.omega = nn.Parameter(omega.float())
        self.alpha = nn.Parameter(torch.zeros(dim))

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return temporal_encode(t.to(self.omega.dtype), self.omega, self.alpha)


class TargetAwareEncoder(nn.Module):
    """``v_r = W_loc (g* || g)  ||  W_type (c* || c)``.

    Each half has ``out_dim // 2`` rows; ``W_loc`` reads ``2 * embed_dim``
    inputs and ``W_type`` reads ``2 * n_types`` one-hot inputs.
    """

    def __init__(self, embed_dim: int, n_types: int, out_dim: int):
        super().__init__()
        if out_dim % 2:
            raise InvalidArgument(f"target-aware dimension must be even, got {out_dim}")
        self.embed_dim = embed_dim
        self.n_types = n_types
        self.half = out_dim // 2
        self.w_loc = nn.Linear(2 * embed_dim, self.half, bias=False)
        self.w_type = nn.Linear(2 * n_types, self.half, bias=False)

    @property
    def out_dim(self) -> int:
        return 2 * self.half

    def forward(self, g_star, g, c_star, c):
        if g_star.shape[-1] != self.embed_dim or g.shape[-1] != self.embed_dim:
            raise InvalidArgument("grid embedding width does not match the encoder")
        if c_star.shape[-1] != self.n_types or c.shape[-1] != self.n_types:
            raise InvalidArgument("type one-hot width does not match the encoder")
        lead = torch.broadcast_shapes(g_star.shape[:-1], g.shape[:-1], c_star.shape[:-1], c.shape[:-1])
        g_star, g = (x.expand(*lead, self.embed_dim) for x in (g_star, g))
        c_star, c = (x.expand(*lead, self.n_types) for x in (c_star, c))
        v_loc = self.w_loc(torch.cat([g_star, g], dim=-1))
        v_type = self.w_type(torch.cat([c_star, c], dim=-1))
        return torch.cat([v_loc, v_type], dim=-1)

    # W (a || b) = W_a a + W_b b: batch code computes the target and event
    # halves once each and sums them instead of concatenating per pair
    def loc_target(self, g_star):
        return g_star @ self.w_loc.weight[:, : self.embed_dim].T

    def loc_event(self, g):
        return g @ self.w_loc.weight[:, self.embed_dim:].T

    def type_target(self, c_star):
        return c_star @ self.w_type.weight[:, : self.n_types].T

    def type_event(self, c):
        return c @ self.w_type.weight[:, self.n_types:].T

    def type_encoding(self, c_star_id: int, c_ids: torch.Tensor) -> torch.Tensor:
        """``v_type`` for integer type ids against target ``c_star_id``."""
        w = self.w_type.weight
        return w[:, c_star_id] + w[:, self.n_types:].T[c_ids]

    def location_encoding(self, g_star: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        return self.loc_target(g_star) + self.loc_event(g)
