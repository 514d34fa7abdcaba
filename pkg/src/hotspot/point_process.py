"""Type-aware spatiotemporal point process.

One :class:`TypeProcess` models one crime type on the packed one-day axis
``tau in [0, 1)``.  Each day ``delta`` carries its own hidden state, started
from the shared Gaussian draw ``h0`` and driven by that day's records (all
types), so the compensator integrates a per-day intensity.

Spatial densities live on the unit square ``z = (x / W, y / H)`` of the
city box.  The base density at ``tau = 0`` is uniform there, which is the
standard Gaussian in probit coordinates ``u = Phi^-1(z)``.  Both the flow
field and the event jumps fix the square's boundary, so every density the
model produces integrates to one over the box and stays bounded.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import EmptyDatasetError, InvalidArgument, NumericalError, TrainingDiverged
from .ode import hermite_midpoint, rk4

log = logging.getLogger(__name__)

DAY_FEATURES = 8
LOG_2PI = math.log(2 * math.pi)


def day_features(day, epoch_weekday: int, day_scale: float) -> torch.Tensor:
    """Day-of-week one-hot (7) followed by the scaled day index."""
    day = torch.as_tensor(day, dtype=torch.int64)
    dow = F.one_hot((day + int(epoch_weekday)) % 7, 7).float()
    return torch.cat([dow, (day.float() / float(day_scale)).unsqueeze(-1)], dim=-1)


class TangentMLP(nn.Module):
    """Two-hidden-layer tanh MLP over ``(state, cond)`` that also returns the
    exact Jacobian with respect to ``state`` by forward-mode propagation."""

    def __init__(self, n_state: int, n_cond: int, hidden: int, n_out: int):
        super().__init__()
        self.n_state = n_state
        self.l1 = nn.Linear(n_state + n_cond, hidden)
        self.l2 = nn.Linear(hidden, hidden)
        self.l3 = nn.Linear(hidden, n_out)

    def cond_term(self, cond: torch.Tensor) -> torch.Tensor:
        return cond @ self.l1.weight[:, self.n_state:].T + self.l1.bias

    def forward(self, u: torch.Tensor, cond_term: torch.Tensor):
        w1 = self.l1.weight[:, : self.n_state]
        a1 = torch.tanh(u @ w1.T + cond_term)
        d1 = (1 - a1 ** 2).unsqueeze(-1) * w1
        a2 = torch.tanh(self.l2(a1))
        d2 = (1 - a2 ** 2).unsqueeze(-1) * torch.matmul(self.l2.weight, d1)
        out = self.l3(a2)
        jac = torch.matmul(self.l3.weight, d2)
        return out, jac


class BoxCoupling(nn.Module):
    """Two-step coupling on the unit square, conditioned on a context vector.

    Each step warps one coordinate by ``z -> z + e z (1 - z)`` with
    ``|e| < bound < 1`` computed from the other coordinate, so the endpoints
    stay fixed and the slope stays within ``[1 - bound, 1 + bound]``.
    Output layers start at zero so the map starts as the identity.
    """

    def __init__(self, n_cond: int, hidden: int, bound: float = 0.9):
        super().__init__()
        if not 0 < bound < 1:
            raise InvalidArgument("coupling bound must lie in (0, 1)")
        self.bound = bound
        self.in1 = nn.Linear(1 + n_cond, hidden)
        self.out1 = nn.Linear(hidden, 1)
        self.in2 = nn.Linear(1 + n_cond, hidden)
        self.out2 = nn.Linear(hidden, 1)
        for lin in (self.out1, self.out2):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def _eps(self, lin_in, lin_out, z, cond):
        w = lin_in.weight
        hid = torch.tanh((2 * z - 1).unsqueeze(-1) * w[:, 0] + cond @ w[:, 1:].T + lin_in.bias)
        return self.bound * torch.tanh(lin_out(hid).squeeze(-1))

    @staticmethod
    def _warp(z, e):
        return z + e * z * (1 - z), torch.log1p(e * (1 - 2 * z))

    @staticmethod
    def _unwarp(y, e):
        # root of e z^2 - (1 + e) z + y = 0 in [0, 1], written without dividing by e
        disc = ((1 + e) ** 2 - 4 * e * y).clamp_min(0.0)
        return 2 * y / ((1 + e) + torch.sqrt(disc))

    def forward(self, z, cond):
        e1 = self._eps(self.in1, self.out1, z[..., 1], cond)
        x1, l1 = self._warp(z[..., 0], e1)
        e2 = self._eps(self.in2, self.out2, x1, cond)
        x2, l2 = self._warp(z[..., 1], e2)
        return torch.stack([x1, x2], dim=-1), l1 + l2

    def inverse(self, v, cond):
        """Pre-image of ``v`` and the forward log-determinant at that pre-image."""
        e2 = self._eps(self.in2, self.out2, v[..., 0], cond)
        z2 = self._unwarp(v[..., 1], e2)
        e1 = self._eps(self.in1, self.out1, z2, cond)
        z1 = self._unwarp(v[..., 0], e1)
        logdet = torch.log1p(e1 * (1 - 2 * z1)) + torch.log1p(e2 * (1 - 2 * z2))
        return torch.stack([z1, z2], dim=-1), logdet


@dataclass
class SequenceBatch:
    """Padded per-day event sequences on the packed axis.

    Row ``b`` holds the events of day ``day[b]`` with ``tau`` sorted ascending;
    padding slots have ``tau = horizon`` and ``emask = False``.
    """

    tau: torch.Tensor        # (B, K)
    emask: torch.Tensor      # (B, K) real events
    target: torch.Tensor     # (B, K) events of the modelled type
    vtype: torch.Tensor      # (B, K, type_dim)
    ctx: torch.Tensor        # (B, K, ctx_dim)
    xy: torch.Tensor         # (B, K, 2) kilometres
    dayfeat: torch.Tensor    # (B, DAY_FEATURES)
    horizon: torch.Tensor    # (B,)
    day: torch.Tensor        # (B,)

    def __len__(self) -> int:
        return self.tau.shape[0]

    @property
    def n_target(self) -> int:
        return int((self.emask & self.target).sum())

    def rows(self, idx) -> "SequenceBatch":
        idx = torch.as_tensor(idx)
        k = max(int(self.emask[idx].sum(1).max()) if len(idx) else 0, 1)
        return SequenceBatch(*(getattr(self, f)[idx][:, :k] if getattr(self, f).dim() >= 2 and f in _EVENT_FIELDS
                               else getattr(self, f)[idx] for f in _FIELDS))

    def to(self, dtype) -> "SequenceBatch":
        return SequenceBatch(*(getattr(self, f).to(dtype) if getattr(self, f).is_floating_point()
                               else getattr(self, f) for f in _FIELDS))


_FIELDS = ("tau", "emask", "target", "vtype", "ctx", "xy", "dayfeat", "horizon", "day")
_EVENT_FIELDS = {"tau", "emask", "target", "vtype", "ctx", "xy"}


class TypeProcess(nn.Module):
    def __init__(self, hidden_dim: int, ctx_dim: int, type_dim: int, extent_km, mlp_hidden: int = 64,
                 ode_steps: int = 20, rate_scale: float = 1.0, seed: int = 0):
        super().__init__()
        if ode_steps < 1:
            raise InvalidArgument("ode_steps must be >= 1")
        self.hidden_dim, self.ctx_dim, self.type_dim = hidden_dim, ctx_dim, type_dim
        self.ode_steps = ode_steps
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.register_buffer("h0", torch.randn(hidden_dim))
            self.f_t = nn.Sequential(nn.Linear(hidden_dim + 1 + DAY_FEATURES, mlp_hidden), nn.Tanh(),
                                     nn.Linear(mlp_hidden, hidden_dim), nn.Tanh())
            self.jump_t = nn.GRUCell(1 + type_dim + DAY_FEATURES, hidden_dim)
            self.intensity = nn.Sequential(nn.Linear(hidden_dim, mlp_hidden), nn.Tanh(), nn.Linear(mlp_hidden, 1))
            self.f_s = TangentMLP(2, 1 + hidden_dim, mlp_hidden, 2)
            self.jump_s = BoxCoupling(1 + hidden_dim + ctx_dim, mlp_hidden)
            with torch.no_grad():
                self.f_s.l3.weight.mul_(0.1)
                self.f_s.l3.bias.zero_()
        self.register_buffer("rate_scale", torch.tensor(float(rate_scale)))
        self.register_buffer("extent_km", torch.as_tensor(extent_km, dtype=torch.float32))

    # -- building blocks ---------------------------------------------------

    def dynamics(self, tau, h, dayfeat):
        tau = torch.as_tensor(tau, dtype=h.dtype)
        tau = tau.expand(h.shape[:-1]).unsqueeze(-1) if tau.dim() < h.dim() else tau
        return self.f_t(torch.cat([h, tau, dayfeat.expand(*h.shape[:-1], -1)], dim=-1))

    def jump(self, h, tau_r, vtype, dayfeat):
        tau_r = torch.as_tensor(tau_r, dtype=h.dtype).expand(h.shape[:-1]).unsqueeze(-1)
        inp = torch.cat([tau_r, vtype.expand(*h.shape[:-1], -1), dayfeat.expand(*h.shape[:-1], -1)], dim=-1)
        return self.jump_t(inp, h)

    def lam(self, h):
        return self.rate_scale * F.softplus(self.intensity(h).squeeze(-1))

    def spatial_field(self, tau, z, h):
        """Velocity ``z (1 - z) g(2z - 1, tau, h)`` on the unit square and its
        divergence, for particles ``z`` (B, P, 2) and rows ``h`` (B, d)."""
        tau = torch.as_tensor(tau, dtype=h.dtype).expand(h.shape[:-1]).unsqueeze(-1)
        ct = self.f_s.cond_term(torch.cat([tau, h], dim=-1)).unsqueeze(-2)
        g, jac = self.f_s(2 * z - 1, ct)
        w = z * (1 - z)
        div = ((1 - 2 * z) * g).sum(-1) + 2 * (w[..., 0] * jac[..., 0, 0] + w[..., 1] * jac[..., 1, 1])
        return w * g, div

    def to_flow(self, xy_km):
        """Unit-square coordinates and ``log|dz/dx|`` (constant over the box)."""
        ext = self.extent_km.to(xy_km.dtype)
        z = (xy_km / ext).clamp(0.0, 1.0)
        return z, -torch.log(ext).sum().expand(xy_km.shape[:-1])

    def from_flow(self, z):
        return z * self.extent_km.to(z.dtype)

    # -- the sweep -----------------------------------------------------------

    def sweep(self, batch: SequenceBatch, particles=None, want_spatial: bool = True):
        """Forward hidden-state pass and reverse spatial pass over a batch of days.

        ``particles`` is ``(xy_km (B, P, 2), start (B, P), mask (B, P))`` where
        ``start`` is the 1-based event index at whose (pre-jump) time the
        particle is evaluated; ``K + 1`` means the horizon.  Defaults to the
        target events of each row.
        """
        B, K = batch.tau.shape
        S = self.ode_steps
        dtype = self.h0.dtype
        tau = batch.tau.to(dtype)
        horizon = batch.horizon.to(dtype)
        dayfeat = batch.dayfeat.to(dtype)
        h = self.h0.to(dtype).expand(B, -1)
        Lam = torch.zeros(B, dtype=dtype)
        segs, h_pre, loglam = [], [], []
        prev = torch.zeros(B, dtype=dtype)

        def field(t, y):
            hh, _ = y
            return self.dynamics(t, hh, dayfeat), self.lam(hh)

        for k in range(K + 1):
            end = tau[:, k] if k < K else horizon
            dt = (end - prev) / S
            nodes_h, nodes_f = [h], []
            t = prev
            for _ in range(S):
                k1 = field(t, (h, Lam))
                nodes_f.append(k1[0])
                hm1, Lm1 = h + dt[:, None] / 2 * k1[0], Lam + dt / 2 * k1[1]
                k2 = field(t + dt / 2, (hm1, Lm1))
                hm2, Lm2 = h + dt[:, None] / 2 * k2[0], Lam + dt / 2 * k2[1]
                k3 = field(t + dt / 2, (hm2, Lm2))
                k4 = field(t + dt, (h + dt[:, None] * k3[0], Lam + dt * k3[1]))
                h = h + dt[:, None] / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                Lam = Lam + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
                t = t + dt
                nodes_h.append(h)
            if want_spatial:
                nodes_f.append(self.dynamics(end, h, dayfeat))
                segs.append((prev, dt, nodes_h, nodes_f))
            if k < K:
                h_pre.append(h)
                loglam.append(torch.log(self.lam(h)))
                hj = self.jump(h, tau[:, k], batch.vtype[:, k].to(dtype), dayfeat)
                h = torch.where(batch.emask[:, k, None], hj, h)
            prev = end
        if not torch.isfinite(Lam).all() or not torch.isfinite(h).all():
            raise NumericalError("hidden-state integration produced non-finite values")
        out = {
            "h_end": h,
            "lam_end": self.lam(h),
            "Lambda": Lam,
            "loglam": torch.stack(loglam, 1) if K else torch.zeros(B, 0, dtype=dtype),
            "h_pre": torch.stack(h_pre, 1) if K else torch.zeros(B, 0, self.hidden_dim, dtype=dtype),
        }
        if not want_spatial:
            return out
        if particles is None:
            start = torch.arange(1, K + 1).expand(B, K)
            particles = (batch.xy, start, batch.emask & batch.target)
        pxy, pstart, pmask = particles
        out["logp"] = self._reverse(batch, segs, out["h_pre"], pxy.to(dtype), pstart, pmask, dtype)
        return out

    def _reverse(self, batch, segs, h_pre, pxy, pstart, pmask, dtype):
        B, K = batch.tau.shape
        S = self.ode_steps
        u0, logjac = self.to_flow(pxy)
        u = u0
        acc = torch.zeros(pxy.shape[:-1], dtype=dtype)
        active = torch.zeros_like(pmask)
        # particles whose start lies before segment k are idle there; when the
        # latest start per column is non-decreasing they form a prefix we skip
        colmax = torch.where(pmask, pstart, torch.zeros_like(pstart)).max(0).values
        sorted_cols = bool((colmax[1:] >= colmax[:-1]).all())
        for k in range(K, -1, -1):
            active = active | (pmask & (pstart == k + 1))
            lo = int((colmax < k + 1).sum()) if sorted_cols else 0
            if lo == u.shape[1]:
                continue
            act = active[:, lo:]
            am = act.unsqueeze(-1)
            w, a, w0 = u[:, lo:], acc[:, lo:], u0[:, lo:]
            w = torch.where(am, w, w0)
            t0, dt, nodes_h, nodes_f = segs[k]
            d3 = dt[:, None, None]
            for n in range(S - 1, -1, -1):
                hi, hl = nodes_h[n + 1], nodes_h[n]
                mid = hermite_midpoint(hl, hi, nodes_f[n], nodes_f[n + 1], dt)
                t_hi = t0 + (n + 1) * dt
                f1, r1 = self.spatial_field(t_hi, w, hi)
                f2, r2 = self.spatial_field(t_hi - dt / 2, w - d3 / 2 * f1, mid)
                f3, r3 = self.spatial_field(t_hi - dt / 2, w - d3 / 2 * f2, mid)
                f4, r4 = self.spatial_field(t0 + n * dt, w - d3 * f3, hl)
                w = torch.where(am, w - d3 / 6 * (f1 + 2 * f2 + 2 * f3 + f4), w0)
                a = torch.where(act, a + dt[:, None] / 6 * (r1 + 2 * r2 + 2 * r3 + r4), a)
            if k >= 1:
                j = k - 1
                cond = torch.cat([batch.tau[:, j, None].to(dtype), h_pre[:, j], batch.ctx[:, j].to(dtype)], dim=-1)
                w_prev, logdet = self.jump_s.inverse(w, cond.unsqueeze(-2))
                jm = act & batch.emask[:, j, None]
                w = torch.where(jm.unsqueeze(-1), w_prev, w)
                a = torch.where(jm, a + logdet, a)
            u = torch.cat([u[:, :lo], w], 1)
            acc = torch.cat([acc[:, :lo], a], 1)
        logp = -acc + logjac
        if not torch.isfinite(torch.where(pmask, logp, 0.0)).all():
            raise NumericalError("spatial flow produced non-finite log-densities")
        return torch.where(pmask, logp, torch.zeros_like(logp))


# ---------------------------------------------------------------------------
# Functional surface
# ---------------------------------------------------------------------------


def evolve_hidden(process: TypeProcess, h, tau_from: float, tau_to: float, dayfeat, steps: int | None = None):
    """Integrate the hidden-state ODE over ``[tau_from, tau_to]`` without jumps."""
    if tau_to < tau_from:
        raise InvalidArgument("tau_to must not precede tau_from")
    if tau_to == tau_from:
        return h
    out = rk4(lambda t, y: process.dynamics(t, y, dayfeat), h, tau_from, tau_to, steps or process.ode_steps)
    if not torch.isfinite(out).all():
        raise NumericalError(f"hidden state diverged on [{tau_from}, {tau_to}]")
    return out


def jump_hidden(process: TypeProcess, h, tau_r: float, vtype, dayfeat):
    return process.jump(h, tau_r, vtype, dayfeat)


def temporal_intensity(process: TypeProcess, h):
    return process.lam(h)


def spatial_log_density(process: TypeProcess, xy_km, tau_bar: float, batch: SequenceBatch):
    """``log p*(s | tau_bar)`` in per-km^2 units for locations ``xy_km`` (P, 2).

    ``batch`` must be a single row whose events all precede ``tau_bar``; the
    horizon is reset to ``tau_bar``.
    """
    if len(batch) != 1:
        raise InvalidArgument("spatial_log_density takes a single-row batch")
    if not 0.0 <= tau_bar <= 1.0:
        raise InvalidArgument("tau_bar must lie in [0, 1]")
    if bool((batch.emask & (batch.tau >= tau_bar)).any()):
        raise InvalidArgument("history contains events at or after tau_bar")
    xy = torch.as_tensor(xy_km).reshape(1, -1, 2)
    K = batch.tau.shape[1]
    row = SequenceBatch(torch.where(batch.emask, batch.tau, torch.full_like(batch.tau, tau_bar)),
                        batch.emask, batch.target, batch.vtype, batch.ctx, batch.xy, batch.dayfeat,
                        torch.full_like(batch.horizon, tau_bar), batch.day)
    P = xy.shape[1]
    particles = (xy, torch.full((1, P), K + 1), torch.ones(1, P, dtype=torch.bool))
    return process.sweep(row, particles)["logp"][0]


def latent_log_density(process: TypeProcess, u, tau_bar: float, batch: SequenceBatch):
    """Density of the same distribution in probit coordinates ``u = Phi^-1(x / W)``.

    With no flow and no jumps this is the standard bivariate Gaussian.
    """
    u = torch.as_tensor(u)
    ext = process.extent_km.to(u.dtype)
    xy = torch.special.ndtr(u) * ext
    log_phi = -0.5 * u ** 2 - 0.5 * LOG_2PI
    return spatial_log_density(process, xy, tau_bar, batch) + torch.log(ext).sum() + log_phi.sum(-1)


def log_likelihood(process: TypeProcess, batch: SequenceBatch, per_row: bool = False):
    """Per-day ``sum log lambda - int lambda + sum log p`` over target events."""
    out = process.sweep(batch)
    tmask = batch.emask & batch.target
    ll = (out["loglam"] * tmask).sum(1) - out["Lambda"] + out["logp"].sum(1)
    return ll if per_row else ll.sum()


@dataclass(frozen=True)
class MLEConfig:
    epochs: int = 50
    lr: float = 1e-2
    weight_decay: float = 5e-5
    batch_days: int = 32
    optimizer: str = "adamw"
    grad_clip: float = 10.0
    seed: int = 0


def train_mle(process: TypeProcess, data: SequenceBatch, config: MLEConfig = MLEConfig(), callback=None):
    """Maximise the per-day mean log-likelihood; returns the per-epoch mean NLL trace.

    ``callback(epoch, nll)`` runs after every epoch.
    """
    if data.n_target == 0:
        raise EmptyDatasetError("no events of the modelled type to fit")
    opt = build_optimizer(process.parameters(), config.optimizer, config.lr, config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    n = len(data)
    trace = []
    for epoch in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        last_good = {k: v.detach().clone() for k, v in process.state_dict().items()}
        for start in range(0, n, config.batch_days):
            rows = data.rows(perm[start:start + config.batch_days])
            opt.zero_grad()
            loss = -log_likelihood(process, rows) / n
            if not torch.isfinite(loss):
                process.load_state_dict(last_good)
                raise TrainingDiverged("stage2", epoch, last_good)
            loss.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(process.parameters(), config.grad_clip)
            opt.step()
            total += loss.item()
        trace.append(total)
        log.info("mle epoch %d nll/day %.4f", epoch, total)
        if callback is not None:
            callback(epoch, total)
    return trace


class DecoupledSGD(torch.optim.Optimizer):
    """Plain gradient descent with decoupled weight decay."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        super().__init__(params, {"lr": lr, "weight_decay": weight_decay})

    @torch.no_grad()
    def step(self, closure=None):
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                if group["weight_decay"]:
                    p.mul_(1 - group["lr"] * group["weight_decay"])
                p.add_(p.grad, alpha=-group["lr"])


def build_optimizer(params, name: str, lr: float, weight_decay: float) -> torch.optim.Optimizer:
    if name == "adamw":
        return torch.optim.AdamW(list(params), lr=lr, weight_decay=weight_decay)
    if name == "sgd":
        return DecoupledSGD(list(params), lr=lr, weight_decay=weight_decay)
    raise InvalidArgument(f"unknown optimizer {name!r}")


def build_sequences(t, day, tod, type_, xy, vtype, ctx, c_star: int, row_day, row_horizon, row_cutoff,
                    dayfeat: torch.Tensor) -> SequenceBatch:
    """Pad per-row event sequences.

    Event arrays are time-sorted.  Row ``b`` takes the events of day
    ``row_day[b]`` with ``tod < row_horizon[b]`` and ``t < row_cutoff[b]``.
    ``vtype``/``ctx`` are per-event tensors aligned with the arrays.
    """
    t = np.asarray(t, dtype=np.float64)
    day = np.asarray(day)
    row_day = np.asarray(row_day, dtype=np.int64)
    row_horizon = np.asarray(row_horizon, dtype=np.float64)
    row_cutoff = np.asarray(row_cutoff, dtype=np.float64)
    lo = np.searchsorted(t, row_day.astype(np.float64), side="left")
    hi = np.searchsorted(t, np.minimum(row_day + row_horizon, row_cutoff), side="left")
    hi = np.maximum(hi, lo)
    counts = hi - lo
    B, K = len(row_day), max(int(counts.max()) if len(counts) else 0, 1)
    idx = np.zeros((B, K), dtype=np.int64)
    emask = np.zeros((B, K), dtype=bool)
    for b in range(B):
        n = counts[b]
        idx[b, :n] = np.arange(lo[b], hi[b])
        emask[b, :n] = True
    idx_t = torch.as_tensor(idx)
    em = torch.as_tensor(emask)
    horizon = torch.as_tensor(row_horizon, dtype=torch.float32)
    tau = torch.where(em, torch.as_tensor(np.asarray(tod, dtype=np.float64)[idx], dtype=torch.float32),
                      horizon[:, None].expand(B, K))
    target = torch.as_tensor(np.asarray(type_)[idx] == c_star) & em
    return SequenceBatch(
        tau=tau, emask=em, target=target,
        vtype=vtype[idx_t] * em[..., None], ctx=ctx[idx_t] * em[..., None],
        xy=torch.as_tensor(np.asarray(xy, dtype=np.float64)[idx], dtype=torch.float32),
        dayfeat=dayfeat, horizon=horizon, day=torch.as_tensor(row_day),
    )


class EvolvingEncoder(nn.Module):
    """MLP over ``(log risk, h, day features, dt, ds)`` producing the evolving feature."""

    def __init__(self, hidden_dim: int, out_dim: int, mlp_hidden: int = 64):
        super().__init__()
        self.in_dim = 1 + hidden_dim + DAY_FEATURES + 2
        self.net = nn.Sequential(nn.Linear(self.in_dim, mlp_hidden), nn.Tanh(), nn.Linear(mlp_hidden, out_dim))

    def forward(self, log_risk, h, dayfeat, dt, ds):
        lead = log_risk.shape
        x = torch.cat([log_risk.unsqueeze(-1), h.expand(*lead, -1), dayfeat.expand(*lead, -1),
                       dt.expand(lead).unsqueeze(-1), ds.expand(lead).unsqueeze(-1)], dim=-1)
        return self.net(x)


def evolving_feature(encoder: EvolvingEncoder, log_risk, h, dayfeat, dt, ds):
    return encoder(torch.as_tensor(log_risk), h, dayfeat, torch.as_tensor(dt, dtype=h.dtype),
                   torch.as_tensor(ds, dtype=h.dtype))
