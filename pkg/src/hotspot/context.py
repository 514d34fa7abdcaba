"""Proximity sampling, continuous-time multi-head attention and GRU
extrapolation of crime context features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import CityGrid, CrimeDataset
from .encoding import TargetAwareEncoder, TemporalEncoder, spatial_encode
from .errors import EmptyHistoryError, InvalidArgument, OutOfRange

_CHUNK = 2048


@dataclass(frozen=True)
class SamplerConfig:
    n_time_samples: int = 32
    n_space_samples: int = 32
    replacement: bool = False
    history_days: float = 14.0

    def __post_init__(self):
        if self.n_time_samples < 1 or self.n_space_samples < 1:
            raise InvalidArgument("sample counts must be at least 1")
        if self.history_days <= 0:
            raise InvalidArgument("history_days must be positive")


@dataclass
class EventHistory:
    """Time-sorted event table used as the attention memory.

    ``t`` is absolute days, ``xy`` kilometres in the grid frame.
    """

    t: np.ndarray
    xy: np.ndarray
    grid_id: np.ndarray
    type: np.ndarray
    day: np.ndarray
    tod: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: CrimeDataset, grid: CityGrid) -> "EventHistory":
        if dataset.grid_id is None:
            dataset = dataset.with_grid(grid)
        x, y = grid.to_km(dataset.lat, dataset.lon)
        t = dataset.t
        order = np.argsort(t, kind="stable")
        return cls(t[order], np.stack([x, y], axis=1)[order], dataset.grid_id[order], dataset.type[order],
                   dataset.day[order], dataset.tod[order])

    def __len__(self) -> int:
        return len(self.t)

    def tensors(self, dtype=torch.float32):
        return (torch.as_tensor(self.t, dtype=torch.float64), torch.as_tensor(self.xy, dtype=dtype),
                torch.as_tensor(self.grid_id), torch.as_tensor(self.type))

    def window(self, cutoff, history_days: float):
        """Index range ``[lo, hi)`` of events with ``cutoff - history_days <= t < cutoff``."""
        cutoff = np.asarray(cutoff, dtype=np.float64)
        hi = np.searchsorted(self.t, cutoff, side="left")
        lo = np.searchsorted(self.t, cutoff - history_days, side="left")
        return lo, hi


# ---------------------------------------------------------------------------
# Proximity sampling
# ---------------------------------------------------------------------------


def _softmax_neg(dist: np.ndarray) -> np.ndarray:
    z = -(dist - dist.min())
    p = np.exp(z)
    return p / p.sum()


def sampling_probs(times, positions, t: float, s):
    """Selection probabilities ``softmax(-|t - t_r|)`` and ``softmax(-||s - s_r||)``."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 0:
        raise EmptyHistoryError("no historical events to sample from")
    positions = np.asarray(positions, dtype=np.float64).reshape(len(times), -1)
    dt = np.abs(times - float(t))
    ds = np.linalg.norm(positions - np.asarray(s, dtype=np.float64), axis=1)
    return _softmax_neg(dt), _softmax_neg(ds)


def _draw(p: np.ndarray, n: int, replacement: bool, rng: np.random.Generator) -> np.ndarray:
    if replacement:
        return rng.choice(len(p), size=n, replace=True, p=p)
    if n > len(p):
        raise InvalidArgument(f"cannot draw {n} events without replacement from {len(p)}")
    with np.errstate(divide="ignore"):
        keys = np.log(p) + rng.gumbel(size=len(p))
    return np.argsort(-keys, kind="stable")[:n]


def sample_relevant_events(times, positions, t: float, s, config: SamplerConfig, rng: np.random.Generator):
    """Draw the time-proximity set R_0 and the space-proximity set R_1 (as indices)."""
    p_t, p_s = sampling_probs(times, positions, t, s)
    return (_draw(p_t, config.n_time_samples, config.replacement, rng),
            _draw(p_s, config.n_space_samples, config.replacement, rng))


def sample_batch(logits: np.ndarray, valid: np.ndarray, n: int, replacement: bool, rng: np.random.Generator,
                 allow_empty: bool = False):
    """Vectorised draws for many queries at once.

    ``logits`` and ``valid`` are ``(Q, N)``.  Returns ``(idx, mask)`` of shape
    ``(Q, n)``; rows with fewer than ``n`` valid candidates are padded with
    masked slots when sampling without replacement.  With ``allow_empty``
    rows without candidates come back fully masked instead of raising.
    """
    q, m = logits.shape
    has = valid.any(axis=1) if m else np.zeros(q, dtype=bool)
    if not has.all():
        if not allow_empty:
            raise EmptyHistoryError("a context query has no historical events before its time")
        if m == 0:
            return np.zeros((q, n), dtype=np.int64), np.zeros((q, n), dtype=bool)
    logits = np.where(valid, logits, -np.inf)
    if replacement:
        # empty rows draw from a dummy uniform row and are masked out below
        safe = np.where(has[:, None], logits, 0.0)
        p = np.exp(safe - safe.max(axis=1, keepdims=True))
        cdf = np.cumsum(p / p.sum(axis=1, keepdims=True), axis=1)
        u = rng.random((q, n))
        idx = np.empty((q, n), dtype=np.int64)
        for i in range(q):
            idx[i] = np.minimum(np.searchsorted(cdf[i], u[i], side="right"), m - 1)
        mask = np.broadcast_to(has[:, None], (q, n)).copy()
        return np.where(mask, idx, 0), mask
    keys = logits + rng.gumbel(size=(q, m))
    k = min(n, m)
    if k < m:
        part = np.argpartition(-keys, k - 1, axis=1)[:, :k]
    else:
        part = np.broadcast_to(np.arange(m), (q, m)).copy()
    order = np.argsort(-np.take_along_axis(keys, part, axis=1), axis=1, kind="stable")
    idx = np.take_along_axis(part, order, axis=1)
    mask = np.isfinite(np.take_along_axis(keys, idx, axis=1))
    if k < n:
        idx = np.concatenate([idx, np.zeros((q, n - k), dtype=np.int64)], axis=1)
        mask = np.concatenate([mask, np.zeros((q, n - k), dtype=bool)], axis=1)
    idx = np.where(mask, idx, 0)
    return idx, mask


def sample_contexts(history: EventHistory, query_t: np.ndarray, query_cutoff: np.ndarray,
                    query_xy: np.ndarray, config: SamplerConfig, rng: np.random.Generator,
                    allow_empty: bool = False):
    """Sample R_0/R_1 for each query ``(t, cutoff, xy)``.

    Only events in ``[cutoff - history_days, cutoff)`` are candidates.
    Returns global history indices and masks, each ``(Q, n)``.
    """
    query_t = np.asarray(query_t, dtype=np.float64)
    query_cutoff = np.asarray(query_cutoff, dtype=np.float64)
    query_xy = np.asarray(query_xy, dtype=np.float64).reshape(len(query_t), 2)
    n0, n1 = config.n_time_samples, config.n_space_samples
    out0 = np.zeros((len(query_t), n0), np.int64)
    m0 = np.zeros((len(query_t), n0), bool)
    out1 = np.zeros((len(query_t), n1), np.int64)
    m1 = np.zeros((len(query_t), n1), bool)
    lo, hi = history.window(query_cutoff, config.history_days)
    if np.any(hi <= lo) and not allow_empty:
        bad = int(np.flatnonzero(hi <= lo)[0])
        raise EmptyHistoryError(f"no events in the {config.history_days}-day window before t={query_cutoff[bad]:.4f}")
    for start in range(0, len(query_t), _CHUNK):
        sl = slice(start, start + _CHUNK)
        a, b = int(lo[sl].min()), int(hi[sl].max())
        b = max(a, b)
        cand = np.arange(a, b)
        valid = (cand[None, :] >= lo[sl, None]) & (cand[None, :] < hi[sl, None])
        dt = np.abs(query_t[sl, None] - history.t[None, a:b])
        dxy = np.linalg.norm(query_xy[sl, None, :] - history.xy[None, a:b, :], axis=-1)
        i0, k0 = sample_batch(-dt, valid, n0, config.replacement, rng, allow_empty)
        i1, k1 = sample_batch(-dxy, valid, n1, config.replacement, rng, allow_empty)
        out0[sl], m0[sl], out1[sl], m1[sl] = i0 + a, k0, i1 + a, k1
    return out0, m0, out1, m1


# ---------------------------------------------------------------------------
# Attention
# ---------------------------------------------------------------------------


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
    if mask is None:
        return torch.softmax(logits, dim=-1)
    logits = logits.masked_fill(~mask, float("-inf"))
    w = torch.softmax(logits, dim=-1)
    # fully masked rows produce NaN from softmax; they contribute nothing
    return torch.nan_to_num(w, nan=0.0)


def attention_weights(query, keys, q_mat, k_mat, temperature: float, mask=None):
    """``softmax(query Q (keys K)^T / temperature)`` over the key axis.

    ``query``: ``(..., d)``, ``keys``: ``(..., n, d)``; returns ``(..., n)``.
    """
    qh = query @ q_mat
    kh = keys @ k_mat
    logits = (kh @ qh.unsqueeze(-1)).squeeze(-1) / temperature
    return masked_softmax(logits, mask)


def attention_head(v_t, v_g, keys_t, keys_s, values_0, values_1, q_t, k_t, q_s, k_s, temperature,
                   mask_0=None, mask_1=None):
    """One head: temporal attention over R_0 plus spatial attention over R_1."""
    if keys_t.shape[-2] == 0 and keys_s.shape[-2] == 0:
        raise EmptyHistoryError("both sampled event sets are empty")
    out = 0.0
    if keys_t.shape[-2]:
        mu = attention_weights(v_t, keys_t, q_t, k_t, temperature, mask_0)
        out = out + (mu.unsqueeze(-2) @ values_0).squeeze(-2)
    if keys_s.shape[-2]:
        eta = attention_weights(v_g, keys_s, q_s, k_s, temperature, mask_1)
        out = out + (eta.unsqueeze(-2) @ values_1).squeeze(-2)
    return out


class ContextNetwork(nn.Module):
    """Crime context ``cc_g(t)`` from sampled historical events, plus the GRU
    that extrapolates contexts to future sample points."""

    def __init__(self, grid: CityGrid, n_types: int, dim: int = 64, target_dim: int = 64, heads: int = 4,
                 horizon_days: float = 1.0, xy_mean=(0.0, 0.0), xy_std=(1.0, 1.0), seed: int = 0):
        super().__init__()
        if dim % heads:
            raise InvalidArgument(f"dim {dim} is not divisible by heads {heads}")
        if dim % 2 or target_dim % 2:
            raise InvalidArgument("encoding dimensions must be even")
        if grid.embed_dim != dim:
            raise InvalidArgument(f"grid embedding dim {grid.embed_dim} != model dim {dim}")
        gen = torch.Generator().manual_seed(seed)
        self.dim, self.target_dim, self.heads, self.n_types = dim, target_dim, heads, n_types
        self.n_cells = grid.n_cells
        self.register_buffer("poi_features", torch.as_tensor(grid.poi_features, dtype=torch.float32))
        self.register_buffer("centers_km", torch.as_tensor(grid.centers_km(), dtype=torch.float32))
        self.register_buffer("xy_mean", torch.as_tensor(xy_mean, dtype=torch.float32))
        self.register_buffer("xy_std", torch.as_tensor(xy_std, dtype=torch.float32))
        self.region = nn.Linear(grid.poi_features.shape[1], dim)
        with torch.no_grad():
            self.region.weight.copy_(torch.as_tensor(grid.embed_weight.T, dtype=torch.float32))
            self.region.bias.zero_()
        self.time_enc = TemporalEncoder(dim, horizon_days, generator=gen)
        self.target_enc = TargetAwareEncoder(dim, n_types, target_dim)
        dk = dim // heads
        scale = 1.0 / math.sqrt(dim)
        self.q_t = nn.Parameter(torch.randn(heads, dim, dk, generator=gen) * scale)
        self.k_t = nn.Parameter(torch.randn(heads, dim, dk, generator=gen) * scale)
        self.q_s = nn.Parameter(torch.randn(heads, dim, dk, generator=gen) * scale)
        self.k_s = nn.Parameter(torch.randn(heads, dim, dk, generator=gen) * scale)
        self.w_msa = nn.Linear(heads * target_dim, dim, bias=False)
        self.gru = nn.GRU(dim, dim, batch_first=True)
        self._reset(gen)

    def _reset(self, gen):
        for lin in (self.target_enc.w_loc, self.target_enc.w_type, self.w_msa):
            bound = 1.0 / math.sqrt(lin.in_features)
            with torch.no_grad():
                lin.weight.uniform_(-bound, bound, generator=gen)
        bound = 1.0 / math.sqrt(self.dim)
        with torch.no_grad():
            for p in self.gru.parameters():
                p.uniform_(-bound, bound, generator=gen)

    @property
    def temperature(self) -> float:
        return math.sqrt(self.dim / self.heads)

    def embeddings(self) -> torch.Tensor:
        return self.region(self.poi_features)

    def standardize(self, xy_km: torch.Tensor) -> torch.Tensor:
        return (xy_km - self.xy_mean) / self.xy_std

    def one_hot(self, c) -> torch.Tensor:
        return nn.functional.one_hot(torch.as_tensor(c), self.n_types).to(self.q_t.dtype)

    def heads_output(self, target_grid, target_type, query_t, ev0, ev1, allow_empty: bool = False):
        """Per-head outputs ``(Q, H, target_dim)``.

        ``ev0``/``ev1`` are dicts with event ``t``, ``xy`` (km), ``grid``,
        ``type`` tensors of shape ``(Q, n)`` and a boolean ``mask``.
        """
        dtype = self.q_t.dtype
        emb = self.embeddings().to(dtype)
        g_star = emb[target_grid]
        loc_star = self.target_enc.loc_target(g_star)
        type_star = self.target_enc.w_type.weight[:, : self.n_types].T[target_type]
        v_t = self.time_enc(query_t.to(dtype))
        v_g = spatial_encode(self.standardize(self.centers_km[target_grid].to(dtype)), self.dim)
        outs = []

        def values(ev):
            loc = loc_star.unsqueeze(-2) + self.target_enc.loc_event(emb[ev["grid"]])
            typ = type_star.unsqueeze(-2) + self.target_enc.w_type.weight[:, self.n_types:].T[ev["type"]]
            return torch.cat([loc, typ], dim=-1)

        val0, val1 = values(ev0), values(ev1)
        keys_t = self.time_enc(ev0["t"].to(dtype))
        keys_s = spatial_encode(self.standardize(ev1["xy"].to(dtype)), self.dim)
        if not allow_empty and not bool((ev0["mask"].any(-1) | ev1["mask"].any(-1)).all()):
            raise EmptyHistoryError("a context query has no sampled events")
        for h in range(self.heads):
            outs.append(attention_head(v_t, v_g, keys_t, keys_s, val0, val1, self.q_t[h], self.k_t[h],
                                       self.q_s[h], self.k_s[h], self.temperature, ev0["mask"], ev1["mask"]))
        return torch.stack(outs, dim=-2)

    def context(self, target_grid, target_type, query_t, ev0, ev1, allow_empty: bool = False) -> torch.Tensor:
        heads = self.heads_output(target_grid, target_type, query_t, ev0, ev1, allow_empty)
        return self.w_msa(heads.flatten(-2))

    def extrapolate(self, contexts: torch.Tensor) -> torch.Tensor:
        """GRU over ``(N, L, d)`` contexts ordered oldest first; returns ``(N, d)``."""
        _, h = self.gru(contexts)
        return h[-1]

    # -- convenience wrappers ------------------------------------------------

    def gather(self, history: EventHistory, idx: np.ndarray, mask: np.ndarray) -> dict:
        idx_t = torch.as_tensor(idx)
        return {
            "t": torch.as_tensor(history.t)[idx_t],
            "xy": torch.as_tensor(history.xy, dtype=self.q_t.dtype)[idx_t],
            "grid": torch.as_tensor(history.grid_id)[idx_t],
            "type": torch.as_tensor(history.type)[idx_t],
            "mask": torch.as_tensor(mask),
        }

    def contexts_at(self, history: EventHistory, target_grid, target_type, query_t, cutoff,
                    sampler: SamplerConfig, rng: np.random.Generator, allow_empty: bool = False) -> torch.Tensor:
        """Sample and attend for a flat batch of ``(grid, type, t, cutoff)`` queries.

        With ``allow_empty`` a query without any earlier event gets a zero context.
        """
        target_grid = np.asarray(target_grid, dtype=np.int64)
        target_type = np.broadcast_to(np.asarray(target_type, dtype=np.int64), target_grid.shape)
        query_t = np.broadcast_to(np.asarray(query_t, dtype=np.float64), target_grid.shape)
        cutoff = np.broadcast_to(np.asarray(cutoff, dtype=np.float64), target_grid.shape)
        xy = self.centers_km.numpy().astype(np.float64)[target_grid]
        i0, k0, i1, k1 = sample_contexts(history, query_t, cutoff, xy, sampler, rng, allow_empty)
        return self.context(torch.tensor(target_grid), torch.tensor(target_type),
                            torch.tensor(query_t), self.gather(history, i0, k0), self.gather(history, i1, k1),
                            allow_empty)


def crime_context(net: ContextNetwork, history: EventHistory, grid_id: int, t: float, c_star: int,
                  sampler: SamplerConfig, rng: np.random.Generator, cutoff: float | None = None) -> torch.Tensor:
    """``cc_g(t)`` for one grid and time using events strictly before ``cutoff`` (default ``t``)."""
    cutoff = t if cutoff is None else cutoff
    return net.contexts_at(history, [grid_id], [c_star], [t], [cutoff], sampler, rng)[0]


def extrapolate_context(net: ContextNetwork, history: EventHistory, grid_id: int, t_i: float, step: float,
                        lags: int, c_star: int, sampler: SamplerConfig, rng: np.random.Generator,
                        cutoff: float | None = None) -> torch.Tensor:
    """GRU extrapolation from contexts at ``t_i - lags*step, ..., t_i - step``."""
    if lags < 1 or step <= 0:
        raise InvalidArgument("lags must be >= 1 and step positive")
    times = t_i - step * np.arange(lags, 0, -1)
    if len(history) == 0 or times[0] <= history.t[0]:
        raise OutOfRange(f"lag time {times[0]:.4f} precedes the event history")
    cut = times if cutoff is None else np.minimum(times, cutoff)
    ctx = net.contexts_at(history, np.full(lags, grid_id), np.full(lags, c_star), times, cut, sampler, rng)
    return net.extrapolate(ctx.unsqueeze(0))[0]
