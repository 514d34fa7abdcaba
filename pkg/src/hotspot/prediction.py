"""Flexible-interval features and the hotspot probability head.

An interval ``[t*, t* + dt)`` is probed at ``l`` evenly spaced points.  Each
point gets a context extrapolated by the GRU from ``L`` earlier contexts
spaced one gap apart; the first ``l - 1`` points also get an evolving
feature from the target type's point process.  Every context and every
hidden state only sees events before ``t*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .context import EventHistory
from .data import CrimeDataset
from .errors import InvalidArgument, OutOfRange
from .model import HotspotModel, ProcessEvents, process_events
from .point_process import build_sequences

_CLAMP = 1e-7
_ROW_CHUNK = 64


def sample_interval_points(start, length, l: int) -> np.ndarray:
    """``t_i = start + (i - 1) length / (l - 1)`` for ``i = 1..l``; broadcasts over leading axes."""
    if l < 2:
        raise InvalidArgument(f"need at least 2 sample points, got {l}")
    start = np.asarray(start, dtype=np.float64)[..., None]
    length = np.asarray(length, dtype=np.float64)[..., None]
    if np.any(length <= 0):
        raise InvalidArgument("interval length must be positive")
    return start + np.arange(l) * length / (l - 1)


def lag_times(start, length, l: int, lags: int) -> np.ndarray:
    """The ``lags + l - 1`` context times ``start + j gap`` for ``j = -lags .. l - 2``.

    Sample point ``i`` (0-based) extrapolates from the window ``[i, i + lags)``.
    """
    start = np.asarray(start, dtype=np.float64)[..., None]
    gap = np.asarray(length, dtype=np.float64)[..., None] / (l - 1)
    return start + np.arange(-lags, l - 1) * gap


def assemble_feature(contexts: torch.Tensor, evolving: torch.Tensor) -> torch.Tensor:
    """Interleave ``(..., l, d)`` contexts with ``(..., l - 1, d)`` evolving features.

    Layout: ``cc(t_1) | V(t_1) | cc(t_2) | ... | V(t_{l-1}) | cc(t_l)``.
    """
    l, d = contexts.shape[-2:]
    if evolving.shape[-2:] != (l - 1, d):
        raise InvalidArgument(f"evolving features {tuple(evolving.shape)} do not match {l - 1} x {d}")
    lead = torch.broadcast_shapes(contexts.shape[:-2], evolving.shape[:-2])
    out = contexts.new_zeros(*lead, 2 * l - 1, d)
    out[..., 0::2, :] = contexts
    out[..., 1::2, :] = evolving
    return out.flatten(-2)


@dataclass
class Queries:
    """A batch of interval queries; times in absolute days."""

    start: np.ndarray   # (Q,)
    length: np.ndarray  # (Q,) days
    type: np.ndarray    # (Q,)

    def __post_init__(self):
        self.start = np.atleast_1d(np.asarray(self.start, dtype=np.float64))
        self.length = np.broadcast_to(np.asarray(self.length, dtype=np.float64), self.start.shape).copy()
        self.type = np.broadcast_to(np.asarray(self.type, dtype=np.int64), self.start.shape).copy()
        if np.any(self.length <= 0):
            raise InvalidArgument("interval length must be positive")

    def __len__(self) -> int:
        return len(self.start)

    def subset(self, idx) -> "Queries":
        return Queries(self.start[idx], self.length[idx], self.type[idx])


def interval_contexts(model: HotspotModel, history: EventHistory, queries: Queries, cells: np.ndarray,
                      rng: np.random.Generator) -> torch.Tensor:
    """Extrapolated contexts ``(Q, G, l, d)`` for every query and cell."""
    cfg = model.config
    l, L, d = cfg.sample_points, cfg.lags, cfg.dim
    times = lag_times(queries.start, queries.length, l, L)          # (Q, T)
    if len(history) == 0 or np.any(times[:, 0] < history.t[0]):
        raise OutOfRange("interval lags reach before the event history; start later or use fewer lags")
    Q, T = times.shape
    G = len(cells)
    cutoff = np.minimum(times, queries.start[:, None])
    shape = (Q, G, T)
    grid = np.broadcast_to(np.asarray(cells)[None, :, None], shape)
    typ = np.broadcast_to(queries.type[:, None, None], shape)
    t = np.broadcast_to(times[:, None, :], shape)
    cut = np.broadcast_to(cutoff[:, None, :], shape)
    cc = model.context.contexts_at(history, grid.ravel(), typ.ravel(), t.ravel(), cut.ravel(), cfg.sampler, rng)
    cc = cc.reshape(Q, G, T, d)
    windows = torch.stack([cc[:, :, i:i + L] for i in range(l)], dim=2)   # (Q, G, l, L, d)
    return model.context.extrapolate(windows.reshape(-1, L, d)).reshape(Q, G, l, d)


@dataclass
class EvolvingInputs:
    """Frozen point-process readouts at the first ``l - 1`` sample points."""

    log_risk: torch.Tensor  # (Q, l-1, G) log of intensity x density at cell centres
    h: torch.Tensor         # (Q, l-1, d_h)
    day: torch.Tensor       # (Q, l-1)
    gap: torch.Tensor       # (Q,) days between sample points
    cell_area: float

    def subset(self, idx) -> "EvolvingInputs":
        idx = torch.as_tensor(idx)
        return EvolvingInputs(self.log_risk[idx], self.h[idx], self.day[idx], self.gap[idx], self.cell_area)


@torch.no_grad()
def evolving_inputs(model: HotspotModel, history: EventHistory, events: dict[int, ProcessEvents],
                    queries: Queries, cells: np.ndarray) -> EvolvingInputs:
    cfg = model.config
    l = cfg.sample_points
    pts = sample_interval_points(queries.start, queries.length, l)[:, :-1]   # (Q, l-1)
    day = np.floor(pts).astype(np.int64)
    tau = pts - day
    Q, n = pts.shape
    G = len(cells)
    centers = torch.as_tensor(model.grid.centers_km()[np.asarray(cells)], dtype=torch.float32)
    log_risk = torch.zeros(Q, n, G)
    h = torch.zeros(Q, n, cfg.hidden_dim)
    row_q, row_i = np.meshgrid(np.arange(Q), np.arange(n), indexing="ij")
    row_q, row_i = row_q.ravel(), row_i.ravel()
    for c in np.unique(queries.type):
        proc = model.processes[int(c)]
        ev = events[int(c)]
        sel = np.flatnonzero(queries.type[row_q] == c)
        for s in range(0, len(sel), _ROW_CHUNK):
            r = sel[s:s + _ROW_CHUNK]
            rq, ri = row_q[r], row_i[r]
            rd = day[rq, ri]
            batch = build_sequences(history.t, history.day, history.tod, history.type, history.xy, ev.vtype, ev.ctx,
                                    int(c), rd, tau[rq, ri], queries.start[rq], model.dayfeat(rd))
            B, K = batch.tau.shape
            particles = (centers.expand(B, G, 2), torch.full((B, G), K + 1), torch.ones(B, G, dtype=torch.bool))
            out = proc.sweep(batch, particles)
            log_risk[rq, ri] = (torch.log(out["lam_end"])[:, None] + out["logp"]).float()
            h[rq, ri] = out["h_end"].float()
    return EvolvingInputs(log_risk, h, torch.as_tensor(day), torch.as_tensor(queries.length / (l - 1),
                          dtype=torch.float32), float(model.grid.cell_area_km2))


def evolving_features(model: HotspotModel, raw: EvolvingInputs) -> torch.Tensor:
    """Evolving features ``(Q, G, l - 1, d)`` from precomputed readouts."""
    dayfeat = model.dayfeat(raw.day).unsqueeze(-2)                   # (Q, l-1, 1, 8)
    v = model.evolving(raw.log_risk, raw.h.unsqueeze(-2), dayfeat, raw.gap[:, None, None],
                       torch.tensor(raw.cell_area))
    return v.permute(0, 2, 1, 3)


def interval_feature(model: HotspotModel, history: EventHistory, queries: Queries, cells: np.ndarray,
                     rng: np.random.Generator, raw: EvolvingInputs | None = None) -> torch.Tensor:
    """Interval features ``(Q, G, (2l - 1) d)``; evolving slots are zero when ``raw`` is None."""
    cc = interval_contexts(model, history, queries, cells, rng)
    if raw is None:
        ev = cc.new_zeros(*cc.shape[:2], cc.shape[2] - 1, cc.shape[3])
    else:
        ev = evolving_features(model, raw).to(cc.dtype)
    return assemble_feature(cc, ev)


def head_logits(model: HotspotModel, features: torch.Tensor) -> torch.Tensor:
    return model.head(features).squeeze(-1)


def hotspot_loss(predictions, labels, xi: float = 0.0, params=None, type_ids=None) -> torch.Tensor:
    """Mean over types of the per-type mean cross-entropy, plus ``xi * sum(theta^2)``.

    ``predictions`` and ``labels`` have shape ``(N, ...)``; trailing axes
    (cells) are averaged inside each interval.  ``type_ids`` (N,) groups
    intervals by type; without it all intervals form one group.
    """
    p = torch.as_tensor(predictions)
    y = torch.as_tensor(labels, dtype=p.dtype)
    if p.shape != y.shape:
        raise InvalidArgument(f"prediction shape {tuple(p.shape)} != label shape {tuple(y.shape)}")
    p = p.clamp(_CLAMP, 1 - _CLAMP)
    bce = -(y * torch.log(p) + (1 - y) * torch.log1p(-p))
    per = bce.reshape(bce.shape[0], -1).mean(1) if bce.dim() > 1 else bce
    if type_ids is None:
        loss = per.mean()
    else:
        ids = torch.as_tensor(type_ids)
        loss = torch.stack([per[ids == c].mean() for c in torch.unique(ids)]).mean()
    if xi and params is not None:
        loss = loss + xi * sum((q ** 2).sum() for q in params)
    return loss


def logit_loss(logits: torch.Tensor, labels: torch.Tensor, type_ids) -> torch.Tensor:
    """Training form of :func:`hotspot_loss` (xi = 0) on logits.

    Equal to the clamped form wherever the clamp is inactive; computing it
    from logits keeps gradients alive for saturated outputs.
    """
    bce = F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype), reduction="none")
    per = bce.reshape(bce.shape[0], -1).mean(1)
    ids = torch.as_tensor(type_ids)
    return torch.stack([per[ids == c].mean() for c in torch.unique(ids)]).mean()


class Predictor:
    """Answers interval queries against a fixed event history.

    Per-event process inputs are computed once per type and cached.
    """

    def __init__(self, model: HotspotModel, dataset: CrimeDataset, with_evolving: bool = True):
        self.model = model
        self.dataset = dataset if dataset.grid_id is not None else dataset.with_grid(model.grid)
        self.history = EventHistory.from_dataset(self.dataset, model.grid)
        self.with_evolving = with_evolving
        self._events: dict[int, ProcessEvents] = {}

    def events(self, types) -> dict[int, ProcessEvents]:
        for c in np.unique(types):
            c = int(c)
            if c not in self._events:
                self._events[c] = process_events(self.model, self.history, c, seed=self.model.seed)
        return self._events

    @torch.no_grad()
    def predict(self, queries: Queries, cells=None, batch: int = 16) -> np.ndarray:
        """Probabilities ``(Q, G)`` for the queries over ``cells`` (default: all)."""
        cells = np.arange(self.model.grid.n_cells) if cells is None else np.asarray(cells, dtype=np.int64)
        if np.any((cells < 0) | (cells >= self.model.grid.n_cells)):
            raise OutOfRange("cell index outside the grid")
        if np.any((queries.type < 0) | (queries.type >= self.model.n_types)):
            raise OutOfRange("type index outside the model's types")
        self.model.eval()
        out = np.zeros((len(queries), len(cells)))
        for s in range(0, len(queries), batch):
            q = queries.subset(slice(s, s + batch))
            key = [self.model.seed, 31, int(round(q.start[0] * 1440)), int(round(q.length[0] * 1440)), len(q)]
            rng = np.random.default_rng(key)
            raw = None
            if self.with_evolving:
                raw = evolving_inputs(self.model, self.history, self.events(q.type), q, cells)
            feats = interval_feature(self.model, self.history, q, cells, rng, raw)
            out[s:s + len(q)] = torch.sigmoid(head_logits(self.model, feats)).double().numpy()
        return out


def predict(model: HotspotModel, dataset: CrimeDataset, start: float, hours: float, c: int,
            cells=None, with_evolving: bool = True) -> np.ndarray:
    """Probability per cell that a type-``c`` event occurs in ``[start, start + hours)``."""
    if not math.isfinite(start) or hours <= 0:
        raise InvalidArgument("bad interval")
    return Predictor(model, dataset, with_evolving).predict(Queries([start], [hours / 24.0], [c]), cells)[0]
