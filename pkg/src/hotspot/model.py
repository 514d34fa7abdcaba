"""The trainable bundle: context network, per-type point processes, the
evolving-feature encoder and the prediction head."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from .context import ContextNetwork, EventHistory, SamplerConfig
from .data import CityGrid
from .errors import ConfigError, InvalidArgument
from .point_process import EvolvingEncoder, TypeProcess, day_features


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64              # context / encoding width
    target_dim: int = 64       # width of the target-aware encoding (both halves)
    heads: int = 4
    hidden_dim: int = 64       # point-process hidden state
    mlp_hidden: int = 64
    head_hidden: int = 64
    sample_points: int = 4     # l
    lags: int = 7              # L
    n_time_samples: int = 32
    n_space_samples: int = 32
    replacement: bool = False
    history_days: float = 14.0
    ode_steps: int = 20

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2 or self.dim % self.heads:
            raise InvalidArgument(f"dim {self.dim} must be even and divisible by heads {self.heads}")
        if self.target_dim <= 0 or self.target_dim % 2:
            raise InvalidArgument("target_dim must be a positive even integer")
        if self.sample_points < 2:
            raise InvalidArgument("sample_points must be >= 2")
        if self.lags < 1 or self.ode_steps < 1:
            raise InvalidArgument("lags and ode_steps must be >= 1")
        if min(self.hidden_dim, self.mlp_hidden, self.head_hidden) < 1:
            raise InvalidArgument("hidden sizes must be positive")
        SamplerConfig(self.n_time_samples, self.n_space_samples, self.replacement, self.history_days)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.n_time_samples, self.n_space_samples, self.replacement, self.history_days)

    @property
    def type_dim(self) -> int:
        return self.target_dim // 2

    @property
    def feature_dim(self) -> int:
        return (2 * self.sample_points - 1) * self.dim

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ModelMeta:
    """Data-derived constants fixed at construction time."""

    xy_mean: tuple[float, float]
    xy_std: tuple[float, float]
    span_days: float          # scale for the day index feature and the linear time slot
    epoch_weekday: int        # weekday of day 0
    rate_scale: tuple[float, ...]  # mean events per training day, per type
    epoch: str = ""           # ISO date of day 0

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelMeta":
        return cls(tuple(d["xy_mean"]), tuple(d["xy_std"]), float(d["span_days"]), int(d["epoch_weekday"]),
                   tuple(d["rate_scale"]), str(d.get("epoch", "")))


class HotspotModel(nn.Module):
    """Parameter groups: ``theta0`` (context network), ``theta1`` (one point
    process per type plus the stage-1 context snapshot that conditions their
    jumps) and ``theta2`` (evolving encoder and head)."""

    def __init__(self, grid: CityGrid, types, config: ModelConfig, meta: ModelMeta, seed: int = 0):
        super().__init__()
        if grid.embed_dim != config.dim:
            raise InvalidArgument(f"grid embedding dim {grid.embed_dim} != model dim {config.dim}")
        self.grid = grid
        self.types = tuple(types)
        self.config = config
        self.meta = meta
        self.seed = seed
        n_types = len(self.types)
        if len(meta.rate_scale) != n_types:
            raise InvalidArgument("rate_scale needs one entry per type")
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.context = ContextNetwork(grid, n_types, config.dim, config.target_dim, config.heads,
                                          horizon_days=meta.span_days, xy_mean=meta.xy_mean, xy_std=meta.xy_std,
                                          seed=seed)
            self.pp_context = copy.deepcopy(self.context)
            self.processes = nn.ModuleList(
                TypeProcess(config.hidden_dim, config.dim, config.type_dim, (grid.width_km, grid.height_km),
                            mlp_hidden=config.mlp_hidden, ode_steps=config.ode_steps,
                            rate_scale=meta.rate_scale[c], seed=seed + 101 + c)
                for c in range(n_types))
            self.evolving = EvolvingEncoder(config.hidden_dim, config.dim, config.mlp_hidden)
            self.head = nn.Sequential(nn.Linear(config.feature_dim, config.head_hidden), nn.Tanh(),
                                      nn.Linear(config.head_hidden, 1))
        for p in self.pp_context.parameters():
            p.requires_grad_(False)

    @property
    def n_types(self) -> int:
        return len(self.types)

    def theta0(self) -> list[nn.Parameter]:
        return list(self.context.parameters())

    def theta1(self, c: int | None = None) -> list[nn.Parameter]:
        if c is not None:
            return list(self.processes[c].parameters())
        return list(self.processes.parameters()) + list(self.pp_context.parameters())

    def theta2(self) -> list[nn.Parameter]:
        return list(self.evolving.parameters()) + list(self.head.parameters())

    def snapshot_context(self) -> None:
        """Copy the current context network into the frozen snapshot used by the processes."""
        self.pp_context.load_state_dict(self.context.state_dict())

    def dayfeat(self, day) -> torch.Tensor:
        return day_features(torch.as_tensor(day), self.meta.epoch_weekday, self.meta.span_days)


@dataclass
class ProcessEvents:
    """Per-event jump inputs for one type's process: type encodings against
    the target type and crime contexts from the frozen snapshot."""

    vtype: torch.Tensor  # (N, type_dim)
    ctx: torch.Tensor    # (N, dim)


@torch.no_grad()
def process_events(model: HotspotModel, history: EventHistory, c: int, seed: int = 0,
                   chunk: int = 4096) -> ProcessEvents:
    """Context of every history event at its own time, from strictly earlier events."""
    net = model.pp_context
    vtype = net.target_enc.type_encoding(c, torch.as_tensor(history.type)).float()
    rng = np.random.default_rng([seed, 7, c])
    out = []
    for s in range(0, len(history), chunk):
        sl = slice(s, s + chunk)
        out.append(net.contexts_at(history, history.grid_id[sl], c, history.t[sl], history.t[sl],
                                   model.config.sampler, rng, allow_empty=True))
    ctx = torch.cat(out) if out else torch.zeros(0, model.config.dim)
    return ProcessEvents(vtype=vtype.detach(), ctx=ctx.detach().float())


def parameter_digest(params) -> str:
    """Hash of parameter bytes, used to check freeze contracts."""
    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
