"""Three-stage training: head and context network with zero evolving
features, then one point process per type by maximum likelihood, then head
and context network again with evolving features switched on."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .context import EventHistory
from .data import CityGrid, CrimeDataset, label_interval, split_day
from .errors import ConfigError, EmptyDatasetError, InvalidArgument, NumericalError, TrainingDiverged
from .model import HotspotModel, ModelConfig, ModelMeta, ProcessEvents, parameter_digest, process_events
from .point_process import MLEConfig, build_optimizer, build_sequences, log_likelihood, train_mle
from .prediction import EvolvingInputs, Queries, evolving_inputs, head_logits, interval_feature, logit_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 5e-4
    weight_decay: float = 5e-5
    batch_size: int = 48
    epochs_stage1: int = 30
    epochs_stage2: int = 50
    epochs_stage3: int = 30
    optimizer: str = "adamw"
    mle_lr: float | None = None         # stage-2 learning rate; defaults to lr
    mle_batch_days: int = 32
    grad_clip: float = 10.0
    interval_hours: tuple[float, ...] = (6.0, 12.0, 24.0)
    intervals_per_day: int = 3
    split: tuple[int, int] = (7, 1)
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0 or self.weight_decay < 0:
            raise InvalidArgument("lr and weight_decay must be non-negative")
        if min(self.epochs_stage1, self.epochs_stage2, self.epochs_stage3) < 1:
            raise InvalidArgument("every stage needs at least one epoch")
        if self.batch_size < 1 or self.mle_batch_days < 1 or self.intervals_per_day < 1:
            raise InvalidArgument("batch sizes and intervals_per_day must be >= 1")
        if not self.interval_hours or any(h <= 0 or h > 24 * 7 for h in self.interval_hours):
            raise InvalidArgument("interval_hours must be positive and at most a week")
        if self.optimizer not in ("adamw", "sgd"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        d = dict(d)
        for key in ("interval_hours", "split"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


class TrainingLog:
    """Line-delimited JSON records ``{stage, epoch, loss, wall_time}``."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[dict] = []
        self._t0 = time.perf_counter()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def __call__(self, stage: str, epoch: int, loss: float, **extra):
        rec = {"stage": stage, "epoch": epoch, "loss": loss, "wall_time": round(time.perf_counter() - self._t0, 3)}
        rec.update(extra)
        self.records.append(rec)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


@dataclass
class IntervalSet:
    queries: Queries
    labels: torch.Tensor  # (N, n_cells) in {0, 1}

    def __len__(self) -> int:
        return len(self.queries)


def label_set(dataset: CrimeDataset, grid: CityGrid, queries: Queries) -> torch.Tensor:
    rows = [label_interval(dataset, grid, s, ln * 24.0, int(c)).matrix.ravel()
            for s, ln, c in zip(queries.start, queries.length, queries.type)]
    return torch.as_tensor(np.asarray(rows, dtype=np.float32).reshape(len(queries), grid.n_cells))


def training_intervals(dataset: CrimeDataset, grid: CityGrid, end: float, config: TrainingConfig,
                       model_config: ModelConfig, rng: np.random.Generator) -> IntervalSet:
    """Per day, ``intervals_per_day`` intervals cycling through ``interval_hours``,
    each starting on a random whole hour, for every type.

    An interval is kept when it ends by ``end`` and its earliest lag time is
    at least one day after the first record day.
    """
    l, L = model_config.sample_points, model_config.lags
    first = float(dataset.day_first)
    starts, lengths = [], []
    for day in range(dataset.day_first, int(np.ceil(end))):
        for k in range(config.intervals_per_day):
            hours = config.interval_hours[k % len(config.interval_hours)]
            start = day + int(rng.integers(0, 24)) / 24.0
            length = hours / 24.0
            if start + length > end + 1e-9 or start - L * length / (l - 1) < first + 1.0:
                continue
            starts.append(start)
            lengths.append(length)
    if not starts:
        raise EmptyDatasetError("no training interval fits the data span; use more days or fewer lags")
    n_types = dataset.n_types
    q = Queries(np.repeat(starts, n_types), np.repeat(lengths, n_types), np.tile(np.arange(n_types), len(starts)))
    return IntervalSet(q, label_set(dataset, grid, q))


def evaluation_intervals(dataset: CrimeDataset, grid: CityGrid, first_day: int, last_day: int,
                         start_hours=(0.0,), hours=(24.0,)) -> IntervalSet:
    """Every (day, start hour, length) combination whose interval ends by ``last_day + 1``."""
    starts, lengths = [], []
    for day in range(first_day, last_day + 1):
        for sh in start_hours:
            for h in hours:
                s = day + sh / 24.0
                if s + h / 24.0 <= last_day + 1 + 1e-9:
                    starts.append(s)
                    lengths.append(h / 24.0)
    if not starts:
        raise EmptyDatasetError("no evaluation interval fits the test period")
    n_types = dataset.n_types
    q = Queries(np.repeat(starts, n_types), np.repeat(lengths, n_types), np.tile(np.arange(n_types), len(starts)))
    return IntervalSet(q, label_set(dataset, grid, q))


@dataclass
class TrainingData:
    train: CrimeDataset
    history: EventHistory
    intervals: IntervalSet
    end: float                 # end of the training period (absolute days)
    days: np.ndarray           # training days
    events: dict[int, ProcessEvents] = field(default_factory=dict)


def prepare(dataset: CrimeDataset, grid: CityGrid, model_config: ModelConfig, config: TrainingConfig):
    """Chronological split, training history and training intervals.

    Returns ``(data, test_first_day)``.
    """
    dataset = dataset if dataset.grid_id is not None else dataset.with_grid(grid)
    cut = split_day(dataset, config.split) if dataset.day_last - dataset.day_first + 1 >= 8 else None
    if cut is None:
        raise InvalidArgument("training needs at least 8 days of records")
    train = dataset.subset(dataset.day < cut)
    rng = np.random.default_rng([config.seed, 11])
    intervals = training_intervals(train, grid, float(cut), config, model_config, rng)
    days = np.arange(train.day_first, cut)
    return TrainingData(train, EventHistory.from_dataset(train, grid), intervals, float(cut), days), cut


def build_model(grid: CityGrid, data: TrainingData, model_config: ModelConfig, seed: int = 0) -> HotspotModel:
    xy = data.history.xy
    std = xy.std(axis=0)
    n_days = float(len(data.days))
    counts = np.bincount(data.train.type, minlength=data.train.n_types)
    meta = ModelMeta(
        xy_mean=tuple(float(v) for v in xy.mean(axis=0)),
        xy_std=tuple(float(v) if v > 0 else 1.0 for v in std),
        span_days=n_days,
        epoch_weekday=data.train.epoch.weekday(),
        rate_scale=tuple(float(c) / n_days if c > 0 else 1.0 for c in counts),
        epoch=data.train.epoch.isoformat(),
    )
    return HotspotModel(grid, data.train.types, model_config, meta, seed=seed)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _train_head(model: HotspotModel, data: TrainingData, config: TrainingConfig, stage: str, epochs: int,
                raw: EvolvingInputs | None, logger=None) -> list[float]:
    params = model.theta0() + model.theta2()
    opt = build_optimizer(params, config.optimizer, config.lr, config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed + (1 if stage == "stage1" else 3))
    cells = np.arange(model.grid.n_cells)
    n = len(data.intervals)
    trace = []
    model.train()
    for epoch in range(epochs):
        last_good = {k: v.detach().clone() for k, v in model.state_dict().items()}
        perm = torch.randperm(n, generator=gen).numpy()
        total = 0.0
        for b, s in enumerate(range(0, n, config.batch_size)):
            idx = perm[s:s + config.batch_size]
            rng = np.random.default_rng([config.seed, 1 if stage == "stage1" else 3, epoch, b])
            q = data.intervals.queries.subset(idx)
            feats = interval_feature(model, data.history, q, cells, rng, None if raw is None else raw.subset(idx))
            loss = logit_loss(head_logits(model, feats), data.intervals.labels[idx], q.type)
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                raise TrainingDiverged(stage, epoch, last_good)
            opt.zero_grad()
            loss.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            total += loss.item() * len(idx)
        trace.append(total / n)
        log.info("%s epoch %d loss %.5f", stage, epoch, trace[-1])
        if logger:
            logger(stage, epoch, trace[-1])
    return trace


def train_stage1(model: HotspotModel, data: TrainingData, config: TrainingConfig, logger=None) -> list[float]:
    """Context network and head with the evolving slots held at zero."""
    return _train_head(model, data, config, "stage1", config.epochs_stage1, None, logger)


def train_stage2(model: HotspotModel, data: TrainingData, config: TrainingConfig, logger=None) -> dict:
    """One maximum-likelihood fit per type against the frozen context network.

    Returns ``{type_name: {"trace": [...]} or {"error": message}}``; a failing
    type does not stop the others.
    """
    model.snapshot_context()
    before = parameter_digest(model.theta0())
    mle = MLEConfig(epochs=config.epochs_stage2, lr=config.mle_lr if config.mle_lr is not None else config.lr,
                    weight_decay=config.weight_decay, batch_days=config.mle_batch_days,
                    optimizer=config.optimizer, grad_clip=config.grad_clip, seed=config.seed)
    h = data.history
    report = {}
    for c, name in enumerate(model.types):
        try:
            ev = process_events(model, h, c, seed=model.seed)
            data.events[c] = ev
            seqs = build_sequences(h.t, h.day, h.tod, h.type, h.xy, ev.vtype, ev.ctx, c, data.days,
                                   np.ones(len(data.days)), np.full(len(data.days), data.end),
                                   model.dayfeat(data.days))

            def on_epoch(epoch, nll, name=name):
                if logger:
                    logger("stage2", epoch, nll, type=name)

            trace = train_mle(model.processes[c], seqs, MLEConfig(**{**asdict(mle), "seed": config.seed + c}),
                              callback=on_epoch)
            report[name] = {"trace": trace}
        except (EmptyDatasetError, NumericalError) as exc:
            log.warning("stage2 type %s failed: %s", name, exc)
            report[name] = {"error": str(exc)}
    if parameter_digest(model.theta0()) != before:
        raise NumericalError("context parameters changed during stage 2")
    return report


def stage3_inputs(model: HotspotModel, data: TrainingData) -> EvolvingInputs:
    for c in range(model.n_types):
        if c not in data.events:
            data.events[c] = process_events(model, data.history, c, seed=model.seed)
    return evolving_inputs(model, data.history, data.events, data.intervals.queries,
                           np.arange(model.grid.n_cells))


def train_stage3(model: HotspotModel, data: TrainingData, config: TrainingConfig, logger=None) -> list[float]:
    """Context network and head again, now with evolving features from the frozen processes."""
    before = parameter_digest(model.theta1())
    raw = stage3_inputs(model, data)
    trace = _train_head(model, data, config, "stage3", config.epochs_stage3, raw, logger)
    if parameter_digest(model.theta1()) != before:
        raise NumericalError("point-process parameters changed during stage 3")
    return trace


@torch.no_grad()
def heldout_log_likelihood(model: HotspotModel, dataset: CrimeDataset, c: int, days) -> np.ndarray:
    """Per-day log-likelihood of the type-``c`` process on ``days``.

    Jump inputs come from every record of ``dataset`` strictly before each
    event, so earlier days act as history but are not scored.  Spatial
    densities are per km^2.
    """
    ds = dataset if dataset.grid_id is not None else dataset.with_grid(model.grid)
    h = EventHistory.from_dataset(ds, model.grid)
    ev = process_events(model, h, c, seed=model.seed)
    days = np.asarray(days, dtype=np.int64)
    seqs = build_sequences(h.t, h.day, h.tod, h.type, h.xy, ev.vtype, ev.ctx, c, days, np.ones(len(days)),
                           days + 1.0, model.dayfeat(days))
    model.processes[c].eval()
    return log_likelihood(model.processes[c], seqs, per_row=True).double().numpy()


@dataclass
class TrainResult:
    model: HotspotModel
    traces: dict
    stage2: dict
    test_first_day: int
    checkpoints: list[Path]


def train_full(dataset: CrimeDataset, grid: CityGrid, model_config: ModelConfig, config: TrainingConfig,
               out_dir=None, run_config: dict | None = None) -> TrainResult:
    """All three stages in order, with a checkpoint after each when ``out_dir`` is given."""
    from .checkpoint import save_checkpoint

    torch.manual_seed(config.seed)
    data, cut = prepare(dataset, grid, model_config, config)
    model = build_model(grid, data, model_config, seed=config.seed)
    out = Path(out_dir) if out_dir else None
    logger = TrainingLog(out / "train_log.jsonl" if out else None)
    traces: dict = {}
    paths: list[Path] = []
    extra = {"test_first_day": cut, "train_end": data.end}

    def checkpoint(stage: int):
        if out:
            path = out / f"stage{stage}.pt"
            save_checkpoint(path, model, stage, run_config or {}, {**extra, "traces": traces})
            paths.append(path)

    def run(stage, fn):
        try:
            return fn(model, data, config, logger)
        except TrainingDiverged as exc:
            checkpoint(stage)
            raise TrainingDiverged(f"stage{stage}", exc.epoch, exc.last_good) from exc

    traces["stage1"] = run(1, train_stage1)
    checkpoint(1)
    report = run(2, train_stage2)
    traces["stage2"] = {k: v.get("trace") for k, v in report.items()}
    extra["stage2"] = report
    checkpoint(2)
    traces["stage3"] = run(3, train_stage3)
    checkpoint(3)
    return TrainResult(model, traces, report, cut, paths)
