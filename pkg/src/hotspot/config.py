"""One structured run configuration (YAML or JSON) covering grid, model,
training and evaluation, with dotted ``key=value`` overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError, InvalidArgument
from .model import ModelConfig
from .training import TrainingConfig


def _reject_unknown(cls, d: dict, section: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {section} keys {sorted(unknown)}")


@dataclass(frozen=True)
class GridConfig:
    cell_size_km: float = 1.0
    bbox: tuple[float, float, float, float] | None = None  # lat_min, lat_max, lon_min, lon_max
    poi_seed: int = 0

    def __post_init__(self):
        if not self.cell_size_km > 0:
            raise InvalidArgument("grid.cell_size_km must be positive")
        if self.bbox is not None and len(self.bbox) != 4:
            raise InvalidArgument("grid.bbox needs four numbers")

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        _reject_unknown(cls, d, "grid")
        d = dict(d)
        if d.get("bbox") is not None:
            d["bbox"] = tuple(float(v) for v in d["bbox"])
        return cls(**d)


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    k: int = 10
    start_hours: tuple[float, ...] = (0.0,)
    hours: tuple[float, ...] = (24.0,)
    heatmaps: bool = True
    with_evolving: bool = True

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise InvalidArgument("evaluation.threshold must lie in (0, 1)")
        if self.k < 1:
            raise InvalidArgument("evaluation.k must be positive")
        if not self.hours or any(h <= 0 for h in self.hours):
            raise InvalidArgument("evaluation.hours must be positive")
        if not self.start_hours or any(not 0 <= s < 24 for s in self.start_hours):
            raise InvalidArgument("evaluation.start_hours must lie in [0, 24)")

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        _reject_unknown(cls, d, "evaluation")
        d = dict(d)
        for key in ("start_hours", "hours"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = d or {}
        _reject_unknown(cls, d, "top-level")
        seed = int(d.get("seed", 0))
        sections = {k: {} if d.get(k) is None else d[k] for k in ("grid", "model", "training", "evaluation")}
        for name, section in sections.items():
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
        # the top-level seed drives training unless the section pins its own
        training = {"seed": seed, **sections["training"]}
        try:
            return cls(
                seed=seed,
                grid=GridConfig.from_dict(sections["grid"]),
                model=ModelConfig.from_dict(sections["model"]),
                training=TrainingConfig.from_dict(training),
                evaluation=EvalConfig.from_dict(sections["evaluation"]),
            )
        except TypeError as exc:
            raise ConfigError(f"bad configuration value: {exc}") from exc

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v

        return {
            "seed": self.seed,
            "grid": plain(asdict(self.grid)),
            "model": plain(self.model.to_dict()),
            "training": plain(self.training.to_dict()),
            "evaluation": plain(asdict(self.evaluation)),
        }

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, training=replace(self.training, seed=seed))


def read_document(path) -> dict:
    """Parse a YAML (or JSON, a YAML subset) mapping."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    return doc


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML scalars or lists."""
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            elif not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
            node = nxt
        node[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    doc = read_document(path) if path else {}
    return RunConfig.from_dict(apply_overrides(doc, overrides))
