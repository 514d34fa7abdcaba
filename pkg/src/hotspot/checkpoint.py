"""Versioned checkpoint files holding all parameter groups and the config
needed to rebuild the model."""

from __future__ import annotations

from pathlib import Path

import torch

from .data import CityGrid
from .errors import CheckpointError
from .model import HotspotModel, ModelConfig, ModelMeta

FORMAT = "hotspot-checkpoint"
FORMAT_VERSION = 1


def save_checkpoint(path, model: HotspotModel, stage: int, run_config: dict, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "stage": int(stage),
        "config": run_config,
        "model_config": model.config.to_dict(),
        "meta": model.meta.to_dict(),
        "types": list(model.types),
        "seed": model.seed,
        "grid": model.grid.to_dict(),
        "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> tuple[HotspotModel, dict]:
    """Rebuild the model; returns ``(model, payload_without_state)``."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of types for corrupt archives
        raise CheckpointError(f"cannot parse checkpoint {path}: not a readable archive ({type(exc).__name__})") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    try:
        grid = CityGrid.from_dict(payload["grid"])
        model = HotspotModel(grid, payload["types"], ModelConfig.from_dict(payload["model_config"]),
                             ModelMeta.from_dict(payload["meta"]), seed=int(payload["seed"]))
        model.load_state_dict(payload["state"])
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"checkpoint {path} is inconsistent: {exc}") from exc
    info = {k: v for k, v in payload.items() if k != "state"}
    return model, info
