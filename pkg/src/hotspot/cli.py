"""``hotspot`` command line: ingest, synth, train, predict, evaluate, inspect.

Every command writes only under the paths it is given.  Failures print one
JSON object ``{"error", "message", "exit_code"}`` on stderr and exit with
2 (bad arguments or config), 3 (data) or 4 (numerical or checkpoint).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date, datetime
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, read_document
from .data import CityGrid, CrimeDataset, build_grid, ingest_events, ingest_pois, region_embedding, write_events
from .errors import ConfigError, HotspotError, InvalidArgument

log = logging.getLogger("hotspot")


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _data_bbox(ds: CrimeDataset, pad_km: float = 0.05):
    from .data import KM_PER_DEG_LAT, km_per_deg_lon

    lat_min, lat_max = float(ds.lat.min()), float(ds.lat.max())
    lon_min, lon_max = float(ds.lon.min()), float(ds.lon.max())
    dlat = pad_km / KM_PER_DEG_LAT
    dlon = pad_km / km_per_deg_lon(0.5 * (lat_min + lat_max))
    return lat_min - dlat, lat_max + dlat, lon_min - dlon, lon_max + dlon


def _grid_for(cfg: RunConfig, dataset: CrimeDataset, pois_path=None, grid_path=None) -> CityGrid:
    """Grid from a saved grid file, or built from the config bbox (default: data extent) and PoIs."""
    if grid_path:
        grid = CityGrid.from_dict(read_document(grid_path))
        if grid.embed_dim != cfg.model.dim:
            raise ConfigError(f"grid file embeds to {grid.embed_dim} dims but model.dim is {cfg.model.dim}")
        return grid
    bbox = cfg.grid.bbox or _data_bbox(dataset)
    grid = build_grid(bbox, cfg.grid.cell_size_km, cfg.model.dim)
    if pois_path:
        grid = region_embedding(grid, ingest_pois(pois_path, grid), seed=cfg.grid.poi_seed)
    return grid


def _load_events(path, types=None, epoch: date | None = None) -> CrimeDataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"events file {path} does not exist")
    return ingest_events(path, None, types, epoch)


def _parse_start(text: str) -> datetime:
    try:
        return datetime.fromisoformat(text).replace(tzinfo=None)
    except ValueError:
        raise InvalidArgument(f"--start {text!r} is not an ISO datetime such as 2018-02-07T12:00") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> dict:
    cfg = load_config(args.config, args.set)
    ds = _load_events(args.events)
    grid = _grid_for(cfg, ds, args.pois)
    gridded = ds.with_grid(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_events(gridded, out / "events.csv")
    _write_json(out / "grid.json", grid.to_dict())
    report = {
        "n_records": len(gridded),
        "n_malformed": int(gridded.n_malformed),
        "n_outside": int(gridded.n_outside),
        "types": list(gridded.types),
        "counts": {t: int(np.sum(gridded.type == i)) for i, t in enumerate(gridded.types)},
        "first_date": gridded.datetime_of(gridded.day_first).date().isoformat(),
        "last_date": gridded.datetime_of(gridded.day_last).date().isoformat(),
        "grid": {"rows": grid.rows, "cols": grid.cols, "bbox": list(grid.bbox)},
    }
    _write_json(out / "ingest_report.json", report)
    return report


def cmd_synth(args) -> dict:
    from .data import write_pois
    from .synth import GeneratorSpec, cluster_coverage, generate, generate_pois

    spec = GeneratorSpec.from_dict(read_document(args.spec))
    if args.seed is not None:
        spec = GeneratorSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    ds = generate(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_events(ds, out / "events.csv")
    write_pois(generate_pois(spec), out / "pois.csv")
    _write_json(out / "spec.json", spec.to_dict())
    report = {"n_records": len(ds), "types": list(ds.types), "days": spec.days, "bbox": list(spec.bbox)}
    if spec.clusters:
        report["cluster_coverage"] = cluster_coverage(spec, ds)
    return report


def cmd_train(args) -> dict:
    from .plotting import loss_curves
    from .training import train_full

    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    ds = _load_events(args.events)
    grid = _grid_for(cfg, ds, args.pois, args.grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    result = train_full(ds, grid, cfg.model, cfg.training, out, cfg.to_dict())
    loss_curves(result.traces, out / "loss_curves.png")
    stage1 = result.traces["stage1"]
    summary = {
        "checkpoints": [str(p) for p in result.checkpoints],
        "test_first_day": int(result.test_first_day),
        "test_first_date": ds.datetime_of(result.test_first_day).date().isoformat(),
        "types": list(result.model.types),
        "stage1_loss": [stage1[0], stage1[-1]],
        "stage1_drop": 1.0 - stage1[-1] / stage1[0] if stage1[0] > 0 else 0.0,
        "stage3_loss": [result.traces["stage3"][0], result.traces["stage3"][-1]],
        "stage2": result.stage2,
    }
    _write_json(out / "summary.json", summary)
    return {k: summary[k] for k in ("checkpoints", "test_first_date", "stage1_drop")}


def _model_dataset(model, events_path) -> CrimeDataset:
    epoch = date.fromisoformat(model.meta.epoch) if model.meta.epoch else None
    return _load_events(events_path, model.types, epoch).with_grid(model.grid)


def cmd_predict(args) -> dict:
    from .checkpoint import load_checkpoint
    from .evaluation import write_matrix
    from .prediction import Predictor, Queries

    if args.hours <= 0:
        raise InvalidArgument("--hours must be positive")
    model, _ = load_checkpoint(args.checkpoint)
    ds = _model_dataset(model, args.events)
    when = _parse_start(args.start)
    start = ds.time_of(when)
    c = ds.type_id(args.type)
    if args.cell is not None:
        if not 0 <= args.cell < model.grid.n_cells:
            raise InvalidArgument(f"--grid {args.cell} outside 0..{model.grid.n_cells - 1}")
        cells = np.array([args.cell])
    else:
        cells = np.arange(model.grid.n_cells)
    probs = Predictor(model, ds, not args.no_evolving).predict(
        Queries([start], [args.hours / 24.0], [c]), cells)[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    centers = model.grid.centers()
    records = [{"grid": int(g), "row": int(g // model.grid.cols), "col": int(g % model.grid.cols),
                "lat": float(centers[g, 0]), "lon": float(centers[g, 1]), "probability": float(p)}
               for g, p in zip(cells, probs)]
    doc = {"start": when.isoformat(timespec="minutes"), "hours": args.hours, "type": model.types[c],
           "predictions": records}
    _write_json(out / "predictions.json", doc)
    if args.cell is None:
        write_matrix(model.grid.as_matrix(probs), out / "predictions.csv")
    top = sorted(records, key=lambda r: (-r["probability"], r["grid"]))[:5]
    return {"start": doc["start"], "hours": args.hours, "type": doc["type"], "n_cells": len(records),
            "top": [[r["grid"], round(r["probability"], 4)] for r in top]}


def cmd_evaluate(args) -> dict:
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate_model, export_heatmap

    model, info = load_checkpoint(args.checkpoint)
    run = info.get("config") or {}
    doc = dict(run) if run else {}
    if args.config:
        doc = read_document(args.config)
    from .config import apply_overrides

    cfg = RunConfig.from_dict(apply_overrides(doc, args.set)).evaluation
    ds = _model_dataset(model, args.events)
    first = info.get("extra", {}).get("test_first_day", ds.day_first)
    if args.start_date:
        first = int(round(ds.time_of(datetime.fromisoformat(args.start_date))))
    last = ds.day_last
    if args.end_date:
        last = int(round(ds.time_of(datetime.fromisoformat(args.end_date))))
    if last < first:
        raise InvalidArgument(f"evaluation period is empty (days {first}..{last})")
    report, probs, labels, queries = evaluate_model(model, ds, int(first), int(last), cfg.start_hours, cfg.hours,
                                                    cfg.threshold, cfg.k, cfg.with_evolving)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = report.to_dict()
    metrics["period"] = {"first_date": ds.datetime_of(first).date().isoformat(),
                         "last_date": ds.datetime_of(last).date().isoformat()}
    _write_json(out / "metrics.json", metrics)
    if cfg.heatmaps:
        for c, name in enumerate(model.types):
            sel = queries.type == c
            if not sel.any():
                continue
            safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
            export_heatmap(model.grid.as_matrix(probs[sel].mean(0)), out / "heatmaps" / f"{safe}_probability.csv",
                           vmin=0.0, vmax=1.0)
            export_heatmap(model.grid.as_matrix(labels[sel].mean(0)), out / "heatmaps" / f"{safe}_observed.csv",
                           vmin=0.0, vmax=1.0)
    return {k: metrics[k] for k in ("micro_f1", "macro_f1", "hr_at_k", "auc", "n_intervals")}


def cmd_inspect(args) -> dict:
    path = Path(args.path)
    if path.suffix == ".pt":
        from .checkpoint import load_checkpoint
        from .model import parameter_digest

        model, info = load_checkpoint(path)
        groups = {"theta0": model.theta0(), "theta1": model.theta1(), "theta2": model.theta2()}
        return {
            "format": info["format"], "format_version": info["format_version"], "stage": info["stage"],
            "types": info["types"], "seed": info["seed"],
            "grid": {"rows": model.grid.rows, "cols": model.grid.cols, "bbox": list(model.grid.bbox)},
            "parameters": {k: int(sum(p.numel() for p in v)) for k, v in groups.items()},
            "digests": {k: parameter_digest(v) for k, v in groups.items()},
            "model_config": info["model_config"], "meta": info["meta"],
            "test_first_day": info.get("extra", {}).get("test_first_day"),
        }
    if path.suffix == ".csv":
        ds = _load_events(path)
        return {"n_records": len(ds), "n_malformed": int(ds.n_malformed), "types": list(ds.types),
                "counts": {t: int(np.sum(ds.type == i)) for i, t in enumerate(ds.types)},
                "first_date": ds.datetime_of(ds.day_first).date().isoformat(),
                "last_date": ds.datetime_of(ds.day_last).date().isoformat()}
    if path.suffix in (".json", ".yaml", ".yml"):
        return read_document(path)
    raise InvalidArgument(f"cannot inspect {path}: expected .pt, .csv, .json or .yaml")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hotspot", description="Event-centric crime hotspot prediction.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("--config", help="YAML or JSON run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. model.dim=32 (repeatable; wins over --config)")

    sp = sub.add_parser("ingest", help="clean an events CSV and build the grid")
    sp.add_argument("--events", required=True)
    sp.add_argument("--pois")
    sp.add_argument("--out", required=True)
    config_flags(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic dataset from a generator spec")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="run the three training stages")
    sp.add_argument("--events", required=True)
    sp.add_argument("--pois")
    sp.add_argument("--grid", help="grid.json written by ingest (instead of --pois)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("predict", help="hotspot probabilities for one interval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--events", required=True, help="event history (only records before --start are used)")
    sp.add_argument("--start", required=True, help="interval start, e.g. 2018-02-07T12:00")
    sp.add_argument("--hours", type=float, default=24.0)
    sp.add_argument("--type", required=True, help="crime type name")
    which = sp.add_mutually_exclusive_group()
    which.add_argument("--grid", dest="cell", type=int, help="single cell id")
    which.add_argument("--all", action="store_true", help="every cell (default)")
    sp.add_argument("--no-evolving", action="store_true", help="zero the evolving features")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="metrics and heatmaps over a test period")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--events", required=True)
    sp.add_argument("--start-date", help="first test day (default: the held-out split)")
    sp.add_argument("--end-date", help="last test day (default: last record day)")
    sp.add_argument("--out", required=True)
    config_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("inspect", help="summarise a checkpoint, events CSV or config")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)
    return p


def _fail(exc: BaseException, code: int) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except HotspotError as exc:
        return _fail(exc, exc.exit_code)
    except (OSError, UnicodeDecodeError) as exc:
        return _fail(exc, 3)
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
