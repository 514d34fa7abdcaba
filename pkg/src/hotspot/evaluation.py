"""Micro/Macro-F1, HR@k, AUC and heatmap export."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import CrimeDataset
from .errors import InvalidArgument

log = logging.getLogger(__name__)


@dataclass
class MetricReport:
    per_type: dict = field(default_factory=dict)   # name -> {f1, tp, fp, fn}
    micro_f1: float = 0.0
    macro_f1: float = 0.0
    threshold: float = 0.5
    hr_at_k: float | None = None
    k: int | None = None
    auc: float | None = None
    n_intervals: int = 0

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "threshold": self.threshold,
            "hr_at_k": self.hr_at_k,
            "k": self.k,
            "auc": self.auc,
            "n_intervals": self.n_intervals,
            "per_type": self.per_type,
        }


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_metrics(predictions, labels, threshold: float = 0.5, type_ids=None, type_names=None) -> MetricReport:
    """Binarise at ``threshold`` and score per type, pooled and averaged.

    Without ``type_ids`` the first axis indexes types; with it, ``type_ids``
    gives the type of each entry along the first axis.  A type with no
    positives and no predicted positives scores F1 = 0.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if p.shape != y.shape:
        raise InvalidArgument(f"prediction shape {p.shape} != label shape {y.shape}")
    if not 0 < threshold < 1:
        raise InvalidArgument("threshold must lie in (0, 1)")
    if p.ndim == 0:
        raise InvalidArgument("need at least one axis")
    ids = np.arange(p.shape[0]) if type_ids is None else np.asarray(type_ids)
    if len(ids) != p.shape[0]:
        raise InvalidArgument("type_ids must match the first axis")
    pred = p >= threshold
    pos = y.astype(bool)
    report = MetricReport(threshold=threshold)
    tot = [0, 0, 0]
    f1s = []
    for c in np.unique(ids):
        sel = ids == c
        tp = int(np.sum(pred[sel] & pos[sel]))
        fp = int(np.sum(pred[sel] & ~pos[sel]))
        fn = int(np.sum(~pred[sel] & pos[sel]))
        f = _f1(tp, fp, fn)
        name = str(type_names[int(c)]) if type_names is not None else str(int(c))
        report.per_type[name] = {"f1": f, "tp": tp, "fp": fp, "fn": fn}
        f1s.append(f)
        tot = [tot[0] + tp, tot[1] + fp, tot[2] + fn]
    report.micro_f1 = _f1(*tot)
    report.macro_f1 = float(np.mean(f1s))
    return report


def top_k(values, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries (flattened); ties go to the lower index."""
    v = np.asarray(values, dtype=np.float64).ravel()
    order = np.lexsort((np.arange(v.size), -v))
    return order[:k]


def hit_ratio_at_k(pred_probs, true_counts, k: int) -> float:
    """``|top_k(pred) & top_k(true)| / k``."""
    p = np.asarray(pred_probs)
    t = np.asarray(true_counts)
    if p.shape != t.shape:
        raise InvalidArgument(f"shape mismatch {p.shape} vs {t.shape}")
    if k <= 0:
        raise InvalidArgument("k must be positive")
    if k > p.size:
        raise InvalidArgument(f"k={k} exceeds the {p.size} cells")
    return len(set(top_k(p, k).tolist()) & set(top_k(t, k).tolist())) / k


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic (ties averaged)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        log.warning("AUC undefined with a single class")
        return math.nan
    r = rankdata(s)
    return float((r[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def interval_counts(dataset: CrimeDataset, n_cells: int, start: float, length_days: float, c: int) -> np.ndarray:
    t = dataset.t
    m = (dataset.type == c) & (t >= start) & (t < start + length_days)
    return np.bincount(dataset.grid_id[m], minlength=n_cells)


def mean_hit_ratio(probs, dataset: CrimeDataset, queries, k: int) -> float:
    """HR@k averaged over the queries that have at least one event."""
    n_cells = probs.shape[1]
    vals = []
    for row, s, ln, c in zip(probs, queries.start, queries.length, queries.type):
        counts = interval_counts(dataset, n_cells, s, ln, int(c))
        if counts.any():
            vals.append(hit_ratio_at_k(row, counts, min(k, n_cells)))
    return float(np.mean(vals)) if vals else math.nan


def write_matrix(matrix, path) -> Path:
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if not np.all(np.isfinite(m)):
        raise InvalidArgument("matrix has non-finite entries")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in m:
            w.writerow([repr(float(v)) for v in row])
    return path


def read_matrix(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        return np.asarray([[float(v) for v in row] for row in csv.reader(fh) if row], dtype=np.float64)


def export_heatmap(matrix, path, image: bool = True, vmin=None, vmax=None) -> list[Path]:
    """CSV matrix at ``path`` plus, optionally, a grayscale PNG next to it.

    Row 0 of the matrix (the southern cells) is drawn at the bottom.
    """
    from .plotting import save_grayscale

    out = [write_matrix(matrix, path)]
    if image:
        out.append(save_grayscale(np.asarray(matrix, dtype=np.float64), Path(path).with_suffix(".png"), vmin, vmax))
    return out


def evaluate_model(model, dataset: CrimeDataset, first_day: int, last_day: int, start_hours=(0.0,),
                   hours=(24.0,), threshold: float = 0.5, k: int = 10, with_evolving: bool = True):
    """Score every (day, start, length, type) interval of ``[first_day, last_day]``.

    Returns ``(report, probabilities (N, cells), labels (N, cells), queries)``.
    """
    from .prediction import Predictor
    from .training import evaluation_intervals

    ds = dataset if dataset.grid_id is not None else dataset.with_grid(model.grid)
    ev = evaluation_intervals(ds, model.grid, first_day, last_day, start_hours, hours)
    probs = Predictor(model, ds, with_evolving).predict(ev.queries)
    labels = ev.labels.numpy()
    report = f1_metrics(probs, labels, threshold, ev.queries.type, model.types)
    report.k = k
    report.hr_at_k = mean_hit_ratio(probs, ds, ev.queries, k)
    report.auc = auc(probs, labels)
    report.n_intervals = len(ev.queries)
    return report, probs, labels, ev.queries
