"""Figures written to files (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_CELL_PX = 16


def save_grayscale(matrix: np.ndarray, path, vmin=None, vmax=None) -> Path:
    """One gray block per cell, black = ``vmin``, white = ``vmax``."""
    m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lo = float(m.min()) if vmin is None else float(vmin)
    hi = float(m.max()) if vmax is None else float(vmax)
    scaled = np.zeros_like(m) if hi <= lo else np.clip((m - lo) / (hi - lo), 0.0, 1.0)
    img = np.kron(scaled[::-1], np.ones((_CELL_PX, _CELL_PX)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, img, cmap="gray", vmin=0.0, vmax=1.0)
    return path


def heatmap_figure(matrix: np.ndarray, path, title: str = "", vmin=0.0, vmax=1.0) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(np.asarray(matrix), origin="lower", cmap="viridis", vmin=vmin, vmax=vmax)
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def loss_curves(traces: dict, path) -> Path:
    """One panel per stage; stage 2 draws one line per type."""
    stages = [s for s in ("stage1", "stage2", "stage3") if traces.get(s)]
    fig, axes = plt.subplots(1, max(len(stages), 1), figsize=(4 * max(len(stages), 1), 3), squeeze=False)
    for ax, stage in zip(axes[0], stages):
        tr = traces[stage]
        if isinstance(tr, dict):
            for name, vals in tr.items():
                if vals:
                    ax.plot(np.arange(1, len(vals) + 1), vals, label=name)
            ax.set_ylabel("NLL per day")
            ax.legend(fontsize=7)
        else:
            ax.plot(np.arange(1, len(tr) + 1), tr)
            ax.set_ylabel("cross-entropy")
        ax.set_xlabel("epoch")
        ax.set_title(stage)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
