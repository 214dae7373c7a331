"""Deterministic SVG figures for traces and grid results."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .runner import read_trace

_PANELS = (
    ("alpha", "task learning rate α"),
    ("beta", "meta learning rate β"),
    ("meta_loss", "training loss (post-adaptation)"),
    ("val_loss", "validation loss"),
)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "alphamaml"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _to_svg(fig) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return buf.getvalue()


def traces_figure(paths, labels=None):
    """Four stacked panels (α, β, training loss, validation loss), one line per trace."""
    plt = _pyplot()
    paths = [Path(p) for p in paths]
    labels = labels or [p.parent.name if p.name == "trace.csv" else p.stem for p in paths]
    fig, axes = plt.subplots(len(_PANELS), 1, figsize=(6, 9), sharex=True)
    for path, label in zip(paths, labels):
        rows = read_trace(path)
        it = np.array([r.iter for r in rows])
        for ax, (col, _) in zip(axes, _PANELS):
            y = np.array([np.nan if getattr(r, col) is None else getattr(r, col) for r in rows])
            mask = np.isfinite(y)
            ax.plot(it[mask], y[mask], label=label, marker="." if col == "val_loss" else None)
    for ax, (_, title) in zip(axes, _PANELS):
        ax.set_ylabel(title, fontsize=8)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=7)
    axes[-1].set_xlabel("iteration")
    fig.tight_layout()
    return fig


def traces_svg(paths, labels=None) -> str:
    return _to_svg(traces_figure(paths, labels))


def _table(ax, rows, cols, values, title, row_label, col_label):
    data = np.array(values, dtype=float)
    masked = np.ma.masked_invalid(data)
    cmap = _pyplot().get_cmap("viridis_r").copy()
    cmap.set_bad("white")
    ax.imshow(masked, cmap=cmap, aspect="auto")
    for (r, c), v in np.ndenumerate(data):
        if np.isfinite(v):
            ax.text(c, r, f"{int(v)}", ha="center", va="center", fontsize=7, color="white")
    ax.set_xticks(range(len(cols)), [f"{c:g}" for c in cols], fontsize=7)
    ax.set_yticks(range(len(rows)), [f"{r:g}" for r in rows], fontsize=7)
    ax.set_xlabel(col_label, fontsize=8)
    ax.set_ylabel(row_label, fontsize=8)
    ax.set_title(title, fontsize=8)


def heatmap_figure(cells, threshold: float | None = None, max_iters: int | None = None):
    """Iterations-to-threshold tables; blank cells did not converge.

    MAML gets one α0 × β0 table; Alpha MAML one hyper-rate table per (α0, β0).
    """
    plt = _pyplot()
    panels = []
    maml = [c for c in cells if c.algorithm == "maml"]
    if maml:
        a0s = sorted({c.alpha0 for c in maml}, reverse=True)
        b0s = sorted({c.beta0 for c in maml}, reverse=True)
        vals = [[next((c.iters_to_threshold for c in maml if c.alpha0 == a and c.beta0 == b), None)
                 for b in b0s] for a in a0s]
        panels.append(("MAML", a0s, b0s, vals, "α0", "β0"))
    am = [c for c in cells if c.algorithm == "alpha-maml"]
    for a0, b0 in sorted({(c.alpha0, c.beta0) for c in am}, reverse=True):
        sub = [c for c in am if c.alpha0 == a0 and c.beta0 == b0]
        ahs = sorted({c.alpha_hyperlr for c in sub}, reverse=True)
        bhs = sorted({c.beta_hyperlr for c in sub}, reverse=True)
        vals = [[next((c.iters_to_threshold for c in sub
                       if c.alpha_hyperlr == ah and c.beta_hyperlr == bh), None) for bh in bhs]
                for ah in ahs]
        panels.append((f"Alpha MAML α0={a0:g} β0={b0:g}", ahs, bhs, vals, "α hyper-lr", "β hyper-lr"))
    if not panels:
        raise ValueError("heatmap: no grid cells")
    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2), squeeze=False)
    for ax, (title, rows, cols, vals, rl, cl) in zip(axes[0], panels):
        vals = [[np.nan if v is None else v for v in row] for row in vals]
        _table(ax, rows, cols, vals, title, rl, cl)
    if threshold is not None:
        title = f"iterations to loss ≤ {threshold:g} (blank: not within {max_iters})"
    else:
        title = "iterations to threshold (blank: not converged)"
    fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    return fig


def heatmap_svg(cells, threshold: float | None = None, max_iters: int | None = None) -> str:
    return _to_svg(heatmap_figure(cells, threshold, max_iters))


def plot(paths, kind: str, out) -> list[Path]:
    """Render ``traces`` (trace CSVs) or ``heatmap`` (grid CSVs) to SVG at ``out``."""
    from .grid import read_grid_csv

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if kind == "traces":
        out.write_text(traces_svg(paths))
        return [out]
    if kind == "heatmap":
        written = []
        for i, p in enumerate(paths):
            cells = read_grid_csv(p)
            target = out if len(paths) == 1 else out.with_name(f"{out.stem}_{i}{out.suffix}")
            target.write_text(heatmap_svg(cells))
            written.append(target)
        return written
    raise ValueError(f"unknown plot kind {kind!r}; expected 'traces' or 'heatmap'")
