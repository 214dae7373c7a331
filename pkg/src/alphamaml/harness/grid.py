"""Exhaustive grids over (alpha0, beta0, alpha_hyperlr, beta_hyperlr)."""
from __future__ import annotations

import csv
import io
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .runner import NOT_CONVERGED, run

log = logging.getLogger(__name__)

GRID_AXES = ("alpha0", "beta0", "alpha_hyperlr", "beta_hyperlr")
GRID_COLUMNS = ("algorithm", "alpha0", "beta0", "alpha_hyperlr", "beta_hyperlr",
                "iters_to_threshold", "final_loss", "status", "error")


@dataclass
class GridCell:
    algorithm: str
    alpha0: float
    beta0: float
    alpha_hyperlr: float | None
    beta_hyperlr: float | None
    iters_to_threshold: int | None = None
    final_loss: float | None = None
    status: str = ""
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.iters_to_threshold is not None

    @property
    def name(self) -> str:
        parts = [self.algorithm, f"a{self.alpha0:g}", f"b{self.beta0:g}"]
        if self.algorithm == "alpha-maml":
            parts += [f"ah{self.alpha_hyperlr:g}", f"bh{self.beta_hyperlr:g}"]
        return "_".join(parts)


@dataclass
class GridResult:
    cells: list = field(default_factory=list)
    threshold: float = 0.0
    max_iters: int = 0

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for c in self.cells:
            w.writerow([
                c.algorithm, repr(c.alpha0), repr(c.beta0),
                "" if c.alpha_hyperlr is None else repr(c.alpha_hyperlr),
                "" if c.beta_hyperlr is None else repr(c.beta_hyperlr),
                NOT_CONVERGED if c.iters_to_threshold is None else c.iters_to_threshold,
                "" if c.final_loss is None else repr(c.final_loss),
                c.status, c.error,
            ])
        return buf.getvalue()

    def lookup(self, algorithm: str, **axes) -> list[GridCell]:
        return [c for c in self.cells if c.algorithm == algorithm
                and all(getattr(c, k) == v for k, v in axes.items())]


def read_grid_csv(path) -> list[GridCell]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != GRID_COLUMNS:
            raise ValueError(f"{path}: grid CSV must have columns {','.join(GRID_COLUMNS)}; got {header}")
        cells = []
        for alg, a0, b0, ah, bh, its, fl, st, err in reader:
            cells.append(GridCell(alg, float(a0), float(b0), float(ah) if ah else None,
                                  float(bh) if bh else None,
                                  None if its == NOT_CONVERGED else int(its),
                                  float(fl) if fl else None, st, err))
    return cells


def expand(base: RunConfig, grid_spec: dict, algorithms=None) -> list[GridCell]:
    """Cells in a fixed order; MAML cells drop the hyper-learning-rate axes."""
    unknown = set(grid_spec) - set(GRID_AXES)
    if unknown:
        raise ValueError(f"unknown grid axes {sorted(unknown)}; allowed: {GRID_AXES}")
    if not grid_spec or not any(grid_spec.values()):
        raise ValueError("grid_spec is empty")
    vals = {ax: list(grid_spec.get(ax) or [getattr(base, ax)]) for ax in GRID_AXES}
    cells = []
    for alg in algorithms or [base.algorithm]:
        for a0, b0 in itertools.product(vals["alpha0"], vals["beta0"]):
            if alg == "maml":
                cells.append(GridCell(alg, float(a0), float(b0), None, None))
                continue
            for ah, bh in itertools.product(vals["alpha_hyperlr"], vals["beta_hyperlr"]):
                cells.append(GridCell(alg, float(a0), float(b0), float(ah), float(bh)))
    return cells


def cell_config(base: RunConfig, cell: GridCell, out_dir=None) -> RunConfig:
    changes = dict(algorithm=cell.algorithm, alpha0=cell.alpha0, beta0=cell.beta0,
                   output_dir=str(Path(out_dir) / "cells" / cell.name) if out_dir else None)
    if cell.algorithm == "alpha-maml":
        changes.update(alpha_hyperlr=cell.alpha_hyperlr, beta_hyperlr=cell.beta_hyperlr)
    else:
        changes.update(alpha_hyperlr=0.0, beta_hyperlr=0.0)
    return base.updated(**changes)


def run_cell(args) -> GridCell:
    base, cell, out_dir = args
    cell = GridCell(cell.algorithm, cell.alpha0, cell.beta0, cell.alpha_hyperlr, cell.beta_hyperlr)
    try:
        trace = run(cell_config(base, cell, out_dir))
    except Exception as exc:  # a crashed cell must not stop the grid
        log.exception("grid cell %s failed", cell.name)
        cell.status, cell.error = "error", f"{type(exc).__name__}: {exc}"
        return cell
    cell.iters_to_threshold = trace.metadata["iters_to_threshold"]
    cell.final_loss = trace.metadata["final_loss"]
    cell.status = trace.status
    cell.error = (trace.metadata.get("error") or "").replace("\n", " ")
    return cell


def grid(base: RunConfig, grid_spec: dict, workers: int = 1, algorithms=None,
         out_dir=None) -> GridResult:
    """Run every cell with the base seed; results keep the expansion order."""
    cells = expand(base, grid_spec, algorithms)
    jobs = [(base, c, out_dir) for c in cells]
    if workers <= 1:
        done = [run_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(run_cell, jobs))
    result = GridResult(done, base.loss_threshold, base.max_iters)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.csv").write_text(result.csv_text())
        from .plot import heatmap_svg

        (out / "grid.svg").write_text(heatmap_svg(result.cells, base.loss_threshold, base.max_iters))
    return result
