"""Experiment orchestration: runs, grids, figures and the CLI."""
from .config import RunConfig
from .grid import GridCell, GridResult, grid
from .plot import heatmap_svg, plot, traces_svg
from .runner import NOT_CONVERGED, TRACE_COLUMNS, RunTrace, TraceRow, iters_to_threshold, read_trace, run

__all__ = [
    "RunConfig", "GridCell", "GridResult", "grid", "heatmap_svg", "plot", "traces_svg",
    "NOT_CONVERGED", "TRACE_COLUMNS", "RunTrace", "TraceRow", "iters_to_threshold", "read_trace", "run",
]
