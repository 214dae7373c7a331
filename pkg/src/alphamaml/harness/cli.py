"""Command-line entry point: train, grid, eval, plot, ingest."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import meta
from ..tasks import ingest_omniglot
from .config import RunConfig

EXIT_DIVERGED = 3

# flag dest -> RunConfig field
_FLAG_FIELDS = {
    "alg": "algorithm",
    "alpha0": "alpha0",
    "beta0": "beta0",
    "alpha_hyperlr": "alpha_hyperlr",
    "beta_hyperlr": "beta_hyperlr",
    "n_way": "n_way",
    "k_shot": "k_shot",
    "q_query": "q_query",
    "meta_batch": "meta_batch_size",
    "inner_steps": "n_inner_steps",
    "first_order": "first_order",
    "max_iters": "max_iters",
    "threshold": "loss_threshold",
    "seed": "seed",
    "task": "task",
    "data_root": "data_root",
    "cache": "cache",
    "alpha_update_source": "alpha_update_source",
    "val_every": "val_every",
    "stop_at_threshold": "stop_at_threshold",
}


def _add_run_flags(p: argparse.ArgumentParser, multi: bool = False):
    nargs = "+" if multi else None
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--alg", choices=["maml", "alpha-maml"], nargs=nargs)
    p.add_argument("--alpha0", type=float, nargs=nargs)
    p.add_argument("--beta0", type=float, nargs=nargs)
    p.add_argument("--alpha-hyperlr", type=float, nargs=nargs)
    p.add_argument("--beta-hyperlr", type=float, nargs=nargs)
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--q-query", type=int)
    p.add_argument("--meta-batch", type=int)
    p.add_argument("--inner-steps", type=int)
    p.add_argument("--first-order", action="store_true", default=None)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=["omniglot", "sinusoid", "blobs"])
    p.add_argument("--data-root")
    p.add_argument("--cache")
    p.add_argument("--alpha-update-source", choices=["current", "previous"])
    p.add_argument("--val-every", type=int)
    p.add_argument("--stop-at-threshold", action="store_true", default=None)
    p.add_argument("--out", help="output directory")


_GRID_FLAGS = {"alg": "algorithm", "alpha0": "alpha0", "beta0": "beta0",
               "alpha_hyperlr": "alpha_hyperlr", "beta_hyperlr": "beta_hyperlr"}


def config_from_args(args, skip=()) -> RunConfig:
    base = RunConfig.from_json_file(args.config).to_dict() if args.config else {}
    for dest, fname in _FLAG_FIELDS.items():
        if dest in skip:
            continue
        v = getattr(args, dest, None)
        if v is not None:
            base[fname] = v
    if getattr(args, "out", None):
        base["output_dir"] = args.out
    return RunConfig.from_dict(base)


def cmd_train(args) -> int:
    from .runner import run

    cfg = config_from_args(args)
    if cfg.output_dir is None:
        cfg = cfg.updated(output_dir="runs/train")
    trace = run(cfg)
    md = trace.metadata
    print(f"{trace.status}: {md['iters_run']} iterations, final loss {md['final_loss']}, "
          f"alpha {md['final_alpha']:.6g}, beta {md['final_beta']:.6g}, "
          f"iters_to_threshold {md['iters_to_threshold'] or 'NOT_CONVERGED'}")
    print(f"trace written to {Path(cfg.output_dir) / 'trace.csv'}")
    return 0 if trace.status == "completed" else EXIT_DIVERGED


def cmd_grid(args) -> int:
    from .grid import grid

    cfg = config_from_args(args, skip=_GRID_FLAGS)
    spec = {}
    for dest in ("alpha0", "beta0", "alpha_hyperlr", "beta_hyperlr"):
        v = getattr(args, dest)
        if v:
            spec[dest] = v
    if not spec:
        raise SystemExit("grid: give at least one of --alpha0/--beta0/--alpha-hyperlr/--beta-hyperlr")
    algorithms = args.alg or [cfg.algorithm]
    out = args.out or "runs/grid"
    result = grid(cfg.updated(output_dir=None), spec, workers=args.workers, algorithms=algorithms,
                  out_dir=out)
    sys.stdout.write(result.csv_text())
    print(f"grid written to {Path(out) / 'grid.csv'}")
    return 0


def cmd_eval(args) -> int:
    from .runner import distributions

    if args.n_episodes < 1:
        raise SystemExit("eval: need ≥1 episode")
    state, cdict = meta.load_checkpoint(args.checkpoint)
    cfg = RunConfig.from_dict(cdict)
    overrides = {k: getattr(args, k) for k in ("n_way", "k_shot", "q_query", "seed") if getattr(args, k) is not None}
    if args.data_root:
        overrides["data_root"] = args.data_root
    if args.cache:
        overrides["cache"] = args.cache
    cfg = cfg.updated(**overrides)
    learner = cfg.learner()
    _, test = distributions(cfg)
    steps = cfg.n_inner_steps_eval if args.inner_steps is None else args.inner_steps
    alpha = state.alpha if args.alpha is None else args.alpha
    mean, ci = meta.evaluate(learner, state.theta, test, alpha, args.n_episodes, steps)
    pre, pre_ci = meta.evaluate(learner, state.theta, test, alpha, args.n_episodes, 0)
    metric = "accuracy" if learner.loss_kind == "cross_entropy" else "mse"
    report = {
        "checkpoint": str(args.checkpoint), "metric": metric, "n_episodes": args.n_episodes,
        "adaptation_steps": steps, "alpha": alpha, "mean": mean, "ci95": list(ci),
        "pre_adaptation_mean": pre, "pre_adaptation_ci95": list(pre_ci),
        "task": cfg.task, "n_way": cfg.n_way, "k_shot": cfg.k_shot, "iter": state.iter,
    }
    half = (ci[1] - ci[0]) / 2
    print(f"{metric}: {mean:.4f} ± {half:.4f} (95% CI, {args.n_episodes} episodes, "
          f"{steps} steps; before adaptation {pre:.4f})")
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("eval.json")
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"report written to {out}")
    return 0


def cmd_plot(args) -> int:
    from .plot import plot

    for p in plot(args.inputs, args.kind, args.out):
        print(f"wrote {p}")
    return 0


def cmd_ingest(args) -> int:
    if Path(args.cache).exists() and not args.force:
        print(f"{args.cache} exists; reloading (use --force to rebuild)")
    elif Path(args.cache).exists():
        Path(args.cache).unlink()
    store = ingest_omniglot(args.data_root, args.cache, n_train=args.n_train, split_seed=args.split_seed)
    n_tr = int(store.is_train.sum())
    print(f"{store.n_characters} characters ({n_tr} meta-train, {store.n_characters - n_tr} meta-test), "
          f"{store.n_instances} instances each, split seed {store.split_seed}; cache {args.cache}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphamaml", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training job and write its trace")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search iterations-to-threshold")
    _add_run_flags(p, multi=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("eval", help="evaluate a checkpoint on meta-test episodes")
    p.add_argument("checkpoint")
    p.add_argument("--n-episodes", type=int, default=100)
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--q-query", type=int)
    p.add_argument("--inner-steps", type=int)
    p.add_argument("--alpha", type=float, help="task learning rate (default: checkpoint's)")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-root")
    p.add_argument("--cache")
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render trace or grid CSVs to SVG")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--kind", choices=["traces", "heatmap"], default="traces")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("ingest", help="decode Omniglot PNGs into a binary cache")
    p.add_argument("--data-root", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--n-train", type=int, default=1200)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_ingest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
