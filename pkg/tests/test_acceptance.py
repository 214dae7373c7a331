"""Acceptance criteria, one test each.

Every test records a one-line verdict that is printed in the pytest terminal
summary (see conftest.py), so `pytest tests/test_acceptance.py` ends with a
PASS/FAIL line per criterion.

The two Omniglot experiments need the dataset. Point ALPHAMAML_OMNIGLOT_CACHE
at a cache built by `alphamaml ingest`, or ALPHAMAML_OMNIGLOT_ROOT at the
image tree; without either they fail with an explanation.
"""
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from alphamaml import meta
from alphamaml.harness import RunConfig, run
from alphamaml.harness.cli import main
from alphamaml.harness.runner import read_trace

sys.path.insert(0, str(Path(__file__).parent))
from test_meta import alpha_fd_relerr, beta_fd_relerr, convnet_fd_check  # noqa: E402
from conftest import QuadLearner, quad_episode  # noqa: E402

VERDICTS: dict = {}
REPO = Path(__file__).resolve().parents[1]
SEEDS5 = range(5)


def verdict(n: int, ok: bool, detail: str, elapsed: float, budget: float | None = None):
    within = budget is None or elapsed < budget
    status = "PASS" if ok and within else "FAIL"
    timing = f"{elapsed:.1f}s" + (f" (budget {budget:.0f}s)" if budget else "")
    VERDICTS[n] = f"criterion {n}: {status}: {detail}; {timing}"
    return ok and within


def omniglot_source():
    """(cache, root) for the Omniglot dataset, or None if it is not available."""
    cache = os.environ.get("ALPHAMAML_OMNIGLOT_CACHE", str(REPO / "data" / "omniglot.bin"))
    root = os.environ.get("ALPHAMAML_OMNIGLOT_ROOT", str(REPO / "data" / "omniglot"))
    if Path(cache).is_file():
        return cache, None
    if Path(root).is_dir():
        return cache, root
    return None


def test_criterion_1_reduction():
    t0 = time.perf_counter()
    base = RunConfig(task="blobs", n_way=2, k_shot=5, alpha0=0.4, beta0=0.1, max_iters=100, seed=0)
    a = run(base.updated(algorithm="maml"), write=False)
    b = run(base.updated(algorithm="alpha-maml", alpha_hyperlr=0.0, beta_hyperlr=0.0), write=False)
    same = a.csv_text() == b.csv_text() and len(a.rows) == 100
    same &= a.state.theta.flat().tobytes() == b.state.theta.flat().tobytes()
    assert verdict(1, same, f"100-iteration blobs traces bitwise {'identical' if same else 'DIFFERENT'}",
                   time.perf_counter() - t0, 60)


def test_criterion_2_alpha_hypergradient():
    t0 = time.perf_counter()
    errs = [alpha_fd_relerr(seed, eps=1e-5) for seed in range(20)]
    ok = max(errs) < 1e-4
    assert verdict(2, ok, f"max rel. error {max(errs):.2e} over 20 seeds (tol 1e-4)", time.perf_counter() - t0, 60)


def test_criterion_3_beta_hypergradient():
    t0 = time.perf_counter()
    errs = [beta_fd_relerr(seed) for seed in range(20)]
    ok = max(errs) < 1e-4
    assert verdict(3, ok, f"max rel. error {max(errs):.2e} over 20 seeds (tol 1e-4)", time.perf_counter() - t0, 60)


def test_criterion_4_second_order():
    t0 = time.perf_counter()
    worst = convnet_fd_check(seed=0, n_coords=10)
    full, _, _ = meta.meta_gradient(QuadLearner(), _quad_theta(), [quad_episode()], 0.1)
    fo, _, _ = meta.meta_gradient(QuadLearner(), _quad_theta(), [quad_episode()], 0.1, first_order=True)
    f, g = full[0].item(), fo[0].item()
    ok = worst < 1e-4 and abs(f - g) > 1e-6 and abs(f - 1.28) < 1e-12 and abs(g - 1.6) < 1e-12
    assert verdict(4, ok, f"convnet worst rel. error {worst:.2e} on 10 coords; quadratic full {f:.6g} vs "
                          f"first-order {g:.6g}", time.perf_counter() - t0, 300)


def _quad_theta():
    from alphamaml.autodiff import ParamVector

    return ParamVector.from_arrays([np.array(1.0)])


def _omniglot_iters(src, algorithm, seed, alpha0, beta0, ah=0.0, bh=0.0):
    cache, root = src
    cfg = RunConfig(task="omniglot", n_way=5, k_shot=1, algorithm=algorithm, alpha0=alpha0, beta0=beta0,
                    alpha_hyperlr=ah, beta_hyperlr=bh, max_iters=500, loss_threshold=math.log(5) - 0.05,
                    seed=seed, cache=cache, data_root=root, stop_at_threshold=True, val_every=500)
    tr = run(cfg, write=False)
    return tr.metadata["iters_to_threshold"]


def _missing_data(n: int, t0: float):
    verdict(n, False, "Omniglot dataset not available (set ALPHAMAML_OMNIGLOT_CACHE or "
                      "ALPHAMAML_OMNIGLOT_ROOT); experiment not run", time.perf_counter() - t0)
    pytest.fail("Omniglot dataset not available; see README 'Omniglot data'")


def test_criterion_5_untuned_recovery():
    t0 = time.perf_counter()
    src = omniglot_source()
    if src is None:
        _missing_data(5, t0)
    wins, notes = 0, []
    for seed in SEEDS5:
        base = _omniglot_iters(src, "maml", seed, 1e-4, 1e-6)
        base_eff = math.inf if base is None else base
        cells = [_omniglot_iters(src, "alpha-maml", seed, 1e-4, 1e-6, ah, bh)
                 for ah in (1e-3, 1e-4) for bh in (1e-3, 1e-4)]
        won = all(c is not None and c < base_eff for c in cells)
        wins += won
        notes.append(f"s{seed}: maml {base or 'NC'} vs {[c or 'NC' for c in cells]}")
    ok = wins >= 4
    assert verdict(5, ok, f"Alpha MAML strictly faster in {wins}/5 seeds ({'; '.join(notes)})",
                   time.perf_counter() - t0, 1800)


def test_criterion_6_tuned_parity():
    t0 = time.perf_counter()
    src = omniglot_source()
    if src is None:
        _missing_data(6, t0)
    ok_seeds, notes = 0, []
    for seed in SEEDS5:
        base = _omniglot_iters(src, "maml", seed, 1e-3, 1e-3)
        cells = [_omniglot_iters(src, "alpha-maml", seed, 1e-3, 1e-3, ah, bh)
                 for ah in (1e-3, 1e-4) for bh in (1e-3, 1e-4)]
        if base is None:
            fine = True  # nothing to be slower than within the cap
        else:
            fine = all(c is not None and c <= 1.25 * base for c in cells)
        ok_seeds += fine
        notes.append(f"s{seed}: maml {base or 'NC'} vs {[c or 'NC' for c in cells]}")
    ok = ok_seeds == 5
    assert verdict(6, ok, f"within 1.25x in {ok_seeds}/5 seeds ({'; '.join(notes)})",
                   time.perf_counter() - t0, 1800)


def test_criterion_7_trace_fidelity(tmp_path):
    t0 = time.perf_counter()
    src = omniglot_source()
    args = ["train", "--alg", "maml", "--n-way", "20", "--k-shot", "1", "--max-iters", "5",
            "--out", str(tmp_path)]
    if src is not None:
        cache, root = src
        args += ["--task", "omniglot", "--cache", cache] + (["--data-root", root] if root else [])
        what = "omniglot"
    else:
        args += ["--task", "blobs"]
        what = "blobs (Omniglot not available)"
    code = main(args)
    rows = read_trace(tmp_path / "trace.csv")
    iters = [r.iter for r in rows]
    monotone = all(b > a for a, b in zip(iters, iters[1:]))
    const = len({r.alpha for r in rows}) == 1 and len({r.beta for r in rows}) == 1
    first = rows[0].train_loss
    close = abs(first - math.log(20)) <= 0.05
    ok = code == 0 and monotone and const and close
    assert verdict(7, ok, f"{what}: monotone iters {monotone}, constant rates {const}, "
                          f"initial 20-way loss {first:.4f} vs ln 20 = {math.log(20):.4f}",
                   time.perf_counter() - t0, 300)


def test_criterion_8_grid_determinism(tmp_path):
    t0 = time.perf_counter()
    common = ["grid", "--task", "blobs", "--n-way", "2", "--k-shot", "5", "--max-iters", "100",
              "--threshold", "0.6", "--alg", "maml", "alpha-maml", "--alpha0", "0.1", "0.4",
              "--beta0", "0.05", "0.1", "--alpha-hyperlr", "1e-3", "1e-4", "--beta-hyperlr", "1e-3", "1e-4"]
    assert main(common + ["--workers", "1", "--out", str(tmp_path / "w1")]) == 0
    assert main(common + ["--workers", "8", "--out", str(tmp_path / "w8")]) == 0
    a, b = (tmp_path / "w1" / "grid.csv").read_bytes(), (tmp_path / "w8" / "grid.csv").read_bytes()
    n_cells = a.count(b"\n") - 1
    ok = a == b
    assert verdict(8, ok, f"{n_cells}-cell grid CSVs {'identical' if ok else 'DIFFERENT'} for 1 vs 8 workers",
                   time.perf_counter() - t0, 600)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
