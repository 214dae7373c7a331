import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alphamaml import meta
from alphamaml.harness import RunConfig, grid, read_trace, run
from alphamaml.harness.cli import build_parser, main
from alphamaml.harness.grid import GridCell, GridResult, expand, read_grid_csv
from alphamaml.harness.plot import heatmap_figure, heatmap_svg, traces_figure, traces_svg
from alphamaml.harness.runner import TRACE_COLUMNS, iters_to_threshold, smoothed

BLOBS = RunConfig(task="blobs", n_way=2, k_shot=5, alpha0=0.4, beta0=0.1, max_iters=10, val_every=5,
                  loss_threshold=0.6)


# ------------------------------------------------------------------ config

def test_config_json_roundtrip_and_hash(tmp_path):
    cfg = BLOBS.updated(output_dir="x")
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert cfg.content_hash() == cfg.updated(output_dir="y").content_hash()
    assert cfg.content_hash() != cfg.updated(seed=1).content_hash()
    with pytest.raises(ValueError, match="unknown config keys"):
        RunConfig.from_dict({"alpha": 1})


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig(max_iters=0)
    with pytest.raises(ValueError):
        RunConfig(loss_threshold=0.0)
    with pytest.raises(ValueError):
        RunConfig(algorithm="sgd")
    assert RunConfig(algorithm="alpha_maml").algorithm == "alpha-maml"


def test_maml_ignores_hyperlrs():
    cfg = BLOBS.updated(alpha_hyperlr=0.1, beta_hyperlr=0.1)
    assert cfg.meta_config().alpha_hyperlr == 0.0 == cfg.meta_config().beta_hyperlr


# ------------------------------------------------------------------ run

def test_maml_trace_ten_rows_constant_rates(tmp_path):
    trace = run(BLOBS.updated(output_dir=str(tmp_path)))
    rows = read_trace(tmp_path / "trace.csv")
    assert [r.iter for r in rows] == list(range(1, 11))
    assert all(r.alpha == 0.4 and r.beta == 0.1 for r in rows)
    assert [r.val_loss is not None for r in rows] == [True, False, False, False, True] + [False] * 4 + [True]
    md = json.loads((tmp_path / "run.json").read_text())
    assert md["status"] == "completed" and md["config"] == BLOBS.updated(output_dir=str(tmp_path)).to_dict()
    assert md["config_hash"] == BLOBS.content_hash()
    assert (tmp_path / "checkpoint.bin").exists()
    assert trace.csv_text() == (tmp_path / "trace.csv").read_text()


def test_alpha_maml_trace_moves_rates():
    trace = run(BLOBS.updated(algorithm="alpha-maml", alpha_hyperlr=1e-3, beta_hyperlr=1e-3), write=False)
    alphas, betas = trace.column("alpha"), trace.column("beta")
    assert alphas[0] == 0.4 and len(set(alphas)) > 1
    assert betas[0] == 0.1 and len(set(betas)) > 1


def test_initial_twenty_way_loss_is_chance():
    trace = run(RunConfig(task="blobs", n_way=20, k_shot=1, max_iters=1), write=False)
    assert abs(trace.rows[0].train_loss - math.log(20)) < 0.05


def test_trace_reproducible_from_embedded_config(tmp_path):
    run(BLOBS.updated(algorithm="alpha-maml", alpha_hyperlr=1e-3, beta_hyperlr=1e-3,
                      output_dir=str(tmp_path / "a")))
    cfg = RunConfig.from_dict(json.loads((tmp_path / "a" / "run.json").read_text())["config"])
    run(cfg.updated(output_dir=str(tmp_path / "b")))
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    sa, _ = meta.load_checkpoint(tmp_path / "a" / "checkpoint.bin")
    sb, _ = meta.load_checkpoint(tmp_path / "b" / "checkpoint.bin")
    assert sa.theta.flat().tobytes() == sb.theta.flat().tobytes() and (sa.alpha, sa.beta) == (sb.alpha, sb.beta)


def test_divergence_writes_partial_trace(tmp_path):
    cfg = BLOBS.updated(task="sinusoid", n_way=1, alpha0=0.01, beta0=1.0, max_iters=200, output_dir=str(tmp_path))
    trace = run(cfg)
    assert trace.status == "diverged"
    assert 0 < len(read_trace(tmp_path / "trace.csv")) < 200
    md = json.loads((tmp_path / "run.json").read_text())
    assert md["status"] == "diverged" and "not finite" in md["error"]


def test_missing_dataset_is_actionable():
    with pytest.raises(FileNotFoundError, match="--data-root"):
        run(RunConfig(task="omniglot", max_iters=1), write=False)
    with pytest.raises(FileNotFoundError, match="alphamaml ingest"):
        run(RunConfig(task="omniglot", cache="/nonexistent/omni.bin", max_iters=1), write=False)


def test_omniglot_run_on_synthetic_glyphs(tmp_path):
    from alphamaml.tasks import write_synthetic_omniglot

    root = write_synthetic_omniglot(tmp_path / "tree", n_alphabets=2, chars_per_alphabet=4, size=56)
    cfg = RunConfig(task="omniglot", data_root=str(root), cache=str(tmp_path / "c.bin"), n_way=3, n_train=6,
                    q_query=2, meta_batch_size=2, max_iters=2, n_val_episodes=2, val_every=1)
    trace = run(cfg, write=False)
    assert trace.status == "completed" and len(trace.rows) == 2
    assert abs(trace.rows[0].train_loss - math.log(3)) < 0.05


def test_read_trace_schema_error(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("iter,alpha\n1,0.1\n")
    with pytest.raises(ValueError, match=",".join(TRACE_COLUMNS)):
        read_trace(p)


# ------------------------------------------------------------------ threshold detection

def test_smoothed_and_threshold_examples():
    vals = [3.0] * 9 + [1.0] * 20
    s = smoothed(vals, 10)
    assert np.isnan(s[:9]).all() and s[9] == pytest.approx(2.8)
    assert iters_to_threshold(vals, 2.0, 10) == 14  # five threes and five ones average exactly 2
    assert iters_to_threshold(vals, 0.5, 10) is None
    assert iters_to_threshold([1.0, 1.0], 5.0, 10) is None  # window never fills


@settings(max_examples=100, deadline=None)
@given(vals=st.lists(st.floats(0, 5), min_size=1, max_size=60),
       t1=st.floats(0.1, 5), t2=st.floats(0.1, 5), w=st.integers(1, 10))
def test_threshold_monotone(vals, t1, t2, w):
    lo, hi = sorted((t1, t2))
    tight, loose = iters_to_threshold(vals, lo, w), iters_to_threshold(vals, hi, w)
    if tight is not None:
        assert loose is not None and loose <= tight
    if loose is not None:
        assert loose <= len(vals)


# ------------------------------------------------------------------ grid

def test_expand_maml_ignores_hyperlr_axes():
    cells = expand(BLOBS, {"alpha0": [0.1, 0.4], "alpha_hyperlr": [1e-3, 1e-4]},
                   algorithms=["maml", "alpha-maml"])
    maml = [c for c in cells if c.algorithm == "maml"]
    am = [c for c in cells if c.algorithm == "alpha-maml"]
    assert len(maml) == 2 and all(c.alpha_hyperlr is None for c in maml)
    assert len(am) == 4
    with pytest.raises(ValueError, match="empty"):
        expand(BLOBS, {})
    with pytest.raises(ValueError, match="unknown grid axes"):
        expand(BLOBS, {"gamma": [1]})


def test_grid_workers_identical_and_bounded(tmp_path):
    spec = {"alpha0": [0.1, 0.4], "beta0": [0.05, 0.1]}
    a = grid(BLOBS, spec, workers=1, algorithms=["maml", "alpha-maml"], out_dir=tmp_path / "a")
    b = grid(BLOBS, spec, workers=2, algorithms=["maml", "alpha-maml"], out_dir=tmp_path / "b")
    assert a.csv_text() == b.csv_text()
    assert (tmp_path / "a" / "grid.svg").read_bytes() == (tmp_path / "b" / "grid.svg").read_bytes()
    for c in a.cells:
        assert c.iters_to_threshold is None or c.iters_to_threshold <= BLOBS.max_iters
    back = read_grid_csv(tmp_path / "a" / "grid.csv")
    assert GridResult(back).csv_text() == a.csv_text()
    assert (tmp_path / "a" / "cells" / "maml_a0.1_b0.05" / "trace.csv").exists()


def test_grid_cell_crash_recorded(tmp_path, monkeypatch):
    import importlib

    gmod = importlib.import_module("alphamaml.harness.grid")

    def boom(cfg, write=True):
        if cfg.alpha0 == 0.2:
            raise RuntimeError("boom")
        return run(cfg, write)

    monkeypatch.setattr(gmod, "run", boom)
    res = grid(BLOBS.updated(max_iters=2), {"alpha0": [0.1, 0.2]})
    bad = res.lookup("maml", alpha0=0.2)[0]
    assert bad.status == "error" and "RuntimeError: boom" in bad.error and bad.iters_to_threshold is None
    assert res.lookup("maml", alpha0=0.1)[0].status == "completed"
    assert "NOT_CONVERGED" in res.csv_text()


def test_grid_csv_schema_error(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("a,b\n")
    with pytest.raises(ValueError, match="iters_to_threshold"):
        read_grid_csv(p)


# ------------------------------------------------------------------ plots

def _three_by_three():
    cells = []
    for i, a in enumerate([1e-2, 1e-3, 1e-4]):
        for j, b in enumerate([1e-4, 1e-5, 1e-6]):
            its = None if (i, j) == (2, 2) else 10 * (i + j + 1)
            cells.append(GridCell("maml", a, b, None, None, its, 1.0, "completed"))
    return cells


def test_heatmap_one_blank_cell():
    fig = heatmap_figure(_three_by_three(), 2.5, 500)
    ax = fig.axes[0]
    data = ax.images[0].get_array()
    assert data.shape == (3, 3) and int(np.ma.getmaskarray(data).sum()) == 1
    assert len(ax.texts) == 8


def test_heatmap_deterministic():
    assert heatmap_svg(_three_by_three()) == heatmap_svg(_three_by_three())
    assert "Date" not in heatmap_svg(_three_by_three())


def test_traces_four_panels_and_deterministic(tmp_path):
    run(BLOBS.updated(output_dir=str(tmp_path / "r")))
    path = tmp_path / "r" / "trace.csv"
    fig = traces_figure([path])
    assert len(fig.axes) == 4
    labels = [ax.get_ylabel() for ax in fig.axes]
    assert labels[0].startswith("task learning rate") and labels[3] == "validation loss"
    assert traces_svg([path]) == traces_svg([path])


# ------------------------------------------------------------------ CLI

def test_cli_has_exact_flag_names():
    parser = build_parser()
    expected = ["--alg", "--alpha0", "--beta0", "--alpha-hyperlr", "--beta-hyperlr", "--n-way", "--k-shot",
                "--q-query", "--meta-batch", "--inner-steps", "--first-order", "--max-iters", "--threshold",
                "--seed", "--task", "--data-root", "--cache", "--out", "--alpha-update-source"]
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"train", "grid", "eval", "plot", "ingest"}
    for cmd in ("train", "grid"):
        opts = {o for a in sub[cmd]._actions for o in a.option_strings}
        assert set(expected) <= opts
    assert "--workers" in {o for a in sub["grid"]._actions for o in a.option_strings}


def test_cli_train_with_config_override(tmp_path, capsys):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(BLOBS.updated(max_iters=50).to_json())
    code = main(["train", "--config", str(cfg_file), "--max-iters", "3", "--alg", "alpha-maml",
                 "--alpha-hyperlr", "0.001", "--out", str(tmp_path / "o")])
    assert code == 0
    md = json.loads((tmp_path / "o" / "run.json").read_text())
    assert md["config"]["max_iters"] == 3 and md["config"]["algorithm"] == "alpha-maml"
    assert md["config"]["n_way"] == 2 and md["config"]["alpha_hyperlr"] == 0.001
    assert "completed" in capsys.readouterr().out


def test_cli_train_diverged_exit_code(tmp_path):
    code = main(["train", "--task", "sinusoid", "--n-way", "1", "--alpha0", "0.01", "--beta0", "1.0",
                 "--max-iters", "200", "--out", str(tmp_path)])
    assert code == 3 and (tmp_path / "trace.csv").exists()


def test_cli_missing_data_exit_code(tmp_path, capsys):
    assert main(["train", "--task", "omniglot", "--out", str(tmp_path)]) == 2
    assert "--data-root" in capsys.readouterr().err


def test_cli_grid_and_plot(tmp_path):
    out = tmp_path / "g"
    assert main(["grid", "--task", "blobs", "--n-way", "2", "--k-shot", "5", "--max-iters", "5",
                 "--alg", "maml", "alpha-maml", "--alpha0", "0.1", "0.4", "--beta0", "0.1",
                 "--alpha-hyperlr", "0.001", "--beta-hyperlr", "0.001", "--workers", "1",
                 "--out", str(out)]) == 0
    cells = read_grid_csv(out / "grid.csv")
    assert len(cells) == 4
    assert main(["plot", str(out / "grid.csv"), "--kind", "heatmap", "--out", str(tmp_path / "h.svg")]) == 0
    trace = next((out / "cells").glob("*/trace.csv"))
    assert main(["plot", str(trace), "--out", str(tmp_path / "t.svg")]) == 0
    assert (tmp_path / "h.svg").read_text().startswith("<?xml")


def test_cli_eval_untrained_is_chance(tmp_path):
    run(RunConfig(task="blobs", n_way=5, max_iters=1, beta0=1e-12, output_dir=str(tmp_path)))
    assert main(["eval", str(tmp_path / "checkpoint.bin"), "--n-episodes", "200", "--inner-steps", "0"]) == 0
    rep = json.loads((tmp_path / "eval.json").read_text())
    assert rep["metric"] == "accuracy" and rep["ci95"][0] <= 0.2 <= rep["ci95"][1]


def test_cli_eval_needs_episodes(tmp_path):
    run(BLOBS.updated(max_iters=1, output_dir=str(tmp_path)))
    with pytest.raises(SystemExit, match="need ≥1 episode"):
        main(["eval", str(tmp_path / "checkpoint.bin"), "--n-episodes", "0"])


def test_cli_eval_version_mismatch(tmp_path):
    run(BLOBS.updated(max_iters=1, output_dir=str(tmp_path)))
    ck = tmp_path / "checkpoint.bin"
    buf = bytearray(ck.read_bytes())
    buf[5] = 2
    ck.write_bytes(bytes(buf))
    with pytest.raises(ValueError, match="version 2"):
        main(["eval", str(ck)])


def test_cli_eval_trained_sinusoid(sine_run, tmp_path, capsys):
    _, _, out = sine_run
    assert main(["eval", str(out / "checkpoint.bin"), "--n-episodes", "100", "--inner-steps", "10",
                 "--out", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["metric"] == "mse" and rep["mean"] < rep["pre_adaptation_mean"]
    assert "mse:" in capsys.readouterr().out


def test_cli_ingest(tmp_path, capsys):
    from alphamaml.tasks import write_synthetic_omniglot

    root = write_synthetic_omniglot(tmp_path / "tree", n_alphabets=1, chars_per_alphabet=3, size=40)
    cache = tmp_path / "c.bin"
    assert main(["ingest", "--data-root", str(root), "--cache", str(cache), "--n-train", "2"]) == 0
    assert "3 characters (2 meta-train, 1 meta-test)" in capsys.readouterr().out
    first = cache.read_bytes()
    assert main(["ingest", "--data-root", str(root), "--cache", str(cache), "--n-train", "2", "--force"]) == 0
    assert cache.read_bytes() == first


def test_checkpoint_loads_into_state(tmp_path):
    run(BLOBS.updated(max_iters=2, output_dir=str(tmp_path)))
    state, cfg = meta.load_checkpoint(tmp_path / "checkpoint.bin")
    assert state.iter == 2 and RunConfig.from_dict(cfg).n_way == 2
