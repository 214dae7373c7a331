"""Compare the compiled and numpy convolution kernels.

Times im2col/col2im at the convnet's layer shapes for both backends, then a
full second-order meta-gradient on one 5-way 1-shot episode with each backend
(in a subprocess, since the backend is chosen at import).

    python3 benchmarks/bench_kernels.py --repeat 20
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from alphamaml.autodiff import _pykernels

try:
    from alphamaml.autodiff import _ckernels
except ImportError:
    _ckernels = None

# (batch, channels, size) entering each conv of the 4-block net, query batch of 75
LAYERS = [(75, 1, 28), (75, 64, 14), (75, 64, 7), (75, 64, 4)]

_META_SNIPPET = """
import json, time
import numpy as np
from alphamaml import meta
from alphamaml.autodiff import BACKEND
from alphamaml.models import Learner, ModelSpec
from alphamaml.tasks import Episode
rng = np.random.default_rng(0)
learner = Learner(ModelSpec("convnet4", 5), "cross_entropy")
theta = learner.init()
ep = Episode(rng.uniform(size=(5, 1, 28, 28)), np.arange(5),
             rng.uniform(size=(75, 1, 28, 28)), np.repeat(np.arange(5), 15))
meta.meta_gradient(learner, theta, [ep], 0.4)
times = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    meta.meta_gradient(learner, theta, [ep], 0.4)
    times.append(time.perf_counter() - t0)
print(json.dumps({{"backend": BACKEND, "median_s": float(np.median(times))}}))
"""


def time_kernel(fn, *args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def kernel_table(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for B, C, H in LAYERS:
        x = rng.normal(size=(B, C, H, H))
        cols = _pykernels.im2col(x, 3, 3, 2, 1)
        g = rng.normal(size=cols.shape)
        row = {"shape": f"{B}x{C}x{H}x{H}"}
        for name, mod in (("numpy", _pykernels), ("cython", _ckernels)):
            if mod is None:
                continue
            row[f"im2col_{name}_ms"] = 1e3 * time_kernel(mod.im2col, x, 3, 3, 2, 1, repeat=repeat)
            row[f"col2im_{name}_ms"] = 1e3 * time_kernel(mod.col2im, g, B, C, H, H, 3, 3, 2, 1, repeat=repeat)
        rows.append(row)
    return rows


def meta_gradient_time(pure: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("ALPHAMAML_PURE_PYTHON", None)
    if pure:
        env["ALPHAMAML_PURE_PYTHON"] = "1"
    out = subprocess.run([sys.executable, "-c", _META_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--json", action="store_true", help="print raw JSON instead of a table")
    args = ap.parse_args(argv)

    rows = kernel_table(args.repeat)
    e2e = [meta_gradient_time(False, max(args.repeat // 4, 2)), meta_gradient_time(True, max(args.repeat // 4, 2))]
    if args.json:
        print(json.dumps({"kernels": rows, "meta_gradient": e2e}, indent=2))
        return 0
    if _ckernels is None:
        print("compiled kernels not built; showing numpy only")
    for r in rows:
        parts = [f"{k.replace('_ms', '')} {v:7.2f} ms" for k, v in r.items() if k != "shape"]
        print(f"{r['shape']:>14}  " + "  ".join(parts))
    for r in e2e:
        print(f"meta-gradient (5-way 1-shot, Q=15, second order), {r['backend']:>6}: {r['median_s']:.3f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
