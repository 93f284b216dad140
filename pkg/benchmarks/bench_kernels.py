"""Compare the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py            # kernels + end-to-end
    python3 benchmarks/bench_kernels.py --no-e2e   # kernels only

Kernel timings call both implementations in-process. The end-to-end part
runs one continual adaptation in two subprocesses, one with
CONTDA_DISABLE_NUMBA=1, and reports wall time and final accuracy.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from contda import _kernels

E2E_SNIPPET = r"""
import json, time
t = time.perf_counter()
from contda import BACKEND
from contda import experiment as ex
cfg = ex.default_config(data=dict(preset="{preset}"),
                        source=dict(epochs=1), adapt=dict(epochs_per_batch=1))
source, target = ex.domain_pair(cfg, 0)
ex.run_variant(cfg, "conda", 0)  # warm-up: JIT compile or cache load
warm = time.perf_counter() - t
ex.clear_source_cache()
cfg = ex.default_config(data=dict(preset="{preset}"))
t0 = time.perf_counter()
model = ex.source_model(cfg, 0, source)
t1 = time.perf_counter()
res = ex.run_variant(cfg, "conda", 0)
t2 = time.perf_counter()
print(json.dumps(dict(backend=BACKEND, warm_s=warm, source_s=t1 - t0, adapt_s=t2 - t1,
                      final_accuracy=res.final_accuracy)))
"""


def kernel_cases(rng):
    z = rng.normal(size=(32, 5))
    x = rng.normal(size=(32, 16))
    g, b = rng.normal(size=16), rng.normal(size=16)
    _, xhat, _, _, inv = _kernels.numpy_impl.bn_train_forward(x, g, b, 1e-5)
    dy = rng.normal(size=(32, 16))
    w = rng.dirichlet(np.ones(5), size=125)
    f = rng.normal(size=(125, 16))
    c = rng.normal(size=(5, 16))
    valid = np.ones(5, dtype=bool)
    return [
        ("softmax_rows 32x5", "softmax_rows", (z,)),
        ("log_softmax_rows 32x5", "log_softmax_rows", (z,)),
        ("bn_train_forward 32x16", "bn_train_forward", (x, g, b, 1e-5)),
        ("bn_backward 32x16", "bn_backward", (dy, xhat, inv, g)),
        ("weighted_centroids 125x5x16", "weighted_centroids", (w, f)),
        ("cosine_argmin 125x5x16", "cosine_argmin", (f, c, valid)),
    ]


def best_of(fn, args, repeat=5):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def bench_kernels():
    if _kernels.numba_impl is None:
        print("numba is not installed; only the numpy path is available")
        return
    rng = np.random.default_rng(0)
    print("%-30s %12s %12s %8s" % ("kernel", "numpy [us]", "numba [us]", "ratio"))
    for label, name, args in kernel_cases(rng):
        fnp = getattr(_kernels.numpy_impl, name)
        fnb = getattr(_kernels.numba_impl, name)
        fnb(*args)  # compile outside the timed region
        tn, tb = best_of(fnp, args), best_of(fnb, args)
        print("%-30s %12.2f %12.2f %7.2fx" % (label, tn * 1e6, tb * 1e6, tn / tb))


def bench_end_to_end(preset):
    print("\nend-to-end, %s, seed 0, conda" % preset)
    for disable in ("0", "1"):
        env = dict(os.environ, CONTDA_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", E2E_SNIPPET.format(preset=preset)],
                             env=env, capture_output=True, text=True, check=True)
        r = json.loads(out.stdout.strip().splitlines()[-1])
        print("  %-6s warm-up %.2f s  source %.2f s  adapt %.2f s  final accuracy %.4f"
              % (r["backend"], r["warm_s"], r["source_s"], r["adapt_s"], r["final_accuracy"]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--no-e2e", action="store_true", help="skip the end-to-end runs")
    ap.add_argument("--preset", default="blobs-5c")
    args = ap.parse_args(argv)
    bench_kernels()
    if not args.no_e2e:
        bench_end_to_end(args.preset)


if __name__ == "__main__":
    main()
