"""Compare the compiled kernels with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --e2e      # plus a short training run per backend

Each row reports the best-of-``--repeat`` time per call and the speedup of
the compiled backend. Outputs of both backends are checked for agreement
before timing.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from privkt import kernels

E2E_SNIPPET = """
import time
from privkt.config import defaults
from privkt.cli import load_datasets, fit_teacher, train_config
from privkt.trainer import run
from privkt.kernels import BACKEND
cfg = defaults()
cfg["train"]["epochs"] = {epochs}
priv, pub, test = load_datasets(cfg)
t0 = time.perf_counter()
teacher = fit_teacher(cfg, priv)
r = run(train_config(cfg), teacher, pub, test)
print(BACKEND, time.perf_counter() - t0, r.metrics[-1].acc_student)
"""


def cases(rng):
    out = []
    for b, din, dout in ((50, 8, 32), (50, 32, 3), (256, 784, 128)):
        x, w, bias = rng.normal(size=(b, din)), rng.normal(size=(din, dout)), rng.normal(size=dout)
        gout = rng.normal(size=(b, dout))
        y = kernels.get_backend("python").dense_forward(x, w, bias, kernels.ACT_RELU)
        out.append((f"dense_forward {b}x{din}->{dout}", "dense_forward", (x, w, bias, kernels.ACT_RELU)))
        out.append((f"dense_backward {b}x{din}->{dout}", "dense_backward",
                    (x, w, y, gout, kernels.ACT_RELU)))
    for shape in ((50, 3), (1000, 10)):
        out.append((f"softmax_rows {shape[0]}x{shape[1]}", "softmax_rows", (rng.normal(size=shape),)))
        out.append((f"clip_rows {shape[0]}x{shape[1]}", "clip_rows", (rng.normal(size=shape), 1.0)))
    for alpha in (8, 128):
        out.append((f"log_a_int alpha={alpha}", "log_a_int", (0.005, 1.1, alpha)))
    return out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12)


def bench(repeat: int, number: int) -> None:
    py = kernels.get_backend("python")
    cc = kernels.get_backend("compiled") if kernels.compiled_available() else None
    if cc is None:
        print("compiled kernels are not built; timing the numpy fallback only")
    print(f"{'kernel':<34} {'python (us)':>12} {'compiled (us)':>14} {'speedup':>8}")
    for label, fn, args in cases(np.random.default_rng(0)):
        t_py = min(timeit.repeat(lambda: getattr(py, fn)(*args), repeat=repeat, number=number)) / number
        if cc is None:
            print(f"{label:<34} {t_py * 1e6:>12.2f}")
            continue
        if not _same(getattr(py, fn)(*args), getattr(cc, fn)(*args)):
            raise SystemExit(f"backends disagree on {label}")
        t_cc = min(timeit.repeat(lambda: getattr(cc, fn)(*args), repeat=repeat, number=number)) / number
        print(f"{label:<34} {t_py * 1e6:>12.2f} {t_cc * 1e6:>14.2f} {t_py / t_cc:>7.2f}x")


def e2e(epochs: int) -> None:
    print(f"\nend to end: pretrain + {epochs}-epoch joint run on the default toy task")
    for pure in ("1", "0"):
        env = dict(os.environ, PRIVKT_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", E2E_SNIPPET.format(epochs=epochs)],
                             env=env, capture_output=True, text=True, check=True)
        backend, secs, acc = res.stdout.split()
        print(f"  {backend:<9} {float(secs):7.2f} s   student accuracy {float(acc):.4f}")


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--number", type=int, default=200)
    p.add_argument("--e2e", action="store_true", help="also time a short training run per backend")
    p.add_argument("--epochs", type=int, default=10)
    args = p.parse_args(argv)
    bench(args.repeat, args.number)
    if args.e2e:
        e2e(args.epochs)


if __name__ == "__main__":
    main()
