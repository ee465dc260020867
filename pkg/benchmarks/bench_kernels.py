"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Also times one desk-config training step with each backend, in a subprocess
per backend so the import-time selection is honoured.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from layoutmrc.kernels import _pykernels

try:
    from layoutmrc.kernels import _ckernels
except ImportError:
    _ckernels = None

STEP_SCRIPT = """
import timeit
import numpy as np
from layoutmrc import kernels
from layoutmrc.model import ModelConfig, init_params
from layoutmrc.serializer import build_vocabulary
from layoutmrc.synthetic import synthetic_corpus
from layoutmrc.trainer import build_examples, loss_and_grads, make_batch

corpus = synthetic_corpus(4, seed=0)
vocab = build_vocabulary(corpus)
cfg = ModelConfig()
params = init_params(cfg, len(vocab), seed=0)
batch = make_batch(build_examples(corpus, vocab, cfg.L_max), cfg.D_app, vocab.pad_id)
t = min(timeit.repeat(lambda: loss_and_grads(params, cfg, batch), number=1, repeat={repeat}))
print(kernels.BACKEND, t)
"""


def best(fn, repeat, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def bench_layer_norm(impl, rows, cols, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, cols))
    g, b, dy = rng.normal(size=cols), rng.normal(size=cols), rng.normal(size=(rows, cols))
    _, xhat, rstd = impl.layer_norm_forward(x, g, b, 1e-5)
    xhat, rstd = np.asarray(xhat), np.asarray(rstd)
    fwd = best(lambda: impl.layer_norm_forward(x, g, b, 1e-5), repeat, 50)
    bwd = best(lambda: impl.layer_norm_backward(dy, xhat, rstd, g), repeat, 50)
    return fwd, bwd


def bench_lcs(impl, length, repeat):
    rng = np.random.default_rng(1)
    a = rng.integers(0, 20, length).tolist()
    b = rng.integers(0, 20, length).tolist()
    return best(lambda: impl.lcs_length(a, b), repeat, 20)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; only the fallback can be timed")
    impls = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])

    print(f"{'kernel':<28} " + " ".join(f"{name:>12}" for name, _ in impls) + "  speedup")
    for rows, cols in ((64, 128), (512, 128), (4096, 128)):
        res = [bench_layer_norm(impl, rows, cols, args.repeat) for _, impl in impls]
        for k, label in enumerate(("fwd", "bwd")):
            times = [r[k] for r in res]
            row = f"layer_norm {label} {rows}x{cols}"
            speed = f"{times[0] / times[1]:7.2f}x" if len(times) == 2 else ""
            print(f"{row:<28} " + " ".join(f"{t * 1e6:10.1f}us" for t in times) + f"  {speed}")
    for length in (10, 40, 200):
        times = [bench_lcs(impl, length, args.repeat) for _, impl in impls]
        speed = f"{times[0] / times[1]:7.2f}x" if len(times) == 2 else ""
        print(f"{'lcs ' + str(length) + 'x' + str(length):<28} "
              + " ".join(f"{t * 1e6:10.1f}us" for t in times) + f"  {speed}")

    print("\ndesk-config training step (4 examples, forward + backward):")
    for forced in ("1", "0"):
        env = dict(os.environ, LAYOUTMRC_PURE_PYTHON=forced)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT.format(repeat=args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        backend, seconds = out.stdout.split()
        print(f"  {backend:<8} {float(seconds) * 1e3:8.1f} ms")


if __name__ == "__main__":
    main()
