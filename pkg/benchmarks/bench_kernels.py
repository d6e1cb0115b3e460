"""Time the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Reports per-call kernel times at a few shapes, then one training epoch of the
toy model under each backend. Numba compile time is excluded (one warm-up call).
"""

import argparse
import time
import timeit

import numpy as np

from magfuse import _kernels
from magfuse import data as D
from magfuse import train as TR
from magfuse.model import MagFuseModel, ModelConfig

SHAPES = [(64, 16), (512, 16), (4096, 64)]


def kernel_args(name, shape, rng):
    x = rng.normal(size=shape)
    if name == "softmax_rows":
        mask = rng.random(shape) < 0.8
        mask[:, 0] = True
        return (x, mask)
    if name == "softmax_rows_bwd":
        y = _kernels.softmax_rows_np(x, None)
        return (y, rng.normal(size=shape))
    gain, bias = rng.normal(size=shape[1]), rng.normal(size=shape[1])
    if name == "layer_norm":
        return (x, gain, bias, 1e-5)
    _, xhat, rstd = _kernels.layer_norm_np(x, gain, bias, 1e-5)
    return (rng.normal(size=shape), xhat, rstd, gain)


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    tables = {"numpy": _kernels.select(False)}
    if _kernels.HAVE_NUMBA:
        tables["numba"] = _kernels.select(True)
    print(f"{'kernel':<18}{'shape':>12}" + "".join(f"{b + ' us':>14}" for b in tables))
    for name in tables["numpy"]:
        for shape in SHAPES:
            args = kernel_args(name, shape, rng)
            row = f"{name:<18}{str(shape):>12}"
            for table in tables.values():
                fn = table[name]
                fn(*args)  # warm-up / JIT compile
                n = max(1, repeat)
                t = min(timeit.repeat(lambda: fn(*args), number=n, repeat=3)) / n
                row += f"{t * 1e6:>14.1f}"
            print(row)


def bench_epoch():
    corpus = D.generate_synthetic(128, 0, D.GenConfig(sigma=0.1))
    train_c, val_c, _ = D.split(corpus, D.SplitSpec(0.8, 0.1, 0.1))
    backends = [False, True] if _kernels.HAVE_NUMBA else [False]
    for use_numba in backends:
        saved = _kernels.KERNELS
        _kernels.KERNELS = _kernels.select(use_numba)
        try:
            cfg = ModelConfig()
            cfg.encoder.vocab_size = len(train_c.vocab)
            model = MagFuseModel(cfg, train_c.vocab)
            tc = TR.TrainConfig(epochs=1, learning_rate=1e-3, batch_size=16)
            TR.train(model, train_c, val_c, tc)  # warm-up
            t0 = time.perf_counter()
            TR.train(model, train_c, val_c, TR.TrainConfig(epochs=3, learning_rate=1e-3, batch_size=16))
            dt = (time.perf_counter() - t0) / 3
        finally:
            _kernels.KERNELS = saved
        label = "numba" if use_numba else "numpy"
        print(f"train epoch ({len(train_c)} instances, {label}): {dt * 1e3:.0f} ms")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    args = p.parse_args()
    print(f"default backend: {_kernels.BACKEND}")
    bench_kernels(args.repeat)
    bench_epoch()


if __name__ == "__main__":
    main()
