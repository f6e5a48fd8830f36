"""Time each hot kernel under the numba and numpy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--size small|large]

Both implementations are called directly, so the ``BGBENCH_BACKEND`` flag
does not matter here. The first numba call (compilation) is excluded.
"""

import argparse
import timeit

import numpy as np

from bgbench import kernels
from bgbench._backend import HAVE_NUMBA


def _unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_inputs(size, rng):
    big = size == "large"
    n_img, hw = (256, 64) if big else (64, 32)
    n_emb = 2000 if big else 400
    emb = _unit(rng, n_emb, 32)
    dist = np.maximum(2.0 - 2.0 * emb @ emb.T, 0.0)
    labels = rng.integers(0, 20, n_emb)
    tops = np.repeat(np.arange(0, hw - 3, 2), len(range(0, hw - 3, 2)))
    lefts = np.tile(np.arange(0, hw - 3, 2), len(range(0, hw - 3, 2)))
    return {
        "hash_keys": (np.uint64(12345), rng.integers(0, 2**40, size=(100_000, 3)).astype(np.uint64)),
        "composite": (
            rng.random((n_img, hw, hw, 3)),
            (rng.random((n_img, hw, hw)) > 0.5).astype(np.float64),
            rng.random((n_img, hw, hw, 3)),
        ),
        "resize_bilinear": (rng.random((3 * hw, 2 * hw, 3)), hw, hw),
        "retrieval_stats": (dist, labels, labels, True),
        "occlusion_accumulate": (rng.random(len(tops)), tops, lefts, 4, hw, hw),
    }


def bench(repeat=5, size="small", seed=0):
    rng = np.random.default_rng(seed)
    inputs = make_inputs(size, rng)
    rows = []
    for name, (fast, slow) in kernels.KERNELS.items():
        args = inputs[name]
        timings = {}
        for label, fn in (("numba", fast), ("numpy", slow)):
            if label == "numba" and not HAVE_NUMBA:
                continue
            fn(*args)  # warm-up / compile
            timer = timeit.Timer(lambda fn=fn: fn(*args))
            number, _ = timer.autorange()
            timings[label] = min(timer.repeat(repeat, number)) / number
        rows.append((name, timings))
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size", choices=("small", "large"), default="small")
    args = parser.parse_args(argv)
    rows = bench(args.repeat, args.size)
    print(f"{'kernel':24s} {'numba (ms)':>12s} {'numpy (ms)':>12s} {'speedup':>8s}")
    for name, t in rows:
        nb = t.get("numba")
        nb_text = f"{1e3 * nb:12.3f}" if nb is not None else f"{'n/a':>12s}"
        speed = f"{t['numpy'] / nb:7.1f}x" if nb else f"{'':>8s}"
        print(f"{name:24s} {nb_text} {1e3 * t['numpy']:12.3f} {speed}")


if __name__ == "__main__":
    main()
