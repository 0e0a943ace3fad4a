"""Time the compiled kernels against the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row checks that both backends agree bit for bit before timing them.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from casi_inpaint import _fallback
from casi_inpaint.metrics import ENTROPY_WIN, entropy_table

try:
    from casi_inpaint import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cases():
    rng = np.random.default_rng(0)
    # conv layer of the generator's first block at 32x32, batch 8
    xp = np.ascontiguousarray(rng.standard_normal((8, 16, 34, 34)))
    kh = kw = 4
    stride, oh, ow = 2, 16, 16
    cols = _fallback.im2col(xp, kh, kw, stride, oh, ow)
    g = np.ascontiguousarray(rng.standard_normal(cols.shape))
    # one local-entropy map of a 128x128 image
    img = rng.integers(0, 256, (128, 128), dtype=np.uint8)
    q = np.ascontiguousarray(np.pad(img, ENTROPY_WIN // 2, mode="reflect"))
    table = entropy_table(ENTROPY_WIN * ENTROPY_WIN)
    state = np.array([1, 2, 3, 4], dtype=np.uint64)
    return [
        ("im2col 8x16x34x34 k4 s2", lambda m: m.im2col(xp, kh, kw, stride, oh, ow)),
        ("col2im 8x16x34x34 k4 s2", lambda m: m.col2im(g, 16, 34, 34, kh, kw, stride)),
        ("entropy_map 128x128 win9", lambda m: m.entropy_map(q, 128, 128, ENTROPY_WIN, table)),
        ("xoshiro 100k draws", lambda m: m.xoshiro_fill(state.copy(), 100_000)),
    ]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return
    print(f"{'kernel':<26} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in _cases():
        a, b = fn(_fallback), fn(_kernels)
        if not np.array_equal(np.asarray(a), np.asarray(b)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
