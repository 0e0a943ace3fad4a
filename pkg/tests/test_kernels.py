"""The compiled kernels and the numpy fallback must agree bit for bit."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from casi_inpaint import _fallback, kernels
from casi_inpaint.metrics import ENTROPY_WIN, entropy_table

try:
    from casi_inpaint import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels is not None:
        assert kernels.BACKEND == "cython"


def test_fallback_forced_by_env(monkeypatch):
    import importlib

    monkeypatch.setenv("CASI_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.im2col is _fallback.im2col
    finally:
        monkeypatch.delenv("CASI_PURE_PYTHON")
        importlib.reload(kernels)


@needs_ext
@given(
    st.integers(1, 2), st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(0, 6), st.integers(0, 6)
)
def test_im2col_col2im_agree(n, c, k, stride, extra_h, extra_w):
    hp, wp = k + stride * extra_h, k + stride * extra_w
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    rng = np.random.default_rng(n * 100 + c * 10 + k)
    xp = np.ascontiguousarray(rng.standard_normal((n, c, hp, wp)))
    a = _fallback.im2col(xp, k, k, stride, oh, ow)
    b = _kernels.im2col(xp, k, k, stride, oh, ow)
    assert np.array_equal(a, np.asarray(b))
    g = np.ascontiguousarray(rng.standard_normal(a.shape))
    assert np.array_equal(_fallback.col2im(g, c, hp, wp, k, k, stride), np.asarray(_kernels.col2im(g, c, hp, wp, k, k, stride)))


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_entropy_map_agrees(seed):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256 if seed % 2 else 4, (20, 17), dtype=np.uint8)
    q = np.ascontiguousarray(np.pad(img, ENTROPY_WIN // 2, mode="reflect"))
    table = entropy_table(ENTROPY_WIN * ENTROPY_WIN)
    a = _fallback.entropy_map(q, 20, 17, ENTROPY_WIN, table)
    b = np.asarray(_kernels.entropy_map(q, 20, 17, ENTROPY_WIN, table))
    assert np.array_equal(a, b)


@needs_ext
@given(st.lists(st.integers(0, 2**64 - 1), min_size=4, max_size=4), st.integers(0, 50))
def test_xoshiro_agrees_and_updates_state_identically(words, count):
    if not any(words):
        words[0] = 1
    s1 = np.array(words, dtype=np.uint64)
    s2 = s1.copy()
    assert np.array_equal(_fallback.xoshiro_fill(s1, count), np.asarray(_kernels.xoshiro_fill(s2, count)))
    assert np.array_equal(s1, s2)
