import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgbench import kernels
from bgbench._backend import HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@needs_numba
@given(st.integers(0, 2**64 - 1), st.integers(1, 50), st.integers(0, 4))
def test_hash_parity(seed, n, k):
    keys = np.random.default_rng(n * 5 + k).integers(0, 2**63, size=(n, k), dtype=np.uint64)
    fast, slow = kernels.KERNELS["hash_keys"]
    np.testing.assert_array_equal(fast(seed, keys), slow(seed, keys))


@needs_numba
def test_composite_parity(rng):
    fast, slow = kernels.KERNELS["composite"]
    img, bg = rng.random((3, 5, 6, 3)), rng.random((3, 5, 6, 3))
    for mask in (rng.random((3, 5, 6)), (rng.random((3, 5, 6)) > 0.5).astype(float)):
        np.testing.assert_array_equal(fast(img, mask, bg), slow(img, mask, bg))
        np.testing.assert_array_equal(fast(img[0], mask[0], bg[0]), slow(img[0], mask[0], bg[0]))


@needs_numba
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 30), st.integers(1, 30))
def test_resize_parity(h, w, oh, ow):
    src = np.random.default_rng(h * 31 + w).random((h, w, 3))
    fast, slow = kernels.KERNELS["resize_bilinear"]
    np.testing.assert_allclose(fast(src, oh, ow), slow(src, oh, ow), rtol=0, atol=1e-15)


@needs_numba
@pytest.mark.parametrize("exclude_self", [True, False])
def test_retrieval_parity(rng, exclude_self):
    v = rng.standard_normal((40, 4))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[5] = v[3]  # an exact tie
    labels = rng.integers(0, 4, 40)
    dist = 2.0 - 2.0 * v @ v.T
    fast, slow = kernels.KERNELS["retrieval_stats"]
    for a, b in zip(fast(dist, labels, labels, exclude_self), slow(dist, labels, labels, exclude_self)):
        np.testing.assert_array_equal(a, b)


@needs_numba
def test_occlusion_accumulate_parity(rng):
    tops = np.repeat(np.array([0, 2, 4]), 3)
    lefts = np.tile(np.array([0, 2, 4]), 3)
    scores = rng.random(9)
    fast, slow = kernels.KERNELS["occlusion_accumulate"]
    for a, b in zip(fast(scores, tops, lefts, 4, 8, 8), slow(scores, tops, lefts, 4, 8, 8)):
        np.testing.assert_allclose(a, b, rtol=1e-15, atol=0)


def _backend_in_subprocess(value):
    env = dict(os.environ, BGBENCH_BACKEND=value)
    code = "from bgbench import kernels, _backend; print(_backend.BACKEND, kernels.composite.__name__)"
    return subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)


def test_env_flag_selects_numpy():
    out = _backend_in_subprocess("numpy")
    assert out.returncode == 0
    assert out.stdout.split() == ["numpy", "_composite_numpy"]


@needs_numba
def test_env_flag_selects_numba():
    assert _backend_in_subprocess("numba").stdout.split() == ["numba", "_composite_numba"]


def test_env_flag_rejects_unknown():
    out = _backend_in_subprocess("cuda")
    assert out.returncode != 0 and "BGBENCH_BACKEND" in out.stderr
