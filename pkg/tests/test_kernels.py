import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priokit import _kernels_py, kernels

from conftest import random_stack

compiled = pytest.importorskip("priokit._kernels") if kernels.BACKEND == "cython" else None
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


@needs_ext
@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gram_schmidt_backends_agree(seed):
    rng = np.random.default_rng(seed)
    J, _ = random_stack(rng)
    thr = 1e-10 * np.linalg.norm(J)
    a = compiled.prioritized_gram_schmidt(J, thr)
    b = _kernels_py.prioritized_gram_schmidt(J, thr)
    assert np.array_equal(np.asarray(a[2]), np.asarray(b[2]))
    assert np.allclose(a[0], b[0], atol=1e-13)
    assert np.allclose(a[1], b[1], atol=1e-13)


@needs_ext
def test_unipotent_solve_backends_agree(rng):
    blocks = [0, 2, 3, 5]
    T = np.tril(rng.standard_normal((5, 5)), -1)
    T[0:2, 0:2] = T[2:3, 2:3] = T[3:5, 3:5] = 0.0
    for rhs in (rng.standard_normal(5), rng.standard_normal((5, 3))):
        a = compiled.unipotent_block_solve(T, blocks, rhs)
        b = _kernels_py.unipotent_block_solve(T, blocks, rhs)
        assert a.shape == rhs.shape
        assert np.allclose(a, b, atol=1e-13)
        assert np.allclose((np.eye(5) + T) @ b, rhs, atol=1e-12)


@needs_ext
@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_canonical_stage_backends_agree(seed):
    rng = np.random.default_rng(seed)
    J, dims = random_stack(rng)
    d = rng.standard_normal(J.shape[0])
    uf = rng.standard_normal(J.shape[1])
    ov = np.array([[np.nan, 0.0, 0.1, np.inf][rng.integers(4)] for _ in dims])
    args = (J, dims, d, uf, 0.1, 0.05, ov, 1e-10, 1e-14)
    a = compiled.canonical_stage(*args)
    b = _kernels_py.canonical_stage(*args)
    scale = 1 + np.linalg.norm(J) * np.abs(b[1]).max() + np.abs(d).max()
    for x, y in zip(a[:3], b[:3]):
        assert np.abs(x - y).max() <= 1e-12 * scale
    assert np.array_equal(a[3], b[3])
    assert np.allclose(a[4], b[4], atol=1e-14)


def test_canonical_stage_ramp_near_singularity():
    J = np.array([[1.0, 0.0], [0.0, 0.02]])
    for mod in filter(None, (compiled, _kernels_py)):
        _, parts, res, ranks, lam = mod.canonical_stage(
            J, [1, 1], np.ones(2), np.zeros(2), 0.1, 0.05, np.full(2, np.nan), 1e-10, 1e-14)
        assert list(ranks) == [1, 1]
        assert lam[0] == 0.0
        assert lam[1] == pytest.approx(0.1 * np.sqrt(1 - 0.4 ** 2))
        assert res[0] == 0.0


def test_pure_python_selected_by_env():
    env = dict(os.environ, PRIOKIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import priokit.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
