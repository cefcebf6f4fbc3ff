import os
import subprocess
import sys

import numpy as np
import pytest

from pdloss import kernels
from pdloss.kernels import compiled_backend, python_backend

needs_ext = pytest.mark.skipif(compiled_backend is None, reason="compiled kernels not built")


def _inputs(rng, n=37, C=5):
    Z = rng.standard_normal((n, 4))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    Z[5] = Z[3]  # force an exact distance tie
    return Z @ Z.T, rng.integers(0, C, n)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


@needs_ext
@pytest.mark.parametrize("n", [1, 2, 3, 37, 200])
def test_backends_agree_bitwise(rng, n):
    S, y = _inputs(rng, max(n, 6))
    S, y = S[:n, :n], y[:n]
    assert _same(compiled_backend.pair_indices(y), python_backend.pair_indices(y))
    assert _same(compiled_backend.pair_partition(S, y), python_backend.pair_partition(S, y))
    assert _same(compiled_backend.first_hit_ranks(1 - S, y), python_backend.first_hit_ranks(1 - S, y))
    assert _same(compiled_backend.triplet_indices(y), python_backend.triplet_indices(y))


@needs_ext
def test_histogram_agree(rng):
    x = np.concatenate([rng.uniform(-1, 3, 5000), np.linspace(0, 2, 51)])
    edges = np.linspace(0, 2, 51)
    assert _same(compiled_backend.histogram_counts(x, edges), python_backend.histogram_counts(x, edges))


@pytest.mark.parametrize("backend", [python_backend, compiled_backend], ids=["python", "compiled"])
def test_pair_indices_lexicographic(backend):
    if backend is None:
        pytest.skip("compiled kernels not built")
    g, i = backend.pair_indices(np.array([0, 1, 0, 1]))
    assert g.tolist() == [0 * 4 + 2, 1 * 4 + 3]
    assert i.tolist() == [1, 3, 4 * 1 + 2, 2 * 4 + 3]


@pytest.mark.parametrize("backend", [python_backend, compiled_backend], ids=["python", "compiled"])
def test_first_hit_tie_break(backend):
    if backend is None:
        pytest.skip("compiled kernels not built")
    D = np.zeros((4, 4))
    # all distances tie: the first other index decides
    assert backend.first_hit_ranks(D, np.array([0, 1, 0, 2])).tolist() == [1, -1, 0, -1]


@pytest.mark.parametrize("backend", [python_backend, compiled_backend], ids=["python", "compiled"])
def test_triplet_indices_count(backend, rng):
    if backend is None:
        pytest.skip("compiled kernels not built")
    y = rng.integers(0, 3, 10)
    ap, an = backend.triplet_indices(y)
    counts = np.bincount(y, minlength=3)
    assert ap.size == sum(c * (c - 1) * (10 - c) for c in counts)


def _backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("PDLOSS_PURE_PYTHON", None)
    if env_value is not None:
        env["PDLOSS_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from pdloss import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_var_forces_fallback():
    assert _backend_in_subprocess("1") == "python"


@needs_ext
def test_compiled_selected_by_default():
    assert _backend_in_subprocess(None) == "compiled"
    assert _backend_in_subprocess("0") == "compiled"


def test_active_backend_exported():
    assert kernels.BACKEND in ("compiled", "python")
