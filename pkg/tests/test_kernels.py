"""The compiled and numpy pair kernels against each other and a plain loop."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laplace_metric import _kernels_py, kernels
from laplace_metric.contrastive import pair_hessian_output, per_pair_loss

BACKENDS = kernels.available_backends()


def random_problem(seed, n=7, d=3, P=5, n_pairs=20):
    rng = np.random.default_rng(seed)
    E = rng.normal(size=(n, d))
    J = rng.normal(size=(n, d, P))
    I = rng.integers(0, n, size=n_pairs)
    Jx = rng.integers(0, n, size=n_pairs)
    w = rng.normal(size=n_pairs)
    w[::4] = 0.0
    return E, J, I, Jx, w


def loop_reference(E, J, I, Jx, w, arccos, cross):
    split = "arccos" if arccos else "euclidean"
    Z = E if arccos else E / np.linalg.norm(E, axis=1, keepdims=True)
    d = E.shape[1]
    loss = 0.0
    G = np.zeros_like(E)
    diag = np.zeros(J.shape[2])
    for i, j, wk in zip(I, Jx, w):
        loss += per_pair_loss(wk, Z[i], Z[j], split)
        H = pair_hessian_output(wk, Z[i], Z[j], split)
        if not cross:
            H[:d, d:] = 0
            H[d:, :d] = 0
        Js = np.concatenate([J[i], J[j]])
        diag += np.diag(Js.T @ H @ Js)
        if arccos:
            ri, rj = np.linalg.norm(Z[i]), np.linalg.norm(Z[j])
            a, b = Z[i] / ri, Z[j] / rj
            c = a @ b
            G[i] -= wk * (b - c * a) / ri
            G[j] -= wk * (a - c * b) / rj
        else:
            G[i] += wk * (Z[i] - Z[j])
            G[j] -= wk * (Z[i] - Z[j])
    return Z, loss, G, diag


@pytest.mark.parametrize("backend", sorted(BACKENDS))
@pytest.mark.parametrize("arccos", [False, True])
@pytest.mark.parametrize("cross", [False, True])
def test_kernels_match_loop(backend, arccos, cross):
    mod = BACKENDS[backend]
    E, J, I, Jx, w = random_problem(3)
    Z, loss, G, diag = loop_reference(E, J, I, Jx, w, arccos, cross)
    assert mod.pair_loss(Z, I, Jx, w, arccos) == pytest.approx(loss, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(mod.pair_output_grad(Z, I, Jx, w, arccos), G, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(mod.pair_ggn_diag(Z, J, I, Jx, w, arccos, cross), diag, rtol=1e-10, atol=1e-11)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), arccos=st.booleans(), cross=st.booleans(),
       n_pairs=st.integers(0, 60))
def test_backend_parity(seed, arccos, cross, n_pairs):
    c, p = BACKENDS["cython"], _kernels_py
    E, J, I, Jx, w = random_problem(seed, n_pairs=n_pairs)
    assert c.pair_loss(E, I, Jx, w, arccos) == pytest.approx(p.pair_loss(E, I, Jx, w, arccos), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(c.pair_output_grad(E, I, Jx, w, arccos), p.pair_output_grad(E, I, Jx, w, arccos),
                               rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(c.pair_ggn_diag(E, J, I, Jx, w, arccos, cross),
                               p.pair_ggn_diag(E, J, I, Jx, w, arccos, cross), rtol=1e-10, atol=1e-11)


def test_backend_selection_reported():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in BACKENDS


def test_pure_python_backend_forced_by_environment():
    code = "from laplace_metric import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "LAPLACE_METRIC_PURE_PYTHON": "1"}
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert res.stdout.strip() == "python"
