import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heavylayer import _kernels


def _random_inputs(rng, ncell=3, d=2):
    nq, nloc = 2**d, 2**d
    g1 = rng.standard_normal((ncell, nq, nloc, d))
    g2 = rng.standard_normal((ncell, nq, nloc, d))
    w = rng.random((ncell, nq))
    return g1, g2, w


@given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 3]))
def test_elastic_backends_agree(seed, d):
    rng = np.random.default_rng(seed)
    g1, g2, w = _random_inputs(rng, d=d)
    lam, mu = rng.random(3), rng.random(3)
    a = _kernels.NUMPY_IMPL["elastic"](g1, g2, w, lam, mu)
    b = _kernels.JIT_IMPL["elastic"](g1, g2, w, lam, mu)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13 * np.abs(a).max())


@given(seed=st.integers(0, 2**32 - 1), d=st.sampled_from([2, 3]))
def test_mass_backends_agree(seed, d):
    rng = np.random.default_rng(seed)
    shape = rng.random((2**d, 2**d))
    w = rng.random((4, 2**d))
    rho = rng.random(4)
    a = _kernels.NUMPY_IMPL["mass"](shape, w, rho, d)
    b = _kernels.JIT_IMPL["mass"](shape, w, rho, d)
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


@given(
    seed=st.integers(0, 2**32 - 1),
    p=st.floats(1.0, 2.0),
    eta=st.sampled_from([0.0, 1e-6, 1e-2]),
)
def test_dissipation_backends_agree(seed, p, eta):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((6, 2, 2))
    e = 0.5 * (e + np.swapaxes(e, 1, 2))
    e[0] = 0.0
    coefs, expos = np.array([1.0 / p]), np.array([p])
    a = _kernels.NUMPY_IMPL["dissipation"](e, coefs, expos, eta)
    b = _kernels.JIT_IMPL["dissipation"](e, coefs, expos, eta)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_elastic_element_is_symmetric_for_equal_operators():
    rng = np.random.default_rng(3)
    g1, _, w = _random_inputs(rng)
    ke = _kernels.elastic_elements(g1, g1, w, np.ones(3), np.ones(3))
    np.testing.assert_allclose(ke, np.swapaxes(ke, 1, 2), atol=1e-14)


def test_dissipation_origin_is_finite_for_quadratic():
    e = np.zeros((1, 2, 2))
    val, grad, hess = _kernels.dissipation(e, np.array([0.5]), np.array([2.0]), 0.0)
    assert val[0] == 0.0 and not grad.any()
    np.testing.assert_allclose(hess[0], np.eye(4))


def test_backend_flag_is_reported():
    assert _kernels.BACKEND in ("numba", "numpy")


@pytest.mark.parametrize("flag, want", [("0", "numpy"), ("1", "numba" if _kernels._HAVE_NUMBA else "numpy")])
def test_env_flag_selects_backend(flag, want):
    env = dict(os.environ, HEAVYLAYER_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "from heavylayer import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == want
