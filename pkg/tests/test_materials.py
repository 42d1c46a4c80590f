import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heavylayer.geometry import NodalField
from heavylayer.materials import (
    DissipationSpec,
    ElasticLaw,
    LimitParams,
    MaterialError,
    QuintupleParams,
    dissipation_value_grad,
    dw_lame,
    fiber_pairing,
    fiber_tensor,
    fit_recession_bound,
    limit_dissipation,
    recession,
    recession_spec,
)


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def test_dw_lame_examples():
    np.testing.assert_array_equal(dw_lame(np.eye(3), 1.0, 1.0), 5 * np.eye(3))
    assert not dw_lame(np.zeros((3, 3)), 1.0, 1.0).any()


@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0, 10), mu=st.floats(0.01, 10))
def test_lame_energy_bound(seed, lam, mu):
    e = sym(np.random.default_rng(seed).standard_normal((3, 3)))
    assert np.sum(dw_lame(e, lam, mu) * e) >= 2 * mu * np.sum(e * e) * (1 - 1e-12)


def test_fiber_identity_against_dense_contraction():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        q, qp = rng.standard_normal((2, 3))
        lam, mu = rng.random(2) * 5
        dense = np.sum(dw_lame(fiber_tensor(q), lam, mu) * fiber_tensor(qp))
        closed = fiber_pairing(q, qp, lam, mu)
        assert abs(dense - closed) <= 1e-14 * max(1.0, abs(dense))


def test_elastic_law_spot_check():
    assert ElasticLaw(1.0, 0.5, 2.0, 1.0).spot_check(3, np.random.default_rng(1))
    with pytest.raises(MaterialError):
        ElasticLaw(0.0, 0.0).validate(2)


def test_quadratic_dissipation_example():
    e = sym(np.random.default_rng(2).standard_normal((2, 2)))
    val, grad = dissipation_value_grad(DissipationSpec(p=2, c_D=1, eta=0), e)
    assert val == pytest.approx(0.5 * np.sum(e * e), rel=1e-14)
    np.testing.assert_allclose(grad, e, rtol=1e-14)


@pytest.mark.parametrize("p", [1.0, 1.3, 2.0])
def test_dissipation_zero_at_origin(p):
    val, grad = dissipation_value_grad(DissipationSpec(p=p, eta=1e-3), np.zeros((2, 2)))
    assert val == 0 and not grad.any()


def test_p1_regularization_error():
    e = np.diag([1.0, 0.0])
    val, _ = dissipation_value_grad(DissipationSpec(p=1, c_D=1, eta=1e-6), e)
    assert abs(val - 1.0) <= 2e-6


def test_dissipation_gradient_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(100):
        p = rng.uniform(1, 2)
        eta = 10 ** rng.uniform(-4, 0)
        spec = DissipationSpec(p=p, c_D=rng.uniform(0.5, 2), eta=eta)
        e = sym(rng.standard_normal((2, 2)))
        _, grad = dissipation_value_grad(spec, e)
        fd = np.zeros((2, 2))
        h = 1e-6
        for i in range(2):
            for j in range(2):
                de = np.zeros((2, 2))
                de[i, j] = h
                fd[i, j] = (dissipation_value_grad(spec, e + de)[0] - dissipation_value_grad(spec, e - de)[0]) / (2 * h)
        assert np.linalg.norm(fd - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))


@given(seed=st.integers(0, 2**32 - 1), p=st.floats(1.0, 2.0), c=st.floats(0.1, 5))
def test_recession_of_power_law_is_exact(seed, p, c):
    spec = DissipationSpec(p=p, c_D=c)
    e = sym(np.random.default_rng(seed).standard_normal((2, 2)))
    assert recession(spec, e) == spec.value(e)


def test_recession_table_examples():
    unit = np.diag([1.0, 0.0])
    assert recession(DissipationSpec(p=2, terms=((1, 2), (1, 1))), unit) == pytest.approx(1.0, abs=1e-6)
    assert recession(DissipationSpec(p=1, terms=((1, 1), (1, 0.5))), unit) == pytest.approx(1.0, abs=1e-6)


def test_recession_of_superlinear_profile_is_infinite():
    spec = DissipationSpec(p=1, terms=((1, 2),))
    assert math.isinf(recession(spec, np.diag([1.0, 0.0])))
    with pytest.raises(MaterialError):
        recession_spec(spec)


def test_recession_overflow_signalled():
    spec = DissipationSpec(p=1, terms=((1, 300),))
    with pytest.raises(OverflowError):
        recession(spec, np.diag([1.0, 0.0]))


@pytest.mark.parametrize(
    "spec",
    [DissipationSpec(p=1.5), DissipationSpec(p=2, terms=((1, 2), (1, 1))), DissipationSpec(p=1, terms=((1, 1), (1, 0.5)))],
)
def test_recession_bound_fit(spec):
    fit = fit_recession_bound(spec)
    assert fit.holds and fit.theta < spec.p


def test_solver_profiles_must_be_convex():
    with pytest.raises(MaterialError):
        DissipationSpec(p=1, terms=((1, 0.5),)).validate()


def test_limit_params_rules():
    LimitParams(0.0, 1.0, 1.0, 1.0).validate()
    with pytest.raises(MaterialError):
        LimitParams(1.0, 0.0, 1.0, 1.0).validate()
    with pytest.raises(MaterialError):
        QuintupleParams(0.1, 1.0, -1.0, 1.0, 1.0).validate()


def test_limit_dissipation_examples(tiny_meshes):
    m = tiny_meshes
    q = np.random.default_rng(4).standard_normal((m.ref_layer.n_cells, 4, 2))
    spec = DissipationSpec()
    assert limit_dissipation(LimitParams(1, 1, 0.0, 1), spec, q).value == 0.0
    frozen = limit_dissipation(LimitParams(1, 1, math.inf, 1), spec, np.zeros_like(q))
    assert frozen.feasible and frozen.value == 0.0
    assert not limit_dissipation(LimitParams(1, 1, math.inf, 1), spec, q).feasible
    # constant normal derivative q = (a, b): |q (x)_S e_d|^2 = a^2/2 + b^2
    a, b = 0.7, -0.4
    s = m.ref_layer.node_coords[:, -1]
    field = NodalField("ref_layer", np.stack([a * s, b * s], 1))
    area = 1.0 * 2.0
    want = 2 * 0.5 * (0.5 * a * a + b * b) * area
    got = limit_dissipation(LimitParams(1, 1, 2.0, 1), spec, field, m).value
    assert got == pytest.approx(want, rel=1e-13)
