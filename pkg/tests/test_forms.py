import numpy as np
import pytest
from hypothesis import given, strategies as st

from heavylayer.forms import (
    BodyForce,
    LoadError,
    LoadProfile,
    TractionLoad,
    assemble_thin_forms,
    cells_of_kind,
    lame_matrix,
    load_vector,
    traction_vector,
)
from heavylayer.geometry import BoundaryPatch, MeshError, TensorGrid, build_domain, strain_scale
from heavylayer.materials import QuintupleParams

from conftest import tiny_config
from oracles import limit_dense_forms, thin_dense_forms, top_traction


def test_thin_forms_match_dense_oracle(thin_model, tiny_meshes, thin_q):
    phi, k, _ = thin_dense_forms(tiny_meshes, thin_q)
    np.testing.assert_allclose(thin_model.forms.phi.toarray(), phi, atol=1e-13)
    np.testing.assert_allclose(thin_model.forms.k.toarray(), k, atol=1e-15)


def test_limit_forms_match_dense_oracle(limit_model, tiny_meshes, limit_lp):
    phi, k, _ = limit_dense_forms(tiny_meshes, limit_lp)
    np.testing.assert_allclose(limit_model.forms.phi.toarray(), phi, atol=1e-13)
    np.testing.assert_allclose(limit_model.forms.k.toarray(), k, atol=1e-15)


@pytest.mark.parametrize("which", ["thin_model", "limit_model", "frozen_model"])
def test_forms_exactly_symmetric(which, request):
    f = request.getfixturevalue(which).forms
    for mat in (f.phi, f.k):
        assert abs(mat - mat.T).max() == 0.0


@pytest.mark.parametrize("which", ["thin_model", "limit_model"])
def test_coercivity_on_free_dofs(which, request):
    f = request.getfixturevalue(which).forms
    free = f.free
    phi = f.phi.toarray()[np.ix_(free, free)]
    k = f.k.toarray()
    assert np.linalg.eigvalsh(phi).min() > 0
    assert np.linalg.eigvalsh(k).min() > 0
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.standard_normal(f.n_dofs)
        v[f.dirichlet] = 0
        assert v @ f.phi @ v >= 0 and v @ f.k @ v > 0


def test_constant_mass_thin(thin_model, thin_q):
    c = np.array([0.3, -1.2])
    v = np.tile(c, thin_model.forms.grid.n_nodes)
    # |Omega| = 2; bulk density 1 outside the layer, rho_n inside
    want = c @ c * ((2 - 2 * thin_q.eps) + thin_q.rho * 2 * thin_q.eps)
    assert v @ thin_model.forms.k @ v == pytest.approx(want, rel=1e-13)


def test_constant_mass_limit(limit_model, limit_lp):
    c = np.array([0.3, -1.2])
    v = np.tile(c, limit_model.forms.grid.n_nodes)
    want = c @ c * (2.0 + limit_lp.rho_bar * 2.0)
    assert v @ limit_model.forms.k @ v == pytest.approx(want, rel=1e-13)


def test_single_cell_patch():
    grid = TensorGrid("cell", (np.array([0.0, 1.0]), np.array([0.0, 1.0])))
    phi = lame_matrix(grid, np.arange(1), 0.0, 0.5)
    u = np.zeros((4, 2))
    u[:, 0] = grid.node_coords[:, 0]
    u = u.ravel()
    assert u @ phi @ u == pytest.approx(1.0, rel=1e-14)


def test_limit_affine_layer_energy(limit_model, tiny_meshes, limit_lp):
    m = tiny_meshes
    q = np.array([0.8, -0.5])
    u = np.zeros((m.coupled.n_nodes, 2))
    s = m.ref_layer.node_coords[:, -1]
    u[m.ref_to_coupled] = np.outer(s, q)
    # fiber energy of the layer cells alone
    fib = strain_scale(2, 0.0)
    phi_layer = lame_matrix(m.coupled, cells_of_kind(m.coupled, 1), limit_lp.lambda_bar, limit_lp.mu_bar, fib, fib)
    area = 2.0
    want = area * (limit_lp.mu_bar * q[0] ** 2 + (limit_lp.lambda_bar + 2 * limit_lp.mu_bar) * q[1] ** 2)
    assert u.ravel() @ phi_layer @ u.ravel() == pytest.approx(want, rel=1e-13)


def test_traction_hand_quadrature(tiny_meshes):
    g = tiny_meshes.bulk
    vec = traction_vector(tiny_meshes, g, TractionLoad((1.0, 0.0)))
    np.testing.assert_array_equal(vec, top_traction(g.coords, (1.0, 0.0)))
    # interior top node gets one full edge length h = 0.25
    top = g.sheet_nodes(g.n_sheets - 1)
    assert vec[top[2] * 2] == pytest.approx(0.25)


def test_zero_profile_gives_zero_load(tiny_meshes):
    load = TractionLoad((1.0, 1.0), LoadProfile("zero"))
    assert not load_vector(load, tiny_meshes, tiny_meshes.bulk, 0.3).any()


def test_traction_in_collar_rejected():
    cfg = tiny_config(neumann_patches=(BoundaryPatch(0, "hi", (None, ((-0.25, 0.25),))),))
    m = build_domain(cfg)
    with pytest.raises(LoadError):
        traction_vector(m, m.bulk, TractionLoad((1.0, 0.0)))


def test_nonconforming_mesh_rejected(tiny_meshes):
    with pytest.raises(MeshError):
        assemble_thin_forms(QuintupleParams(0.2, 1, 1, 1, 1), tiny_meshes)


@given(kind=st.sampled_from(["const", "linear", "sine", "ramp"]), t=st.floats(0, 2), scale=st.floats(-2, 2))
def test_profile_derivative_matches_finite_difference(kind, t, scale):
    prof = LoadProfile(kind, scale, omega=3.0, t_ramp=0.5)
    h = 1e-6
    if kind == "ramp" and abs(t - 0.5) < 1e-5:
        return
    fd = (prof.value(t + h) - prof.value(max(t - h, 0.0))) / (t + h - max(t - h, 0.0))
    assert abs(fd - prof.derivative(t)) <= 1e-5 * max(1, abs(scale) * 3)


def test_body_force_average():
    bf = BodyForce(((0.0, 0.5, (1.0, 0.0)), (0.5, 1.0, (0.0, 2.0))))
    np.testing.assert_allclose(bf.average(0.25, 0.75, 2), [0.5, 1.0])
    np.testing.assert_allclose(bf.average(1.5, 2.0, 2), [0.0, 0.0])
