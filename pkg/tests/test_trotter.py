import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heavylayer.config import default_study_config
from heavylayer.geometry import BoundaryPatch, DomainConfig, build_domain
from heavylayer.limit import LimitModel, LimitState
from heavylayer.materials import LimitParams, QuintupleParams
from heavylayer.study import seed_fields
from heavylayer.thin import ThinModel, ThinState
from heavylayer.trotter import (
    ProjectionContext,
    build_initial_data,
    compatible_limit_data,
    cutoff_xi,
    norm_consistency_probe,
    project_displacement,
    project_state,
    project_velocity,
    trotter_distance,
)

from conftest import random_state, tiny_config
from oracles import dense_lame


@pytest.fixture(scope="module")
def ctx(thin_model, limit_model, thin_q, limit_lp):
    return ProjectionContext(thin_model.forms, limit_model.forms, thin_q, limit_lp)


@pytest.fixture(scope="module")
def sequence_contexts():
    cfg = default_study_config()
    seq = cfg.sequence
    lp = seq.limit_params()
    lm = LimitModel.build(lp, build_domain(cfg.domain))
    ctxs = []
    for n in range(seq.count):
        q = seq.params(n)
        th = ThinModel.build(q, build_domain(cfg.domain.with_eps(q.eps)))
        ctxs.append(ProjectionContext(th.forms, lm.forms, q, lp))
    return lm, ctxs


def test_cutoff_examples():
    assert cutoff_xi(0.0, 0.5) == 1.0
    assert cutoff_xi(0.5, 0.5) == 0.0
    assert cutoff_xi(0.25, 0.5) == pytest.approx(0.5, abs=1e-15)


@given(r1=st.floats(-2, 2), r2=st.floats(-2, 2), eps0=st.floats(0.1, 1))
def test_cutoff_monotone_and_bounded(r1, r2, eps0):
    a, b = cutoff_xi(r1, eps0), cutoff_xi(r2, eps0)
    assert 0 <= a <= 1 and 0 <= b <= 1
    if abs(r1) <= abs(r2):
        assert a >= b


def test_constant_velocity_projects_to_constant(ctx):
    c = np.array([0.4, -1.1])
    v = np.tile(c, ctx.meshes_lim.coupled.n_nodes)
    np.testing.assert_allclose(project_velocity(ctx, v), np.tile(c, ctx.meshes_n.bulk.n_nodes), atol=1e-14)


def test_layer_velocity_is_rescaled(ctx):
    ml, mn = ctx.meshes_lim, ctx.meshes_n
    v = np.zeros((ml.coupled.n_nodes, 2))
    v[ml.ref_to_coupled, 0] = ml.ref_layer.node_coords[:, -1]
    pv = project_velocity(ctx, v.ravel()).reshape(-1, 2)
    layer, _, outer = ctx._zones
    z = mn.bulk.node_coords[:, -1]
    np.testing.assert_allclose(pv[layer, 0], z[layer] / ctx.q.eps, atol=1e-14)
    assert not pv[outer].any()


def test_constant_velocity_norm_closed_form(ctx):
    c = np.array([0.4, -1.1])
    pv = project_velocity(ctx, np.tile(c, ctx.meshes_lim.coupled.n_nodes))
    q = ctx.q
    want = c @ c * ((2.0 - 2 * q.eps) + q.rho * q.eps * 2.0)
    assert pv @ ctx.thin_forms.k @ pv == pytest.approx(want, rel=1e-13)


def test_zero_displacement_projects_to_zero(ctx):
    assert not project_displacement(ctx, np.zeros(ctx.meshes_lim.coupled.n_dofs)).any()


def test_matched_parameters_reproduce_affine_layer():
    cfg = tiny_config()
    m = build_domain(cfg)
    eps = m.eps
    lp = LimitParams(0.7, 1.3, 1.0, 1.0)
    q = QuintupleParams(eps, lp.lambda_bar * eps, lp.mu_bar * eps, 1.0, 1.0 / eps)
    ctx = ProjectionContext(ThinModel.build(q, m).forms, LimitModel.build(lp, m).forms, q, lp)
    s = m.ref_layer.node_coords[:, -1]
    ub = np.stack([0.3 + 0.5 * s, -0.2 - 0.8 * s], 1).ravel()
    w = ctx.solve_auxiliary(ub)
    np.testing.assert_allclose(w, ub, atol=1e-12)
    assert ctx.auxiliary_residual(ub, ub) <= 1e-12


def test_auxiliary_matches_dense_oracle_single_fiber():
    cfg = DomainConfig(
        eps=0.125, h_bulk=1.0, m_layer=4, m_refbox=4, dirichlet_patches=(BoundaryPatch(1, "lo"),)
    )
    m = build_domain(cfg)
    q = QuintupleParams(0.125, 0.3, 0.2, 1.0, 8.0)
    lp = LimitParams(1.0, 1.0, 1.0, 1.0)
    ctx = ProjectionContext(ThinModel.build(q, m).forms, LimitModel.build(lp, m).forms, q, lp)
    ref = m.ref_layer
    assert ref.n_dofs <= 100
    rng = np.random.default_rng(3)
    ub = rng.standard_normal(ref.n_dofs)
    sc = np.array([q.eps, 1.0])
    a = dense_lame(ref.coords, lambda i: (q.lam / q.eps, q.mu / q.eps), sc, sc)
    b = dense_lame(ref.coords, lambda i: (lp.lambda_bar, lp.mu_bar), sc, (0.0, 1.0))
    sheet = ref.node_multi_index[:, -1]
    fixed_nodes = (sheet == 0) | (sheet == ref.n_sheets - 1)
    fixed = np.repeat(fixed_nodes, 2)
    inner = ~fixed
    w = ub.copy()
    rhs = b @ ub - a[:, fixed] @ ub[fixed]
    w[inner] = np.linalg.solve(a[np.ix_(inner, inner)], rhs[inner])
    np.testing.assert_allclose(ctx.solve_auxiliary(ub), w, rtol=1e-10, atol=1e-12)


def test_layer_traces_match_bulk_traces(ctx, limit_model):
    rng = np.random.default_rng(2)
    u, _ = random_state(limit_model.forms, rng)
    pu = project_displacement(ctx, u).reshape(-1, 2)
    mn, ml = ctx.meshes_n, ctx.meshes_lim
    k_lo, k_hi = mn.layer_range
    vals = u.reshape(-1, 2)
    tabs = ml.trace_tables
    minus = vals[ml.minus_to_coupled][tabs["minus"]]
    plus = vals[ml.plus_to_coupled][tabs["plus"]]
    mask = ctx.thin_forms.dirichlet.reshape(-1, 2)
    lo_nodes, hi_nodes = mn.bulk.sheet_nodes(k_lo), mn.bulk.sheet_nodes(k_hi)
    np.testing.assert_array_equal(np.where(mask[lo_nodes], 0, minus), pu[lo_nodes])
    np.testing.assert_array_equal(np.where(mask[hi_nodes], 0, plus), pu[hi_nodes])


def test_projection_is_linear(ctx, limit_model):
    rng = np.random.default_rng(9)
    x = LimitState(*random_state(limit_model.forms, rng))
    y = LimitState(*random_state(limit_model.forms, rng))
    a, b = 1.7, -0.4
    lhs = project_state(ctx, x.scaled(a) + y.scaled(b))
    px, py = project_state(ctx, x), project_state(ctx, y)
    scale = max(np.abs(lhs.u).max(), np.abs(lhs.v).max())
    assert np.abs(lhs.u - a * px.u - b * py.u).max() <= 1e-12 * scale
    assert np.abs(lhs.v - a * px.v - b * py.v).max() <= 1e-12 * scale


def test_distance_examples(ctx, limit_model, thin_model):
    rng = np.random.default_rng(4)
    x = LimitState(*random_state(limit_model.forms, rng))
    assert trotter_distance(ctx, x, project_state(ctx, x))[0] == 0.0
    xn = ThinState(*random_state(thin_model.forms, rng))
    dist, norm_n, _ = trotter_distance(ctx, LimitState.zeros(limit_model.forms.n_dofs), xn)
    assert dist == pytest.approx(thin_model.forms.energy_norm(xn.u, xn.v), rel=1e-14)
    assert dist == pytest.approx(norm_n, rel=1e-14)
    px = project_state(ctx, x)
    du, dv = px.u - xn.u, px.v - xn.v
    phi, k = thin_model.forms.phi.toarray(), thin_model.forms.k.toarray()
    want = math.sqrt(du @ phi @ du + dv @ k @ dv)
    assert trotter_distance(ctx, x, xn)[0] == pytest.approx(want, rel=1e-12)


def test_probe_of_zero_state(sequence_contexts):
    lm, ctxs = sequence_contexts
    probe = norm_consistency_probe(ctxs, LimitState.zeros(lm.forms.n_dofs))
    assert all(r.projected_norm == 0 and r.limit_norm == 0 for r in probe.rows)
    assert probe.bounded and not probe.flags


def test_probe_constant_velocity_closed_form(sequence_contexts):
    lm, ctxs = sequence_contexts
    c = np.array([1.0, 0.5])
    x = LimitState(np.zeros(lm.forms.n_dofs), np.tile(c, lm.forms.grid.n_nodes))
    probe = norm_consistency_probe(ctxs, x)
    rho_bar = ctxs[0].lp.rho_bar
    limit = math.sqrt(c @ c * (2.0 + rho_bar * 2.0))
    for row, ctx in zip(probe.rows, ctxs):
        q = ctx.q
        thin = math.sqrt(c @ c * ((2.0 - 2 * q.eps) + q.rho * q.eps * 2.0))
        assert row.gap == pytest.approx(abs(thin - limit), abs=1e-10)


def test_probe_bounded_and_shrinking(sequence_contexts):
    lm, ctxs = sequence_contexts
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(100):
        u, v = random_state(lm.forms, rng)
        x = LimitState(u, v).scaled(1.0 / lm.forms.energy_norm(u, v))
        probe = norm_consistency_probe(ctxs, x)
        worst = max(worst, max(r.projected_norm for r in probe.rows))
        assert probe.gap_shrinks
    assert worst <= 10.0


def test_initial_data_examples(ctx, thin_model, limit_model):
    nl, nt = limit_model.forms.n_dofs, thin_model.forms.n_dofs
    xe0 = LimitState(limit_model.lift(0.0)[0], np.zeros(nl))
    xe0n = ThinState(thin_model.lift(0.0)[0] + 0.1, np.zeros(nt))
    out = build_initial_data(ctx, xe0, xe0, xe0n, thin_model, limit_model)
    np.testing.assert_array_equal(out.u, xe0n.u)
    np.testing.assert_array_equal(out.v, xe0n.v)


def test_initial_data_composes_resolvents(ctx, thin_model, limit_model):
    rng = np.random.default_rng(14)
    x0 = LimitState(*random_state(limit_model.forms, rng))
    zero_l = LimitState.zeros(limit_model.forms.n_dofs)
    zero_t = ThinState.zeros(thin_model.forms.n_dofs)
    out = build_initial_data(ctx, x0, zero_l, zero_t, thin_model, limit_model)
    r = limit_model.resolvent(x0.u, x0.v, 1.0)
    p = project_state(ctx, LimitState(r.u, r.v))
    rn = thin_model.resolvent(p.u, p.v, 1.0)
    np.testing.assert_array_equal(out.u, rn.u)
    np.testing.assert_array_equal(out.v, rn.v)
    twice = compatible_limit_data(x0, zero_l, limit_model)
    r2 = limit_model.resolvent(r.u, r.v, 1.0)
    np.testing.assert_array_equal(twice.u, r2.u)


def test_one_step_distance_is_first_order_in_tau():
    cfg = tiny_config()
    m = build_domain(cfg)
    q = QuintupleParams(0.125, 0.125, 0.125, 0.125, 8.0)
    lp = LimitParams(1.0, 1.0, 1.0, 1.0)
    th, lm = ThinModel.build(q, m), LimitModel.build(lp, m)
    ctx = ProjectionContext(th.forms, lm.forms, q, lp)
    pattern, s0 = seed_fields(m.coupled, cfg.extents)
    x0 = compatible_limit_data(LimitState(np.zeros(m.coupled.n_dofs), pattern.ravel()), LimitState.zeros(m.coupled.n_dofs), lm)
    xn0 = project_state(ctx, x0)
    dists = []
    for tau in (2.0**-6, 2.0**-7, 2.0**-8, 2.0**-9):
        tl = lm.simulate(x0, tau, tau)
        tt = th.simulate(xn0, tau, tau)
        dists.append(trotter_distance(ctx, tl.state(1), tt.state(1))[0])
    ratios = np.array(dists[:-1]) / np.array(dists[1:])
    assert np.all(ratios > 1.8) and np.all(ratios < 2.2)
