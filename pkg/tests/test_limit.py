import math

import numpy as np
import pytest

from heavylayer.forms import LoadProfile, TractionLoad
from heavylayer.geometry import BoundaryPatch, build_domain
from heavylayer.limit import (
    LimitModel,
    LimitState,
    affine_certificate,
    displacement_jump,
    interface_mismatch,
    resolvent_step_limit,
    simulate_limit,
    stationary_lift_limit,
)
from heavylayer.materials import DissipationSpec, LimitParams
from heavylayer.thin import Physics

from conftest import random_state, tiny_config
from oracles import dense_lame, dense_resolvent, limit_dense_forms


def test_affine_lift_random_loads():
    rng = np.random.default_rng(17)
    for _ in range(5):
        lo = rng.uniform(0.0, 0.4)
        patches = (
            BoundaryPatch(1, "hi", (((lo, lo + 0.5),), None)),
            BoundaryPatch(0, "hi", (None, ((0.75, 1.0),))),
        )
        m = build_domain(tiny_config(neumann_patches=patches))
        load = TractionLoad(tuple(rng.standard_normal(2)), LoadProfile("sine", 1.0, omega=rng.uniform(1, 5)))
        lp = LimitParams(rng.uniform(0, 2), rng.uniform(0.2, 2), 1.0, 1.0)
        model = LimitModel.build(lp, m, Physics(), load)
        ue, _, (defect, scale) = stationary_lift_limit(model, 0.3)
        assert scale > 0 and defect <= 1e-8 * scale


def test_frozen_jump_constant(frozen_model):
    rng = np.random.default_rng(3)
    f = frozen_model.forms
    u, v = random_state(f, rng)
    # start from a state with a genuine jump
    traj = frozen_model.simulate(LimitState(u + frozen_model.lift(0.0)[0], v), 1.0, 1 / 64)
    assert len(traj) == 65
    assert np.abs(displacement_jump(f.meshes, traj.u[0])).max() > 0.1
    assert traj.jump_freeze.max() <= 1e-10
    for k in range(1, len(traj)):
        assert frozen_model.constraint_residual(traj.v[k]) <= 1e-12


def test_frozen_flag_checked(limit_model):
    n = limit_model.forms.n_dofs
    with pytest.raises(ValueError):
        resolvent_step_limit(limit_model.forms, LimitParams(1, 1, math.inf, 1), DissipationSpec(), 0.1, np.zeros(n), np.zeros(n))


def test_quadratic_limit_resolvent_matches_dense_lu(limit_model, tiny_meshes, limit_lp):
    phi, k, is_layer = limit_dense_forms(tiny_meshes, limit_lp)
    visc = limit_lp.b_bar * dense_lame(tiny_meshes.coupled.coords, lambda i: (0.0, 0.5) if is_layer(i) else None, (0, 1), (0, 1))
    f = limit_model.forms
    rng = np.random.default_rng(12)
    psi1, psi2 = random_state(f, rng)
    for tau in (1.0, 0.1):
        u, v, _ = resolvent_step_limit(f, limit_lp, DissipationSpec(), tau, psi1, psi2)
        uo, vo = dense_resolvent(k, phi, visc, f.free, tau, psi1, psi2)
        assert np.linalg.norm(v - vo) <= 1e-8 * np.linalg.norm(vo)
        assert np.linalg.norm(u - uo) <= 1e-8 * np.linalg.norm(uo)


@pytest.mark.parametrize("which", ["limit_model", "frozen_model"])
def test_limit_contraction(which, request):
    model = request.getfixturevalue(which)
    f = model.forms
    rng = np.random.default_rng(5)
    for _ in range(10):
        a = random_state(f, rng)
        b = random_state(f, rng)
        ra, rb = model.resolvent(*a, 0.2), model.resolvent(*b, 0.2)
        assert f.energy_norm(ra.u - rb.u, ra.v - rb.v) <= (1 + 1e-8) * f.energy_norm(a[0] - b[0], a[1] - b[1])


def test_limit_energy_decay_nonquadratic(tiny_meshes, limit_lp):
    phys = Physics(dissipation=DissipationSpec(p=1.5, eta=1e-6))
    model = LimitModel.build(limit_lp, tiny_meshes, phys)
    rng = np.random.default_rng(6)
    traj = model.simulate(LimitState(*random_state(model.forms, rng)), 1.0, 1 / 64)
    assert np.all(np.diff(traj.energy) <= 1e-10 * traj.energy[0])
    assert traj.grad_norm.max() <= 1e-10


def test_interface_coupling_and_parts(limit_model, tiny_meshes):
    rng = np.random.default_rng(1)
    u, v = random_state(limit_model.forms, rng)
    assert interface_mismatch(tiny_meshes, u) == 0.0
    x = LimitState(u, v)
    rebuilt = LimitState.from_parts(
        tiny_meshes,
        x.bulk_displacement(tiny_meshes).values,
        x.layer_displacement(tiny_meshes).values,
        x.bulk_velocity(tiny_meshes).values,
        x.layer_velocity(tiny_meshes).values,
    )
    np.testing.assert_array_equal(rebuilt.u, u)
    np.testing.assert_array_equal(rebuilt.v, v)
    bad = x.layer_displacement(tiny_meshes).values.copy()
    bad[tiny_meshes.trace_tables["ref_minus"][0]] += 1.0
    with pytest.raises(ValueError):
        LimitState.from_parts(tiny_meshes, x.bulk_displacement(tiny_meshes).values, bad, x.bulk_velocity(tiny_meshes).values, x.layer_velocity(tiny_meshes).values)


def test_affine_certificate_detects_curvature(tiny_meshes):
    u = np.zeros((tiny_meshes.coupled.n_nodes, 2))
    s = tiny_meshes.ref_layer.node_coords[:, -1]
    u[tiny_meshes.ref_to_coupled, 0] = s**2
    defect, scale = affine_certificate(tiny_meshes, u)
    assert defect > 1e-3 * scale


def test_zero_limit_run(tiny_meshes, limit_lp):
    n = tiny_meshes.coupled.n_dofs
    traj = simulate_limit(limit_lp, tiny_meshes, Physics(), None, None, LimitState.zeros(n), 0.25, 1 / 16)
    assert not traj.u.any() and not traj.v.any()
