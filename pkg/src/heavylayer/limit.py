"""Limit bulk-surface model with a retained layer field on the reference box."""

import logging
from dataclasses import dataclass

import numpy as np

from .evolution import EvolutionModel, State, Trajectory
from .forms import assemble_limit_forms
from .geometry import NodalField, split_field, trace_jump
from .solvers import TOL_MIN, SolverError
from .thin import Physics

logger = logging.getLogger(__name__)

AFFINE_TOL = 1e-8


@dataclass
class LimitState(State):
    """Coupled-grid state; bulk and layer parts are views through the meshes."""

    def bulk_displacement(self, meshes):
        return split_field(meshes, self.u)

    def bulk_velocity(self, meshes):
        return split_field(meshes, self.v)

    def layer_displacement(self, meshes):
        d = meshes.coupled.dim
        return NodalField("ref_layer", self.u.reshape(-1, d)[meshes.ref_to_coupled])

    def layer_velocity(self, meshes):
        d = meshes.coupled.dim
        return NodalField("ref_layer", self.v.reshape(-1, d)[meshes.ref_to_coupled])

    @classmethod
    def from_parts(cls, meshes, u_bulk, u_layer, v_bulk, v_layer, check=True):
        """Assemble a coupled state from split-bulk and layer nodal arrays.

        Interface values must agree between the two parts.
        """
        grid = meshes.coupled
        d = grid.dim

        def glue(bulk, layer):
            out = np.full((grid.n_nodes, d), np.nan)
            bulk = np.asarray(bulk, dtype=float).reshape(-1, d)
            n_minus = meshes.split_minus.n_nodes
            out[meshes.minus_to_coupled] = bulk[:n_minus]
            out[meshes.plus_to_coupled] = bulk[n_minus:]
            layer = np.asarray(layer, dtype=float).reshape(-1, d)
            shared = meshes.ref_to_coupled
            if check:
                prev = out[shared]
                known = ~np.isnan(prev)
                if np.any(np.abs(prev[known] - layer[known]) > 1e-12 * max(1.0, np.abs(layer).max())):
                    raise ValueError("bulk traces and layer boundary values disagree")
            out[shared] = layer
            return out.ravel()

        return cls(glue(u_bulk, u_layer), glue(v_bulk, v_layer))


LimitTrajectory = Trajectory


def layer_fibers(meshes, values):
    """Layer values as (n_lateral, n_ref_sheets, dim)."""
    grid = meshes.coupled
    d = grid.dim
    vals = np.asarray(values).reshape(grid.n_nodes, d)[meshes.ref_to_coupled]
    return vals.reshape(grid.n_lateral, meshes.ref_layer.n_sheets, d)


def affine_certificate(meshes, values):
    """Largest second difference of the layer field along fibers.

    Returns ``(defect, scale)``; the field is affine along every fiber when
    ``defect <= 1e-8 * scale``. The reference spacing is uniform, so plain
    second differences suffice.
    """
    fib = layer_fibers(meshes, values)
    scale = max(float(np.max(np.abs(fib))), 1e-300) if fib.size else 1.0
    if fib.shape[1] < 3:
        return 0.0, scale
    second = fib[:, 2:] - 2.0 * fib[:, 1:-1] + fib[:, :-2]
    return float(np.max(np.abs(second))), scale


def interface_mismatch(meshes, values):
    """``max |gamma_S(u+-) - gamma_S+-(u_B)|``; zero by construction."""
    d = meshes.coupled.dim
    vals = np.asarray(values).reshape(-1, d)
    bulk = split_field(meshes, vals)
    n_minus = meshes.split_minus.n_nodes
    tabs = meshes.trace_tables
    layer = vals[meshes.ref_to_coupled]
    lo = np.abs(bulk.values[:n_minus][tabs["minus"]] - layer[tabs["ref_minus"]])
    hi = np.abs(bulk.values[n_minus:][tabs["plus"]] - layer[tabs["ref_plus"]])
    return float(max(lo.max(), hi.max()))


def displacement_jump(meshes, values):
    _, _, jump = trace_jump(split_field(meshes, values), meshes)
    return jump


class LimitModel(EvolutionModel):
    state_cls = LimitState
    trajectory_kind = "limit"

    def __init__(self, forms, traction=None, body_force=None, tol=TOL_MIN, linear_solver="cg"):
        super().__init__(forms, traction, body_force, tol, linear_solver)
        defect, scale = affine_certificate(forms.meshes, self.lift_shape)
        if defect > AFFINE_TOL * scale:
            raise SolverError("stationary layer field is not affine", {"defect": defect})
        self.affine_defect = defect

    @classmethod
    def build(cls, lp, meshes, physics=None, traction=None, body_force=None):
        physics = Physics() if physics is None else physics
        forms = assemble_limit_forms(lp, meshes, physics.law, physics.density, physics.dissipation)
        return cls(forms, traction, body_force, tol=physics.tol, linear_solver=physics.linear_solver)

    def annotate(self, traj):
        meshes = self.forms.meshes
        for k in range(len(traj)):
            if interface_mismatch(meshes, traj.u[k]) != 0.0:
                raise SolverError("interface coupling broken", {"step": k})
        if self.forms.frozen:
            j0 = displacement_jump(meshes, traj.u[0])
            traj.jump_freeze = np.array(
                [float(np.max(np.abs(displacement_jump(meshes, traj.u[k]) - j0))) for k in range(len(traj))]
            )

    def constraint_residual(self, v):
        """Largest normal derivative of the layer velocity (frozen mode)."""
        fib = layer_fibers(self.forms.meshes, v)
        if fib.shape[1] < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(fib, axis=1))))


def stationary_lift_limit(model, t):
    """Limit elastostatic response at ``t``.

    Returns
    -------
    ue, due : ndarray
        Coupled-grid lift and its time derivative.
    certificate : (float, float)
        Affine defect of the layer part and its scale.
    """
    ue, due = model.lift(t)
    return ue, due, affine_certificate(model.forms.meshes, ue)


def resolvent_step_limit(forms, lp, spec, tau, psi1, psi2, tol=TOL_MIN, linear_solver="cg"):
    """One resolvent step of the limit problem.

    ``forms`` must have been assembled from ``lp`` and ``spec``; the two are
    taken again only to check that the frozen-jump mode agrees.

    Returns
    -------
    u_bar, v_bar : ndarray
    result : ResolventResult
    """
    from .solvers import ResolventSolver

    if forms.kind != "limit":
        raise ValueError("expected limit forms")
    lp.validate()
    if lp.frozen != forms.frozen:
        raise ValueError("forms were assembled for a different b_bar regime")
    res = ResolventSolver(forms, tau, tol=tol, linear_solver=linear_solver).solve(psi1, psi2)
    return res.u, res.v, res


def simulate_limit(lp, meshes, physics, body_force, traction, x0, T, tau):
    """Run the limit model; ``body_force`` acts on the bulk only."""
    model = LimitModel.build(lp, meshes, physics, traction, body_force)
    return model.simulate(x0, T, tau)
