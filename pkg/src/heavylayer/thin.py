"""Positive-thickness model: two elastic bodies bonded by a viscoelastic layer."""

import logging
from dataclasses import dataclass, field


from .evolution import EvolutionModel, State, Trajectory
from .forms import assemble_thin_forms
from .materials import BulkDensity, DissipationSpec, ElasticLaw
from .solvers import TOL_MIN

logger = logging.getLogger(__name__)


@dataclass
class ThinState(State):
    """Displacement and velocity on the layer-resolving bulk mesh."""


ThinTrajectory = Trajectory


@dataclass(frozen=True)
class Physics:
    """Material data shared by the thin and limit runs."""

    law: ElasticLaw = field(default_factory=ElasticLaw)
    density: BulkDensity = field(default_factory=BulkDensity)
    dissipation: DissipationSpec = field(default_factory=DissipationSpec)
    tol: float = TOL_MIN
    linear_solver: str = "cg"


class ThinModel(EvolutionModel):
    state_cls = ThinState
    trajectory_kind = "thin"

    @classmethod
    def build(cls, q, meshes, physics=None, traction=None, body_force=None):
        physics = Physics() if physics is None else physics
        forms = assemble_thin_forms(q, meshes, physics.law, physics.density, physics.dissipation)
        return cls(forms, traction, body_force, tol=physics.tol, linear_solver=physics.linear_solver)


def stationary_lift(model, t):
    """Elastostatic response ``u^e(t)`` and ``du^e/dt(t)`` of a model."""
    return model.lift(t)


def resolvent_step(forms, spec, b, tau, psi1, psi2, tol=TOL_MIN, linear_solver="cg"):
    """One resolvent step of the thin problem.

    ``spec`` and ``b`` override the dissipation stored in ``forms``.

    Returns
    -------
    u_bar, v_bar : ndarray
    result : ResolventResult
        Diagnostics (iterations, relative gradient norm).
    """
    from dataclasses import replace

    from .solvers import ResolventSolver

    if forms.dissipation is not None:
        diss = replace(forms.dissipation, spec=spec, coefficient=float(b))
        forms = replace(forms, dissipation=diss)
    res = ResolventSolver(forms, tau, tol=tol, linear_solver=linear_solver).solve(psi1, psi2)
    return res.u, res.v, res


def simulate_thin(q, meshes, physics, body_force, traction, x0, T, tau):
    """Run the thin model and return its trajectory.

    Parameters
    ----------
    q : QuintupleParams
    meshes : DomainMeshes
        Built for ``eps = q.eps``.
    physics : Physics
    body_force : BodyForce or None
    traction : TractionLoad or None
    x0 : ThinState
        Full initial state (lift included).
    T, tau : float
    """
    model = ThinModel.build(q, meshes, physics, traction, body_force)
    return model.simulate(x0, T, tau)
