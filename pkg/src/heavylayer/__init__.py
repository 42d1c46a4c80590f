"""Thin heavy viscoelastic layers between elastic bodies and their limit model.

The package discretizes a positive-thickness layer model and its
bulk-surface limit with Q1 finite elements, advances both with implicit
resolvent steps, and measures their distance through a projection of limit
states onto the thin-layer spaces.
"""

from ._kernels import BACKEND
from .config import ConfigError, ParamSequenceSpec, PowerLaw, StudyConfig, load_config
from .forms import BodyForce, LoadProfile, TractionLoad, assemble_limit_forms, assemble_thin_forms
from .geometry import BoundaryPatch, DomainConfig, NodalField, build_domain, trace_jump
from .limit import LimitModel, LimitState, resolvent_step_limit, simulate_limit, stationary_lift_limit
from .materials import (
    BulkDensity,
    DissipationSpec,
    ElasticLaw,
    LimitParams,
    QuintupleParams,
    dissipation_value_grad,
    limit_dissipation,
    recession,
)
from .solvers import SolverError
from .study import run_convergence_study, validate_hypotheses
from .thin import Physics, ThinModel, ThinState, resolvent_step, simulate_thin, stationary_lift
from .trotter import (
    ProjectionContext,
    build_initial_data,
    cutoff_xi,
    norm_consistency_probe,
    project_displacement,
    project_velocity,
    trotter_distance,
)

__all__ = [
    "BACKEND",
    "ConfigError",
    "ParamSequenceSpec",
    "PowerLaw",
    "StudyConfig",
    "load_config",
    "BodyForce",
    "LoadProfile",
    "TractionLoad",
    "assemble_limit_forms",
    "assemble_thin_forms",
    "BoundaryPatch",
    "DomainConfig",
    "NodalField",
    "build_domain",
    "trace_jump",
    "LimitModel",
    "LimitState",
    "resolvent_step_limit",
    "simulate_limit",
    "stationary_lift_limit",
    "BulkDensity",
    "DissipationSpec",
    "ElasticLaw",
    "LimitParams",
    "QuintupleParams",
    "dissipation_value_grad",
    "limit_dissipation",
    "recession",
    "SolverError",
    "run_convergence_study",
    "validate_hypotheses",
    "Physics",
    "ThinModel",
    "ThinState",
    "resolvent_step",
    "simulate_thin",
    "stationary_lift",
    "ProjectionContext",
    "build_initial_data",
    "cutoff_xi",
    "norm_consistency_probe",
    "project_displacement",
    "project_velocity",
    "trotter_distance",
]

__version__ = "0.1.0"
