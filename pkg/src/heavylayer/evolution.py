"""Implicit time stepping shared by the thin and the limit model.

The displacement is split into the elastostatic response to the Neumann load
and a remainder; the remainder state is advanced by the resolvent of the
monotone operator with step-averaged data.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .forms import BodyForce, load_vector, traction_vector
from .solvers import TOL_MIN, ResolventSolver, SolverError

logger = logging.getLogger(__name__)

LIFT_TOL = 1e-10


@dataclass
class State:
    """Displacement and velocity DOF vectors of one model."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != self.v.shape:
            raise ValueError("displacement and velocity lengths differ")

    def __add__(self, other):
        return type(self)(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return type(self)(self.u - other.u, self.v - other.v)

    def scaled(self, a):
        return type(self)(a * self.u, a * self.v)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))


@dataclass
class Trajectory:
    """Time history of one run.

    ``u``, ``v`` hold the full states, ``ue`` the elastostatic lift; the
    remainder energy is ``0.5 |(u - ue, v)|^2``.
    """

    kind: str
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    ue: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    iterations: np.ndarray
    grad_norm: np.ndarray
    rhs_norm: np.ndarray
    jump_freeze: np.ndarray = None

    def __len__(self):
        return self.times.size

    def state(self, k, cls=State):
        return cls(self.u[k].copy(), self.v[k].copy())

    def remainder(self, k, cls=State):
        return cls(self.u[k] - self.ue[k], self.v[k].copy())

    def rows(self):
        for k, t in enumerate(self.times):
            row = {
                "k": k,
                "t": float(t),
                "energy": float(self.energy[k]),
                "dissipation_increment": float(self.dissipation[k]),
                "solver_iters": int(self.iterations[k]),
                "grad_norm": float(self.grad_norm[k]),
            }
            if self.jump_freeze is not None:
                row["jump_freeze"] = float(self.jump_freeze[k])
            yield row

    def to_csv(self, path):
        cols = ["k", "t", "energy", "dissipation_increment", "solver_iters", "grad_norm"]
        if self.jump_freeze is not None:
            cols.append("jump_freeze")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({key: _fmt(val) for key, val in row.items()})


def _fmt(val):
    if isinstance(val, float):
        return repr(val)
    return val


class EvolutionModel:
    """Time stepping with the stationary lift for one set of forms.

    Parameters
    ----------
    forms : Forms
    traction : TractionLoad, optional
    body_force : BodyForce, optional
    tol : float
        Relative gradient tolerance of every step.
    linear_solver : {"cg", "direct"}
    """

    state_cls = State
    trajectory_kind = "generic"

    def __init__(self, forms, traction=None, body_force=None, tol=TOL_MIN, linear_solver="cg"):
        self.forms = forms
        self.traction = traction
        self.body_force = body_force if body_force is not None else BodyForce()
        self.tol = tol
        self.linear_solver = linear_solver
        self._solvers = {}
        grid = forms.grid
        if traction is not None:
            self.load_shape = traction_vector(forms.meshes, grid, traction)
        else:
            self.load_shape = np.zeros(grid.n_dofs)
        self.lift_shape = self.static_solve(self.load_shape)

    # elastostatics -----------------------------------------------------
    def static_solve(self, load):
        """Solve ``phi(u, .) = load`` on free DOFs, ``u = 0`` on the rest."""
        f = self.forms
        u = np.zeros(f.n_dofs)
        if not np.any(load):
            return u
        free = f.free
        u[free] = f.stiffness_factor.solve(load[free])
        res = f.phi[free] @ u - load[free]
        rel = np.linalg.norm(res) / np.linalg.norm(load[free])
        if rel > LIFT_TOL:
            raise SolverError("stationary lift residual too large", {"residual": rel})
        return u

    def load(self, t):
        if self.traction is None:
            return np.zeros(self.forms.n_dofs)
        return load_vector(self.traction, self.forms.meshes, self.forms.grid, t)

    def lift(self, t):
        """Stationary lift and its time derivative at ``t``."""
        if self.traction is None:
            z = np.zeros(self.forms.n_dofs)
            return z, z.copy()
        prof = self.traction.profile
        return prof.value(t) * self.lift_shape, prof.derivative(t) * self.lift_shape

    # forcing -----------------------------------------------------------
    def body_load(self, t0, t1):
        """``int f . w`` for the step-averaged body force."""
        d = self.forms.grid.dim
        fbar = self.body_force.average(t0, t1, d)
        if not np.any(fbar):
            return np.zeros(self.forms.n_dofs)
        nodal = np.tile(fbar, self.forms.grid.n_nodes)
        return self.forms.force_mass @ nodal

    def forcing(self, t0, t1):
        """Step-averaged data ``(F_u, F_v)`` over ``[t0, t1]``."""
        tau = t1 - t0
        ue0, _ = self.lift(t0)
        ue1, _ = self.lift(t1)
        fu = -(ue1 - ue0) / tau
        mload = self.body_load(t0, t1)
        fv = self.forms.mass_factor.solve(mload) if np.any(mload) else np.zeros_like(mload)
        return fu, fv

    # stepping ----------------------------------------------------------
    def solver(self, tau):
        key = float(tau)
        if key not in self._solvers:
            self._solvers[key] = ResolventSolver(
                self.forms, key, tol=self.tol, linear_solver=self.linear_solver
            )
        return self._solvers[key]

    def resolvent(self, psi1, psi2, tau):
        """``(I + tau A)^{-1}(psi1, psi2)``."""
        return self.solver(tau).solve(psi1, psi2)

    def check_state(self, state):
        f = self.forms
        if state.u.shape != (f.n_dofs,):
            raise ValueError("state does not match the forms")
        if np.any(state.u[f.dirichlet] != 0):
            raise ValueError("displacement violates the Dirichlet mask")

    def simulate(self, x0, T, tau):
        """Backward-Euler trajectory from the full initial state ``x0``."""
        if not tau > 0 or T < tau:
            raise ValueError("need tau > 0 and T >= tau")
        n_steps = int(round(T / tau))
        if not math.isclose(n_steps * tau, T, rel_tol=1e-9):
            raise ValueError("T must be an integer multiple of tau")
        f = self.forms
        self.check_state(x0)
        n = f.n_dofs
        times = tau * np.arange(n_steps + 1)
        u = np.zeros((n_steps + 1, n))
        v = np.zeros((n_steps + 1, n))
        ue = np.zeros((n_steps + 1, n))
        energy = np.zeros(n_steps + 1)
        diss = np.zeros(n_steps + 1)
        iters = np.zeros(n_steps + 1, dtype=int)
        gnorm = np.zeros(n_steps + 1)
        rhs_norm = np.zeros(n_steps + 1)
        ue[0] = self.lift(0.0)[0]
        u[0], v[0] = x0.u, x0.v
        ur, vr = x0.u - ue[0], x0.v.copy()
        energy[0] = 0.5 * f.energy_sq(ur, vr)
        solver = self.solver(tau)
        for k in range(1, n_steps + 1):
            t0, t1 = times[k - 1], times[k]
            fu, fv = self.forcing(t0, t1)
            psi1, psi2 = ur + tau * fu, vr + tau * fv
            try:
                res = solver.solve(psi1, psi2)
            except SolverError as exc:
                exc.diagnostics["step"] = k
                raise
            ur, vr = res.u, res.v
            ue[k] = self.lift(t1)[0]
            u[k], v[k] = ur + ue[k], vr
            energy[k] = 0.5 * f.energy_sq(ur, vr)
            if solver.diss is not None:
                diss[k] = tau * solver.diss.value(vr)
            iters[k] = res.iterations
            gnorm[k] = res.grad_norm
            rhs_norm[k] = np.linalg.norm(solver.rhs(psi1, psi2))
        traj = Trajectory(
            kind=self.trajectory_kind,
            times=times,
            u=u,
            v=v,
            ue=ue,
            energy=energy,
            dissipation=diss,
            iterations=iters,
            grad_norm=gnorm,
            rhs_norm=rhs_norm,
        )
        self.annotate(traj)
        return traj

    def annotate(self, traj):
        """Hook for model-specific per-step certificates."""

    # diagnostics -------------------------------------------------------
    def energy_margins(self, traj):
        """``0.5|X^r_{k-1} + tau F_k|^2 - 0.5|X^r_k|^2`` for every step."""
        f = self.forms
        out = np.zeros(len(traj) - 1)
        for k in range(1, len(traj)):
            tau = traj.times[k] - traj.times[k - 1]
            fu, fv = self.forcing(traj.times[k - 1], traj.times[k])
            prev = 0.5 * f.energy_sq(traj.u[k - 1] - traj.ue[k - 1] + tau * fu, traj.v[k - 1] + tau * fv)
            out[k - 1] = prev - traj.energy[k]
        return out

    def weak_form_residual(self, traj, k, n_tests=20, rng=None):
        """Largest relative residual of the step-``k`` variational identity.

        The identity is ``k(v_k - v_{k-1}, w)/tau + phi(u_k, w) + Diss'(v_k) w
        = L(t_k) w + int f w`` for admissible ``w``; the residual is measured
        on random ``w`` and normalized by the step data.
        """
        rng = np.random.default_rng(0) if rng is None else rng
        f = self.forms
        tau = traj.times[k] - traj.times[k - 1]
        solver = self.solver(tau)
        r = f.k @ (traj.v[k] - traj.v[k - 1]) / tau + f.phi @ traj.u[k]
        r -= self.load(traj.times[k]) + self.body_load(traj.times[k - 1], traj.times[k])
        if solver.diss is not None:
            r += solver.diss.gradient(traj.v[k])
        scale = max(traj.rhs_norm[k] / tau, 1e-300)
        worst = 0.0
        basis = solver.basis
        for _ in range(n_tests):
            w = rng.standard_normal(basis.shape[1])
            val = abs((basis @ w) @ r) / (scale * np.linalg.norm(w))
            worst = max(worst, val)
        return worst
