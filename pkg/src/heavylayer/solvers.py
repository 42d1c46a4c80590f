"""Backward-Euler resolvent as a convex minimization.

For data ``(psi1, psi2)`` the step minimizes

    J(v) = 1/2 k(v,v) - k(psi2,v) + tau^2/2 phi(v,v) + tau phi(psi1,v)
           + tau * Diss(v)

over the admissible velocity space and returns ``u = psi1 + tau v``.
Quadratic dissipation gives a linear system solved by Jacobi-preconditioned
CG; otherwise a damped Newton iteration with CG inner solves is used. A
sparse LU factorization backs up CG whenever it stalls.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

TOL_MIN = 1e-10


class SolverError(RuntimeError):
    """Raised when the minimization does not reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class ResolventResult:
    u: np.ndarray
    v: np.ndarray
    iterations: int
    grad_norm: float
    objective: float
    linear_fallbacks: int = 0


def pcg(a, b, x0=None, rtol=1e-12, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, iterations, converged)``; convergence is measured by the
    true residual relative to ``|b|``.
    """
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0, True
    diag = a.diagonal()
    inv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - a @ x
    z = inv * r
    p = z.copy()
    rz = r @ z
    maxiter = 10 * n + 50 if maxiter is None else maxiter
    target = rtol * bnorm
    for it in range(1, maxiter + 1):
        if np.linalg.norm(r) <= target:
            return x, it - 1, True
        ap = a @ p
        pap = p @ ap
        if pap <= 0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if it % 50 == 0:
            r = b - a @ x  # limit drift of the recursive residual
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    r = b - a @ x
    return x, maxiter, bool(np.linalg.norm(r) <= target)


class ResolventSolver:
    """Resolvent ``(I + tau A)^{-1}`` of one set of forms.

    Parameters
    ----------
    forms : Forms
    tau : float
    tol : float
        Relative gradient tolerance (relative to the gradient at ``v = 0``).
    linear_solver : {"cg", "direct"}
    max_iter : int
        Newton iteration cap.
    """

    def __init__(self, forms, tau, tol=TOL_MIN, linear_solver="cg", max_iter=100):
        if not tau > 0:
            raise ValueError("tau must be positive")
        self.forms = forms
        self.tau = float(tau)
        self.tol = float(tol)
        self.linear_solver = linear_solver
        self.max_iter = max_iter
        e = forms.velocity_basis
        self.basis = e
        self.base = (e.T @ (forms.k + self.tau**2 * forms.phi) @ e).tocsr()
        diss = forms.dissipation
        self.diss = diss if (diss is not None and diss.coefficient > 0) else None
        self.linear = self.diss is None or diss.spec.is_quadratic
        if self.linear and self.diss is not None:
            self.system = (self.base + self.tau * (e.T @ diss.quadratic_matrix @ e)).tocsr()
        else:
            self.system = self.base
        self._lu = None

    # ------------------------------------------------------------------
    def _factor(self, mat=None):
        if mat is None:
            if self._lu is None:
                self._lu = spla.splu(self.system.tocsc())
            return self._lu
        return spla.splu(mat.tocsc())

    def _linsolve(self, mat, rhs, x0=None, rtol=1e-13, cached=False):
        """Returns ``(x, fell_back)``."""
        if self.linear_solver == "direct":
            lu = self._factor(None if cached else mat)
            return lu.solve(rhs), False
        x, _, ok = pcg(mat, rhs, x0=x0, rtol=rtol)
        if ok:
            return x, False
        logger.info("CG stalled on %d unknowns, switching to sparse LU", rhs.size)
        lu = self._factor(None if cached else mat)
        return lu.solve(rhs), True

    def rhs(self, psi1, psi2):
        f = self.forms
        return self.basis.T @ (f.k @ psi2 - self.tau * (f.phi @ psi1))

    def objective(self, w, rhs):
        v = self.basis @ w
        val = 0.5 * w @ (self.base @ w) - rhs @ w
        if self.diss is not None:
            val += self.tau * self.diss.value(v)
        return float(val)

    def gradient(self, w, rhs):
        g = self.base @ w - rhs
        if self.diss is not None:
            g = g + self.tau * (self.basis.T @ self.diss.gradient(self.basis @ w))
        return g

    # ------------------------------------------------------------------
    def solve(self, psi1, psi2, w0=None):
        """Minimize the step functional.

        Parameters
        ----------
        psi1 : ndarray
            Displacement datum, zero on prescribed DOFs.
        psi2 : ndarray
            Velocity datum.
        w0 : ndarray, optional
            Warm start in basis coordinates.
        """
        psi1 = np.asarray(psi1, dtype=float)
        psi2 = np.asarray(psi2, dtype=float)
        rhs = self.rhs(psi1, psi2)
        g0 = np.linalg.norm(rhs)  # gradient norm at w = 0
        m = rhs.size
        if g0 == 0.0:
            v = np.zeros(self.forms.n_dofs)
            return ResolventResult(psi1.copy(), v, 0, 0.0, 0.0)
        if self.linear:
            w, fell = self._linsolve(self.system, rhs, x0=w0, cached=True)
            g = self.system @ w - rhs
            rel = np.linalg.norm(g) / g0
            if rel > self.tol and not fell:
                w = self._factor().solve(rhs)
                fell = True
                rel = np.linalg.norm(self.system @ w - rhs) / g0
            if rel > self.tol:
                raise SolverError(
                    "linear resolvent solve missed tolerance", {"grad_norm": rel}
                )
            return self._result(psi1, w, rhs, 1, rel, int(fell))
        return self._newton(psi1, rhs, g0, np.zeros(m) if w0 is None else np.array(w0, float))

    def _newton(self, psi1, rhs, g0, w):
        fallbacks = 0
        e = self.basis
        jval = self.objective(w, rhs)
        for it in range(1, self.max_iter + 1):
            v = e @ w
            _, dgrad, dhess = self.diss.value_grad_hess(v)
            g = self.base @ w - rhs + self.tau * (e.T @ dgrad)
            gnorm = np.linalg.norm(g)
            if gnorm <= self.tol * g0:
                return self._result(psi1, w, rhs, it - 1, gnorm / g0, fallbacks)
            hess = (self.base + self.tau * (e.T @ dhess @ e)).tocsr()
            step, fell = self._linsolve(hess, -g, rtol=1e-12)
            fallbacks += int(fell)
            slope = g @ step
            if slope >= 0:  # inexact direction lost descent, use steepest descent
                step = -g
                slope = -(g @ g)
            alpha = 1.0
            accepted = False
            for _ in range(60):
                trial = w + alpha * step
                jt = self.objective(trial, rhs)
                if jt <= jval + 1e-4 * alpha * slope:
                    accepted = True
                    break
                # near the minimizer J differences drown in roundoff; accept
                # any step that still reduces the gradient
                if abs(jt - jval) <= 1e-14 * max(1.0, abs(jval)):
                    gt = self.gradient(trial, rhs)
                    if np.linalg.norm(gt) < gnorm:
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                raise SolverError(
                    "line search failed", {"iterations": it, "grad_norm": gnorm / g0}
                )
            w = trial
            jval = jt
        g = self.gradient(w, rhs)
        rel = np.linalg.norm(g) / g0
        if rel <= self.tol:
            return self._result(psi1, w, rhs, self.max_iter, rel, fallbacks)
        raise SolverError(
            "Newton iteration did not converge",
            {"iterations": self.max_iter, "grad_norm": rel},
        )

    def _result(self, psi1, w, rhs, iters, rel, fallbacks):
        v = self.basis @ w
        return ResolventResult(
            u=psi1 + self.tau * v,
            v=v,
            iterations=iters,
            grad_norm=float(rel),
            objective=self.objective(w, rhs),
            linear_fallbacks=fallbacks,
        )

    def coordinates(self, v):
        """Least-squares basis coordinates of a full velocity vector."""
        e = self.basis
        gram = (e.T @ e).tocsc()
        return spla.spsolve(gram, e.T @ v)
