"""Comparison of limit states with thin states on the layer-resolving mesh.

A limit state lives on the coupled grid (split bulk glued to the reference
box), a thin state on the bulk mesh for one layer thickness. ``P_n`` maps the
former into the latter:

* velocities: the bulk velocity outside the layer, the rescaled layer
  velocity inside (the layer value wins on the two layer sheets);
* displacements: the bulk displacement away from the collar, a cut-off blend
  of the bulk displacement with its copy shifted towards the interface inside
  the collar, and inside the layer the solution of an auxiliary elliptic
  problem whose boundary values are the interface traces.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import lame_matrix
from .geometry import MeshError, strain_scale
from .thin import ThinState

logger = logging.getLogger(__name__)

C_CAP = 10.0


def cutoff_xi(r, eps0):
    """Cosine smoothstep: 1 on ``|r| <= eps0/3``, 0 on ``|r| >= 2 eps0/3``."""
    a = np.abs(np.asarray(r, dtype=float))
    third = eps0 / 3.0
    mid = 0.5 * (1.0 + np.cos(np.pi * (a - third) / third))
    out = np.where(a <= third, 1.0, np.where(a >= 2.0 * third, 0.0, mid))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class ProjectionContext:
    """Everything needed to map limit states into one thin space.

    Parameters
    ----------
    thin_forms : Forms
        Assembled for ``q`` on the mesh with layer half-thickness ``q.eps``.
    limit_forms : Forms
        Limit forms on the coupled grid.
    q : QuintupleParams
    lp : LimitParams
    """

    thin_forms: object
    limit_forms: object
    q: object
    lp: object
    profile: str = "cosine"

    def __post_init__(self):
        mn, ml = self.meshes_n, self.meshes_lim
        if not self.q.eps < ml.config.eps0:
            raise MeshError("eps_n must be below eps0")
        for a, b in zip(mn.bulk.coords[:-1], ml.coupled.coords[:-1]):
            if a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=1e-12):
                raise MeshError("thin and limit meshes do not share the lateral grid")
        if mn.config.m_layer != ml.config.m_refbox:
            raise MeshError("layer cell count must equal the reference box cell count")

    @property
    def meshes_n(self):
        return self.thin_forms.meshes

    @property
    def meshes_lim(self):
        return self.limit_forms.meshes

    @property
    def eps0(self):
        return self.meshes_lim.config.eps0

    # node classification ---------------------------------------------
    @cached_property
    def _zones(self):
        bulk = self.meshes_n.bulk
        k_lo, k_hi = self.meshes_n.layer_range
        sheet = bulk.node_multi_index[:, -1]
        z = bulk.node_coords[:, -1]
        layer = (sheet >= k_lo) & (sheet <= k_hi)
        collar = ~layer & (np.abs(z) < self.eps0 - 1e-12)
        outer = ~layer & ~collar
        return layer, collar, outer

    def _bulk_interp(self, points, side):
        """Interpolation from coupled-grid nodes at bulk points on one side."""
        ml = self.meshes_lim
        if side < 0:
            grid, nodes = ml.split_minus, ml.minus_to_coupled
        else:
            grid, nodes = ml.split_plus, ml.plus_to_coupled
        local = grid.interpolation_matrix(points)
        cols = nodes[local.indices]
        return sp.csr_matrix((local.data, cols, local.indptr), shape=(local.shape[0], ml.coupled.n_nodes))

    def _evaluate_bulk(self, points, sign):
        """Rows evaluating the limit bulk field at points, side by ``sign``."""
        n = points.shape[0]
        rows = []
        for side in (-1, 1):
            sel = np.flatnonzero(sign == side)
            if sel.size:
                mat = self._bulk_interp(points[sel], side)
                rows.append((sel, mat))
        out = sp.csr_matrix((n, self.meshes_lim.coupled.n_nodes))
        for sel, mat in rows:
            scatter = sp.csr_matrix((np.ones(sel.size), (sel, np.arange(sel.size))), shape=(n, sel.size))
            out = out + scatter @ mat
        return out.tocsr()

    def _layer_rows(self):
        """Thin layer node index and the matching reference-box node index."""
        bulk = self.meshes_n.bulk
        k_lo, _ = self.meshes_n.layer_range
        layer, _, _ = self._zones
        nodes = np.flatnonzero(layer)
        lat = nodes // bulk.n_sheets
        j = bulk.node_multi_index[nodes, -1] - k_lo
        ref_nodes = lat * self.meshes_lim.ref_layer.n_sheets + j
        return nodes, ref_nodes

    @cached_property
    def velocity_matrix(self):
        """Scalar nodal matrix of ``P_n^v`` (thin nodes x coupled nodes)."""
        bulk = self.meshes_n.bulk
        ml = self.meshes_lim
        layer, _, _ = self._zones
        x = bulk.node_coords
        outside = np.flatnonzero(~layer)
        sign = np.where(x[outside, -1] < 0, -1, 1)
        ev = self._evaluate_bulk(x[outside], sign)
        nodes, ref_nodes = self._layer_rows()
        coupled = ml.ref_to_coupled[ref_nodes]
        n = bulk.n_nodes
        pick_out = sp.csr_matrix((np.ones(outside.size), (outside, np.arange(outside.size))), shape=(n, outside.size))
        lay = sp.csr_matrix((np.ones(nodes.size), (nodes, coupled)), shape=(n, ml.coupled.n_nodes))
        return (pick_out @ ev + lay).tocsr()

    @cached_property
    def displacement_bulk_matrix(self):
        """Scalar nodal matrix of the bulk zones of ``P_n^u`` (layer rows zero)."""
        bulk = self.meshes_n.bulk
        layer, collar, outer = self._zones
        x = bulk.node_coords
        n = bulk.n_nodes
        eps_n = self.q.eps
        blocks = []
        idx_outer = np.flatnonzero(outer)
        sign_o = np.where(x[idx_outer, -1] < 0, -1, 1)
        blocks.append((idx_outer, self._evaluate_bulk(x[idx_outer], sign_o)))
        idx_col = np.flatnonzero(collar)
        if idx_col.size:
            z = x[idx_col, -1]
            sign_c = np.where(z < 0, -1, 1)
            xi = cutoff_xi(z, self.eps0)
            shifted = x[idx_col].copy()
            shifted[:, -1] = z - sign_c * eps_n
            same = self._evaluate_bulk(x[idx_col], sign_c)
            moved = self._evaluate_bulk(shifted, sign_c)
            blocks.append((idx_col, sp.diags(xi) @ moved + sp.diags(1.0 - xi) @ same))
        out = sp.csr_matrix((n, self.meshes_lim.coupled.n_nodes))
        for rows, mat in blocks:
            scatter = sp.csr_matrix((np.ones(rows.size), (rows, np.arange(rows.size))), shape=(n, rows.size))
            out = out + scatter @ mat
        return out.tocsr()

    # auxiliary layer problem -----------------------------------------
    @cached_property
    def auxiliary(self):
        """Factorized operators of the auxiliary layer problem.

        On the reference box find ``w`` with ``w = u_B`` on both faces and
        ``(1/eps) int DW_{lam_n,mu_n}(e(eps,w)) : e(eps,psi)
        = int DW_{lam_bar,mu_bar}(q (x)_S e_d) : e(eps,psi)`` for test
        fields vanishing on the faces, ``q`` the normal derivative of ``u_B``.
        """
        ref = self.meshes_lim.ref_layer
        eps = self.q.eps
        cells = np.arange(ref.n_cells)
        sc = strain_scale(ref.dim, eps)
        fiber = strain_scale(ref.dim, 0.0)
        a = lame_matrix(ref, cells, self.q.lam / eps, self.q.mu / eps, sc, sc)
        b = lame_matrix(ref, cells, self.lp.lambda_bar, self.lp.mu_bar, sc, fiber)
        face = np.concatenate([ref.sheet_nodes(0), ref.sheet_nodes(ref.n_sheets - 1)])
        fixed = np.zeros(ref.n_dofs, dtype=bool)
        fixed[ref.dofs_of_nodes(face)] = True
        inner = np.flatnonzero(~fixed)
        bnd = np.flatnonzero(fixed)
        a = a.tocsr()
        lu = spla.splu(a[inner][:, inner].tocsc()) if inner.size else None
        return {
            "a": a,
            "b": b.tocsr(),
            "inner": inner,
            "boundary": bnd,
            "lu": lu,
        }

    def solve_auxiliary(self, u_layer):
        """Layer field ``u_{B,n}`` on the reference box (flat DOF vector)."""
        aux = self.auxiliary
        ub = np.asarray(u_layer, dtype=float).ravel()
        w = np.zeros_like(ub)
        inner, bnd = aux["inner"], aux["boundary"]
        w[bnd] = ub[bnd]
        if aux["lu"] is not None:
            rhs = (aux["b"] @ ub)[inner] - aux["a"][inner][:, bnd] @ ub[bnd]
            w[inner] = aux["lu"].solve(rhs)
        return w

    def auxiliary_residual(self, u_layer, w):
        aux = self.auxiliary
        ub = np.asarray(u_layer, dtype=float).ravel()
        inner = aux["inner"]
        res = (aux["a"] @ w - aux["b"] @ ub)[inner]
        scale = max(np.linalg.norm((aux["b"] @ ub)[inner]), np.linalg.norm((aux["a"] @ w)[inner]), 1e-300)
        return float(np.linalg.norm(res) / scale)


def project_velocity(ctx, v):
    """``P_n^v`` applied to a coupled-grid velocity vector."""
    d = ctx.meshes_n.bulk.dim
    vals = np.asarray(v, dtype=float).reshape(-1, d)
    return (ctx.velocity_matrix @ vals).ravel()


def project_displacement(ctx, u):
    """``P_n^u`` applied to a coupled-grid displacement vector."""
    mn, ml = ctx.meshes_n, ctx.meshes_lim
    d = mn.bulk.dim
    vals = np.asarray(u, dtype=float).reshape(-1, d)
    out = ctx.displacement_bulk_matrix @ vals
    layer_vals = vals[ml.ref_to_coupled]
    w = ctx.solve_auxiliary(layer_vals).reshape(-1, d)
    nodes, ref_nodes = ctx._layer_rows()
    out[nodes] = w[ref_nodes]
    out = out.ravel()
    out[ctx.thin_forms.dirichlet] = 0.0
    return out


def project_state(ctx, x):
    return ThinState(project_displacement(ctx, x.u), project_velocity(ctx, x.v))


def trotter_distance(ctx, x, xn):
    """``|P_n X - X_n|_n`` together with ``|X_n|_n`` and ``|P_n X|_n``."""
    px = project_state(ctx, x)
    f = ctx.thin_forms
    du, dv = px.u - xn.u, px.v - xn.v
    return f.energy_norm(du, dv), f.energy_norm(xn.u, xn.v), f.energy_norm(px.u, px.v)


@dataclass
class TrotterReport:
    """Per-step distances between a thin trajectory and the projected limit."""

    times: np.ndarray
    distance: np.ndarray
    thin_norm: np.ndarray
    limit_norm: np.ndarray
    projected_norm: np.ndarray

    @property
    def norm_gap(self):
        return np.abs(self.thin_norm - self.limit_norm)

    @property
    def sup_distance(self):
        return float(np.max(self.distance))

    @property
    def sup_norm_gap(self):
        return float(np.max(self.norm_gap))


def compare_trajectories(ctx, limit_traj, thin_traj):
    """Trotter distance and norm gap at every shared time node."""
    if limit_traj.times.shape != thin_traj.times.shape or not np.allclose(
        limit_traj.times, thin_traj.times, rtol=0, atol=1e-12
    ):
        raise ValueError("trajectories do not share their time grid")
    lf = ctx.limit_forms
    k = len(thin_traj)
    dist = np.zeros(k)
    tn = np.zeros(k)
    ln = np.zeros(k)
    pn = np.zeros(k)
    for i in range(k):
        x = limit_traj.state(i)
        xn = thin_traj.state(i)
        dist[i], tn[i], pn[i] = trotter_distance(ctx, x, xn)
        ln[i] = lf.energy_norm(x.u, x.v)
    return TrotterReport(thin_traj.times.copy(), dist, tn, ln, pn)


@dataclass
class NormProbeRow:
    n: int
    eps: float
    projected_norm: float
    limit_norm: float

    @property
    def gap(self):
        return abs(self.projected_norm - self.limit_norm)


@dataclass
class NormProbe:
    rows: list
    c_cap: float = C_CAP

    @property
    def bounded(self):
        return all(r.projected_norm <= self.c_cap * r.limit_norm + 1e-300 for r in self.rows) or all(
            r.limit_norm == 0 and r.projected_norm == 0 for r in self.rows
        )

    @property
    def gap_shrinks(self):
        return self.rows[-1].gap <= self.rows[0].gap

    @property
    def flags(self):
        out = []
        if not self.bounded:
            out.append("projection exceeds C_cap times the limit norm")
        if not self.gap_shrinks:
            out.append("last norm gap exceeds the first")
        return out


def norm_consistency_probe(ctxs, x, c_cap=C_CAP):
    """``|P_n X|_n`` for every context against ``|X|``."""
    rows = []
    for n, ctx in enumerate(ctxs):
        px = project_state(ctx, x)
        rows.append(
            NormProbeRow(
                n=n,
                eps=ctx.q.eps,
                projected_norm=ctx.thin_forms.energy_norm(px.u, px.v),
                limit_norm=ctx.limit_forms.energy_norm(x.u, x.v),
            )
        )
    return NormProbe(rows, c_cap)


def build_initial_data(ctx, x0_limit, xe0_limit, xe0_thin, thin_model, limit_model):
    """Compatible thin initial state.

    ``X_n^0 = X_n^e(0) + R_n P_n R (X^0 - X^e(0))`` with ``R`` and ``R_n``
    the unit-step resolvents of the limit and thin operators.

    Parameters
    ----------
    x0_limit, xe0_limit : State
        Limit datum and the limit lift state ``(u^e(0), 0)``.
    xe0_thin : State
        Thin lift state ``(u_n^e(0), 0)``.
    thin_model, limit_model : EvolutionModel
    """
    diff = x0_limit - xe0_limit
    lim = limit_model.resolvent(diff.u, diff.v, 1.0)
    from .limit import LimitState

    proj = project_state(ctx, LimitState(lim.u, lim.v))
    thin = thin_model.resolvent(proj.u, proj.v, 1.0)
    return ThinState(xe0_thin.u + thin.u, xe0_thin.v + thin.v)


def compatible_limit_data(x0_limit, xe0_limit, limit_model):
    """Limit datum matching :func:`build_initial_data`: ``X^e(0) + R R (X^0 - X^e(0))``.

    The thin datum approaches ``P_n`` of this state as ``n`` grows, because
    ``R_n P_n`` approaches ``P_n R``.
    """
    from .limit import LimitState

    diff = x0_limit - xe0_limit
    once = limit_model.resolvent(diff.u, diff.v, 1.0)
    twice = limit_model.resolvent(once.u, once.v, 1.0)
    return LimitState(xe0_limit.u + twice.u, xe0_limit.v + twice.v)
