"""Assembly of stiffness, mass, dissipation and load operators.

Both models live on a tensor grid: the thin model on the layer-resolving bulk
mesh, the limit model on the coupled grid where the reference box is glued
between the two bulk halves. Every bilinear form is a Lamé-type integral
between two (possibly scaled) strain operators, so one element kernel serves
every strain variant through a per-axis derivative scale.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .geometry import LAYER, MINUS_BULK, PLUS_BULK, COORD_TOL, MeshError, strain_scale
from .materials import (
    BulkDensity,
    DissipationSpec,
    ElasticLaw,
    MaterialError,
    recession_spec,
)

logger = logging.getLogger(__name__)


class LoadError(ValueError):
    """Raised for loads that violate the support restrictions."""


# --------------------------------------------------------------------------
# low-level assembly
# --------------------------------------------------------------------------
def assemble(grid, ke, cells=None):
    """Scatter element matrices into a CSR matrix.

    Duplicate entries are summed in a fixed order, so repeated assemblies of
    the same input are bit-identical.
    """
    dofs = grid.cell_dofs if cells is None else grid.cell_dofs[cells]
    nloc = dofs.shape[1]
    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    mat = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(grid.n_dofs, grid.n_dofs))
    return mat.tocsr()


def lame_matrix(grid, cells, lam, mu, scale_test=None, scale_trial=None):
    """``int DW_{lam,mu}(E_trial v) : E_test w`` over the given cells.

    ``scale_*`` are derivative scalings (one factor per axis); ``None`` means
    the physical strain.
    """
    cells = np.asarray(cells)
    g1 = grid.scaled_gradients(scale_test)[cells]
    g2 = g1 if scale_trial is scale_test else grid.scaled_gradients(scale_trial)[cells]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (cells.size,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (cells.size,))
    ke = _kernels.elastic_elements(g1, g2, grid.wdet[cells], lam, mu)
    return assemble(grid, ke, cells)


def mass_matrix(grid, cells, rho):
    cells = np.asarray(cells)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (cells.size,))
    ke = _kernels.mass_elements(grid.shape_values, grid.wdet[cells], rho, grid.dim)
    return assemble(grid, ke, cells)


def strain_matrix(grid, cells, scale=None):
    """Sparse map from DOFs to strain entries at Gauss points.

    Returns
    -------
    op : csr_matrix, shape (ncell*nq*d*d, n_dofs)
    weights : ndarray, shape (ncell*nq,)
    """
    cells = np.asarray(cells)
    d = grid.dim
    g = grid.scaled_gradients(scale)[cells]  # (nc, nq, nloc, d)
    nc, nq, nloc, _ = g.shape
    dofs = grid.cell_dofs[cells].reshape(nc, nloc, d)
    eye = np.eye(d)
    # E_ij from dof (a, c): 0.5 (delta_ic g_aj + delta_jc g_ai)
    vals = 0.5 * (
        eye[None, None, None, :, :, None] * g[:, :, :, None, None, :]
        + eye[None, None, None, :, None, :] * g[:, :, :, None, :, None]
    )  # (nc, nq, nloc, c, i, j)
    row_base = (np.arange(nc)[:, None] * nq + np.arange(nq)[None, :]) * d * d
    rows = row_base[:, :, None, None, None, None] + (
        np.arange(d)[:, None] * d + np.arange(d)[None, :]
    )[None, None, None, None, :, :]
    rows = np.broadcast_to(rows, vals.shape)
    cols = np.broadcast_to(dofs[:, None, :, :, None, None], vals.shape)
    op = sp.coo_matrix(
        (vals.ravel(), (rows.ravel(), cols.ravel())), shape=(nc * nq * d * d, grid.n_dofs)
    ).tocsr()
    op.eliminate_zeros()
    return op, grid.wdet[cells].ravel()


def cells_of_kind(grid, *kinds):
    return np.flatnonzero(np.isin(grid.cell_kinds, kinds))


# --------------------------------------------------------------------------
# dissipation operator
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DissipationOperator:
    """``coefficient * sum_q w_q D_eta(E_q v)`` over layer Gauss points."""

    strain_op: sp.csr_matrix
    weights: np.ndarray
    coefficient: float
    spec: DissipationSpec
    dim: int

    def strains(self, v):
        d = self.dim
        return (self.strain_op @ v).reshape(-1, d, d)

    def _eval(self, v):
        return _kernels.dissipation(
            self.strains(v), self.spec.coefs, self.spec.exponents, self.spec.eta
        )

    def value(self, v):
        val, _, _ = self._eval(v)
        return self.coefficient * float(np.dot(self.weights, val))

    def gradient(self, v):
        _, grad, _ = self._eval(v)
        flux = (self.weights[:, None, None] * grad).ravel()
        return self.coefficient * (self.strain_op.T @ flux)

    def value_grad_hess(self, v):
        val, grad, hess = self._eval(v)
        d2 = self.dim * self.dim
        nq = val.size
        value = self.coefficient * float(np.dot(self.weights, val))
        flux = (self.weights[:, None, None] * grad).ravel()
        gradient = self.coefficient * (self.strain_op.T @ flux)
        blocks = (self.coefficient * self.weights)[:, None, None] * hess
        base = np.arange(nq)[:, None, None] * d2
        rows = np.broadcast_to(base + np.arange(d2)[None, :, None], blocks.shape)
        cols = np.broadcast_to(base + np.arange(d2)[None, None, :], blocks.shape)
        mid = sp.coo_matrix(
            (blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(nq * d2, nq * d2)
        ).tocsr()
        hessian = (self.strain_op.T @ mid @ self.strain_op).tocsr()
        return value, gradient, hessian

    @cached_property
    def quadratic_matrix(self):
        """Constant Hessian when the profile is exactly quadratic."""
        if not self.spec.is_quadratic:
            raise MaterialError("dissipation is not quadratic")
        curv = 2.0 * sum(c for c, k in self.spec.profile if k == 2.0)
        w = np.repeat(self.coefficient * curv * self.weights, self.dim * self.dim)
        return (self.strain_op.T @ sp.diags(w) @ self.strain_op).tocsr()


# --------------------------------------------------------------------------
# loads
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class LoadProfile:
    """Scalar time profile with two bounded derivatives.

    kinds: ``zero``, ``const``, ``linear`` (``scale * t``), ``sine``
    (``scale * sin(omega t)``) and ``ramp`` (cosine ramp reaching ``scale``
    at ``t_ramp`` and constant afterwards).
    """

    kind: str = "const"
    scale: float = 1.0
    omega: float = 1.0
    t_ramp: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "const", "linear", "sine", "ramp"):
            raise LoadError(f"unknown load profile {self.kind!r}")

    def value(self, t):
        s = self.scale
        if self.kind == "zero":
            return 0.0
        if self.kind == "const":
            return s
        if self.kind == "linear":
            return s * t
        if self.kind == "sine":
            return s * math.sin(self.omega * t)
        if t >= self.t_ramp:
            return s
        return 0.5 * s * (1.0 - math.cos(math.pi * max(t, 0.0) / self.t_ramp))

    def derivative(self, t):
        s = self.scale
        if self.kind in ("zero", "const"):
            return 0.0
        if self.kind == "linear":
            return s
        if self.kind == "sine":
            return s * self.omega * math.cos(self.omega * t)
        if t >= self.t_ramp or t < 0:
            return 0.0
        w = math.pi / self.t_ramp
        return 0.5 * s * w * math.sin(w * t)

    def to_dict(self):
        return {"kind": self.kind, "scale": self.scale, "omega": self.omega, "t_ramp": self.t_ramp}


@dataclass(frozen=True)
class TractionLoad:
    """Uniform traction vector on the Neumann patches times a time profile."""

    vector: tuple
    profile: LoadProfile = field(default_factory=LoadProfile)

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(x) for x in self.vector))


@dataclass(frozen=True)
class BodyForce:
    """Spatially uniform body force, piecewise constant in time.

    ``pieces`` is a tuple of ``(t_start, t_end, vector)``; outside every
    piece the force vanishes.
    """

    pieces: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "pieces",
            tuple((float(a), float(b), tuple(float(x) for x in v)) for a, b, v in self.pieces),
        )

    def average(self, t0, t1, dim):
        """Exact mean of the force over ``[t0, t1]``."""
        out = np.zeros(dim)
        for a, b, vec in self.pieces:
            overlap = min(b, t1) - max(a, t0)
            if overlap > 0:
                out += overlap * np.asarray(vec)
        return out / (t1 - t0)

    @property
    def is_zero(self):
        return all(not any(v) for _, _, v in self.pieces)


def traction_vector(meshes, grid, load):
    """Spatial part ``int_{Gamma_N} g . v`` as a DOF vector.

    Raises
    ------
    LoadError
        If a Neumann patch touches the closed collar.
    """
    cfg = meshes.config
    bad = cfg.neumann_touches_collar()
    if bad:
        raise LoadError("traction supported inside the collar |x_d| <= eps0")
    g = np.asarray(load.vector, dtype=float)
    if g.size != grid.dim:
        raise LoadError("traction vector has the wrong dimension")
    out = np.zeros((grid.n_nodes, grid.dim))
    for patch in cfg.neumann_patches:
        nodes, areas = meshes.patch_faces(grid, patch)
        if nodes.size and np.any(np.abs(grid.node_coords[nodes, -1]) <= cfg.eps0 + COORD_TOL):
            raise LoadError("traction supported inside the collar |x_d| <= eps0")
        # Q1 face shape functions integrate to area / 2^(d-1)
        share = areas / nodes.shape[1]
        np.add.at(out, nodes.ravel(), np.repeat(share, nodes.shape[1])[:, None] * g[None, :])
    return out.ravel()


def load_vector(load, meshes, grid, t):
    """Neumann load functional ``L(t)`` as a DOF vector."""
    if load is None:
        return np.zeros(grid.n_dofs)
    return load.profile.value(t) * traction_vector(meshes, grid, load)


# --------------------------------------------------------------------------
# forms
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Forms:
    """Assembled operators of one model.

    Attributes
    ----------
    kind : {"thin", "limit"}
    grid : TensorGrid
    phi, k : csr_matrix
        Stiffness and mass on the full DOF vector.
    dirichlet : ndarray of bool
        Prescribed displacement DOFs.
    dissipation : DissipationOperator or None
    velocity_basis : csr_matrix
        Columns span the admissible resolvent velocities (free DOFs, and one
        DOF per fiber for the frozen-jump limit).
    force_mass : csr_matrix
        Unit-density mass over the cells where body forces act.
    """

    kind: str
    meshes: object
    grid: object
    phi: sp.csr_matrix
    k: sp.csr_matrix
    dirichlet: np.ndarray
    dissipation: DissipationOperator
    velocity_basis: sp.csr_matrix
    force_mass: sp.csr_matrix
    frozen: bool = False

    @property
    def n_dofs(self):
        return self.grid.n_dofs

    @cached_property
    def free(self):
        return np.flatnonzero(~self.dirichlet)

    def energy_sq(self, u, v):
        return float(u @ (self.phi @ u) + v @ (self.k @ v))

    def energy_norm(self, u, v):
        return math.sqrt(max(self.energy_sq(u, v), 0.0))

    def inner(self, u1, v1, u2, v2):
        return float(u1 @ (self.phi @ u2) + v1 @ (self.k @ v2))

    @cached_property
    def mass_factor(self):
        return spla.splu(self.k.tocsc())

    @cached_property
    def stiffness_factor(self):
        free = self.free
        return spla.splu(self.phi[free][:, free].tocsc())


def symmetrized(mat):
    """``(A + A^T) / 2``; removes roundoff asymmetry from the element sums."""
    mat = mat.tocsr()
    return (0.5 * (mat + mat.T)).tocsr()


def _free_basis(mask):
    free = np.flatnonzero(~mask)
    n = mask.size
    return sp.csr_matrix((np.ones(free.size), (free, np.arange(free.size))), shape=(n, free.size))


def _bulk_lame(grid, cells, law):
    kinds = grid.cell_kinds[cells]
    lam = np.where(kinds == MINUS_BULK, law.lam_minus, law.lam_plus)
    mu = np.where(kinds == MINUS_BULK, law.mu_minus, law.mu_plus)
    return lam, mu


def _bulk_rho(grid, cells, density):
    kinds = grid.cell_kinds[cells]
    return np.where(kinds == MINUS_BULK, density.minus, density.plus)


def assemble_thin_forms(q, meshes, law=None, density=None, spec=None):
    """Forms of the positive-thickness problem on the layer-resolving mesh.

    Parameters
    ----------
    q : QuintupleParams
        ``q.eps`` must equal the mesh layer half-thickness.
    meshes : DomainMeshes
    law : ElasticLaw
    density : BulkDensity
    spec : DissipationSpec, optional
        Layer dissipation; ``None`` or ``q.b`` irrelevant gives no dissipation.
    """
    law = ElasticLaw() if law is None else law
    density = BulkDensity() if density is None else density
    q.validate()
    law.validate(meshes.config.dim)
    density.validate()
    grid = meshes.bulk
    k_lo, k_hi = meshes.layer_range
    z = grid.coords[-1]
    if not (np.isclose(z[k_lo], -q.eps, rtol=0, atol=1e-12) and np.isclose(z[k_hi], q.eps, rtol=0, atol=1e-12)):
        raise MeshError("bulk mesh does not conform to the layer thickness")
    bulk = cells_of_kind(grid, MINUS_BULK, PLUS_BULK)
    layer = cells_of_kind(grid, LAYER)
    lam, mu = _bulk_lame(grid, bulk, law)
    phi = lame_matrix(grid, bulk, lam, mu) + lame_matrix(grid, layer, q.lam, q.mu)
    k = mass_matrix(grid, bulk, _bulk_rho(grid, bulk, density)) + mass_matrix(grid, layer, q.rho)
    diss = None
    if spec is not None:
        spec.validate()
        op, w = strain_matrix(grid, layer)
        diss = DissipationOperator(op, w, q.b, spec, grid.dim)
    mask = meshes.dirichlet_mask(grid)
    all_cells = np.arange(grid.n_cells)
    return Forms(
        kind="thin",
        meshes=meshes,
        grid=grid,
        phi=symmetrized(phi),
        k=symmetrized(k),
        dirichlet=mask,
        dissipation=diss,
        velocity_basis=_free_basis(mask),
        force_mass=mass_matrix(grid, all_cells, 1.0),
    )


def fiber_basis(meshes, mask):
    """Velocity basis with one DOF per fiber and component inside the layer."""
    grid = meshes.coupled
    d = grid.dim
    c_lo, c_hi = meshes.coupled_range
    sheet = grid.node_multi_index[:, -1]
    lateral = np.arange(grid.n_nodes) // grid.n_sheets
    in_layer = (sheet >= c_lo) & (sheet <= c_hi)
    # group id per node: fibers first, then remaining nodes
    group = np.empty(grid.n_nodes, dtype=int)
    group[in_layer] = lateral[in_layer]
    others = np.flatnonzero(~in_layer)
    group[others] = grid.n_lateral + np.arange(others.size)
    rows = np.arange(grid.n_dofs)
    cols = np.repeat(group, d) * d + np.tile(np.arange(d), grid.n_nodes)
    n_groups = grid.n_lateral + others.size
    basis = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(grid.n_dofs, n_groups * d))
    # drop columns touching prescribed DOFs
    fixed = np.asarray(basis[mask].sum(axis=0)).ravel() > 0
    keep = np.flatnonzero(~fixed)
    return basis[:, keep].tocsr()


def assemble_limit_forms(lp, meshes, law=None, density=None, spec=None):
    """Forms of the limit problem on the coupled grid.

    The bulk carries the elastic law; the reference box carries the fiber
    form ``mu_bar |q_lat|^2 + (lambda_bar + 2 mu_bar) q_d^2`` with
    ``q = d u_B / d s`` and mass ``rho_bar``. Interface traces are shared
    DOFs. With ``b_bar = inf`` the resolvent velocities are restricted to
    fiber-constant layer fields.
    """
    law = ElasticLaw() if law is None else law
    density = BulkDensity() if density is None else density
    lp.validate()
    law.validate(meshes.config.dim)
    density.validate()
    grid = meshes.coupled
    bulk = cells_of_kind(grid, MINUS_BULK, PLUS_BULK)
    layer = cells_of_kind(grid, LAYER)
    fiber = strain_scale(grid.dim, 0.0)
    lam, mu = _bulk_lame(grid, bulk, law)
    phi = lame_matrix(grid, bulk, lam, mu) + lame_matrix(
        grid, layer, lp.lambda_bar, lp.mu_bar, fiber, fiber
    )
    k = mass_matrix(grid, bulk, _bulk_rho(grid, bulk, density)) + mass_matrix(grid, layer, lp.rho_bar)
    mask = meshes.dirichlet_mask(grid)
    diss = None
    if lp.frozen:
        basis = fiber_basis(meshes, mask)
    else:
        basis = _free_basis(mask)
        if spec is not None and lp.b_bar > 0:
            spec.validate()
            op, w = strain_matrix(grid, layer, fiber)
            diss = DissipationOperator(op, w, lp.b_bar, recession_spec(spec), grid.dim)
    return Forms(
        kind="limit",
        meshes=meshes,
        grid=grid,
        phi=symmetrized(phi),
        k=symmetrized(k),
        dirichlet=mask,
        dissipation=diss,
        velocity_basis=basis,
        force_mass=mass_matrix(grid, bulk, 1.0),
        frozen=lp.frozen,
    )
