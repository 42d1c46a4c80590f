"""Structured Q1 meshes for the bulk, the thin layer, the reference box and the
split bulk, plus the layer rescaling and interface trace utilities.

Conventions
-----------
* The normal axis is the last axis and the interface plane sits at 0.
* Nodes are numbered in C order over the per-axis sheet indices, so the
  normal index runs fastest and every fiber (fixed lateral position) is a
  contiguous block of nodes.
* Vector DOFs are interleaved: ``dof = node * dim + component``.
"""

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

GAUSS_POINT = 1.0 / math.sqrt(3.0)
COORD_TOL = 1e-10

# cell kinds along the normal direction
MINUS_BULK, LAYER, PLUS_BULK = 0, 1, 2


class MeshError(ValueError):
    """Raised for inconsistent domain descriptions or mismatched grids."""


# --------------------------------------------------------------------------
# reference element
# --------------------------------------------------------------------------
def _reference_element(dim):
    corners = np.array(list(itertools.product((0, 1), repeat=dim)), dtype=float)
    points = np.array(
        list(itertools.product((-GAUSS_POINT, GAUSS_POINT), repeat=dim)),
        dtype=float,
    )
    sgn = 2.0 * corners - 1.0
    fac = 0.5 * (1.0 + sgn[None, :, :] * points[:, None, :])  # (nq, nloc, d)
    shape = np.prod(fac, axis=2)
    dshape = np.empty(fac.shape)
    for j in range(dim):
        others = np.delete(fac, j, axis=2)
        dshape[:, :, j] = 0.5 * sgn[None, :, j] * np.prod(others, axis=2)
    return corners.astype(int), points, shape, dshape


# --------------------------------------------------------------------------
# tensor grids
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Tensor-product grid of Q1 cells.

    Parameters
    ----------
    name : str
        Mesh identifier used in dumps and field checks.
    coords : tuple of ndarray
        Strictly increasing node coordinates per axis. These are the
        coordinates used for integration.
    phys_normal : ndarray, optional
        Physical position of each normal sheet when it differs from the
        integration coordinate (the coupled limit grid stores the layer in
        reference coordinates but places it on the interface).
    cell_kind : ndarray of int, optional
        Label per normal cell (``MINUS_BULK``, ``LAYER``, ``PLUS_BULK``).
    """

    name: str
    coords: tuple
    phys_normal: np.ndarray = None
    cell_kind: np.ndarray = None

    def __post_init__(self):
        coords = tuple(np.asarray(c, dtype=float) for c in self.coords)
        for c in coords:
            if c.ndim != 1 or c.size < 2 or np.any(np.diff(c) <= 0):
                raise MeshError(f"{self.name}: axis coordinates must increase")
        object.__setattr__(self, "coords", coords)
        if self.phys_normal is None:
            object.__setattr__(self, "phys_normal", coords[-1].copy())
        if self.cell_kind is None:
            object.__setattr__(
                self, "cell_kind", np.zeros(coords[-1].size - 1, dtype=int)
            )

    @property
    def dim(self):
        return len(self.coords)

    @property
    def shape(self):
        return tuple(c.size for c in self.coords)

    @property
    def cell_shape(self):
        return tuple(c.size - 1 for c in self.coords)

    @property
    def n_nodes(self):
        return int(np.prod(self.shape))

    @property
    def n_cells(self):
        return int(np.prod(self.cell_shape))

    @property
    def n_dofs(self):
        return self.n_nodes * self.dim

    @property
    def n_lateral(self):
        return int(np.prod(self.shape[:-1]))

    @property
    def n_sheets(self):
        return self.shape[-1]

    @cached_property
    def _ref(self):
        return _reference_element(self.dim)

    @property
    def shape_values(self):
        """Shape functions at Gauss points, shape (nq, nloc)."""
        return self._ref[2]

    @cached_property
    def cell_multi_index(self):
        return np.array(np.unravel_index(np.arange(self.n_cells), self.cell_shape)).T

    @cached_property
    def cell_nodes(self):
        corners = self._ref[0]
        multi = self.cell_multi_index[:, None, :] + corners[None, :, :]
        return np.ravel_multi_index(tuple(multi.transpose(2, 0, 1)), self.shape)

    @cached_property
    def cell_dofs(self):
        d = self.dim
        nodes = self.cell_nodes
        return (nodes[:, :, None] * d + np.arange(d)[None, None, :]).reshape(
            nodes.shape[0], -1
        )

    @cached_property
    def cell_sizes(self):
        steps = [np.diff(c) for c in self.coords]
        return np.stack(
            [steps[j][self.cell_multi_index[:, j]] for j in range(self.dim)], axis=1
        )

    @cached_property
    def cell_normal_index(self):
        return self.cell_multi_index[:, -1]

    @cached_property
    def cell_kinds(self):
        return self.cell_kind[self.cell_normal_index]

    @cached_property
    def wdet(self):
        """Quadrature weight times Jacobian, shape (ncell, nq)."""
        vol = np.prod(self.cell_sizes, axis=1) / 2.0**self.dim
        return np.repeat(vol[:, None], 2**self.dim, axis=1)

    @cached_property
    def gradients(self):
        """Physical shape gradients, shape (ncell, nq, nloc, d)."""
        dshape = self._ref[3]
        inv = 2.0 / self.cell_sizes
        return dshape[None, :, :, :] * inv[:, None, None, :]

    def scaled_gradients(self, scale=None):
        """Gradients with each derivative direction multiplied by ``scale``.

        ``scale`` is either one factor per axis or one row per cell.
        """
        if scale is None:
            return self.gradients
        scale = np.asarray(scale, dtype=float)
        if scale.ndim == 1:
            return self.gradients * scale[None, None, None, :]
        return self.gradients * scale[:, None, None, :]

    @cached_property
    def node_multi_index(self):
        return np.array(np.unravel_index(np.arange(self.n_nodes), self.shape)).T

    @cached_property
    def comp_node_coords(self):
        mi = self.node_multi_index
        return np.stack([self.coords[j][mi[:, j]] for j in range(self.dim)], axis=1)

    @cached_property
    def node_coords(self):
        """Physical node coordinates, shape (n_nodes, d)."""
        x = self.comp_node_coords.copy()
        x[:, -1] = self.phys_normal[self.node_multi_index[:, -1]]
        return x

    @cached_property
    def quadrature_points(self):
        """Integration-coordinate Gauss points, shape (ncell, nq, d)."""
        pts = self._ref[1]
        lo = np.stack(
            [self.coords[j][self.cell_multi_index[:, j]] for j in range(self.dim)],
            axis=1,
        )
        return lo[:, None, :] + 0.5 * (pts[None, :, :] + 1.0) * self.cell_sizes[:, None, :]

    def sheet_nodes(self, k):
        """Node indices of normal sheet ``k`` in lateral order."""
        return np.arange(self.n_lateral) * self.n_sheets + k

    def fibers(self, values):
        """View nodal values as (n_lateral, n_sheets, ...)."""
        values = np.asarray(values)
        return values.reshape((self.n_lateral, self.n_sheets) + values.shape[1:])

    def dofs_of_nodes(self, nodes):
        nodes = np.asarray(nodes, dtype=int)
        return (nodes[:, None] * self.dim + np.arange(self.dim)[None, :]).ravel()

    # boundary faces ------------------------------------------------------
    def boundary_faces(self, axis, side):
        """Faces on one side of the box.

        Returns
        -------
        nodes : ndarray, shape (nface, 2**(d-1))
        areas : ndarray, shape (nface,)
            Measured in integration coordinates.
        """
        corners = self._ref[0]
        k = 0 if side == "lo" else self.cell_shape[axis] - 1
        sel = self.cell_multi_index[:, axis] == k
        keep = corners[:, axis] == (0 if side == "lo" else 1)
        nodes = self.cell_nodes[sel][:, keep]
        sizes = np.delete(self.cell_sizes[sel], axis, axis=1)
        areas = np.prod(sizes, axis=1) if sizes.shape[1] else np.ones(sel.sum())
        return nodes, areas

    def interpolation_matrix(self, points):
        """Sparse Q1 interpolation at integration-coordinate points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        npts = points.shape[0]
        idx = []
        loc = []
        for j, c in enumerate(self.coords):
            x = points[:, j]
            if np.any(x < c[0] - COORD_TOL) or np.any(x > c[-1] + COORD_TOL):
                raise MeshError(f"{self.name}: interpolation point outside grid")
            i = np.clip(np.searchsorted(c, x, side="right") - 1, 0, c.size - 2)
            t = np.clip((x - c[i]) / (c[i + 1] - c[i]), 0.0, 1.0)
            idx.append(i)
            loc.append(t)
        corners = self._ref[0]
        rows, cols, vals = [], [], []
        for corner in corners:
            w = np.ones(npts)
            multi = []
            for j in range(self.dim):
                w = w * (loc[j] if corner[j] else 1.0 - loc[j])
                multi.append(idx[j] + corner[j])
            rows.append(np.arange(npts))
            cols.append(np.ravel_multi_index(tuple(multi), self.shape))
            vals.append(w)
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(npts, self.n_nodes),
        ).tocsr()
        mat.eliminate_zeros()
        return mat


def vector_operator(scalar_op, dim):
    """Lift a scalar nodal operator to interleaved vector DOFs."""
    return sp.kron(scalar_op, sp.identity(dim), format="csr")


# --------------------------------------------------------------------------
# nodal fields
# --------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NodalField:
    """Vector-valued nodal coefficients on a named mesh."""

    mesh: str
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise MeshError("nodal field must be (n_nodes, n_components)")
        if not np.all(np.isfinite(vals)):
            raise MeshError("nodal field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def n_nodes(self):
        return self.values.shape[0]

    @property
    def n_components(self):
        return self.values.shape[1]

    @property
    def flat(self):
        return self.values.ravel()

    @classmethod
    def from_flat(cls, mesh, vec, dim):
        return cls(mesh, np.asarray(vec, dtype=float).reshape(-1, dim))


# --------------------------------------------------------------------------
# domain description
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryPatch:
    """Selector for faces on one side of the box.

    Parameters
    ----------
    axis : int
        Axis normal to the selected faces.
    side : {"lo", "hi"}
    bounds : tuple
        Per axis either ``None`` (unrestricted) or a tuple of closed intervals;
        a face is selected when, on every restricted axis, all its nodes lie in
        one of the intervals. The entry at ``axis`` is ignored.
    """

    axis: int
    side: str
    bounds: tuple = ()

    def __post_init__(self):
        if self.side not in ("lo", "hi"):
            raise MeshError(f"patch side must be 'lo' or 'hi', got {self.side!r}")
        norm = tuple(
            None if b is None else tuple((float(a), float(c)) for a, c in b)
            for b in self.bounds
        )
        object.__setattr__(self, "bounds", norm)

    def _axis_bounds(self, j):
        if j == self.axis or j >= len(self.bounds):
            return None
        return self.bounds[j]

    def face_mask(self, face_coords):
        """Boolean mask over faces given node coordinates (nface, nvert, d)."""
        keep = np.ones(face_coords.shape[0], dtype=bool)
        for j in range(face_coords.shape[2]):
            intervals = self._axis_bounds(j)
            if intervals is None:
                continue
            lo = face_coords[:, :, j].min(axis=1)
            hi = face_coords[:, :, j].max(axis=1)
            inside = np.zeros_like(keep)
            for a, b in intervals:
                inside |= (lo >= a - COORD_TOL) & (hi <= b + COORD_TOL)
            keep &= inside
        return keep

    def normal_span(self, extents):
        """Closed intervals of the normal coordinate the patch may touch."""
        d = len(extents)
        if self.axis == d - 1:
            z = extents[-1][0] if self.side == "lo" else extents[-1][1]
            return ((z, z),)
        intervals = self._axis_bounds(d - 1)
        if intervals is None:
            return (tuple(extents[-1]),)
        return intervals

    def to_dict(self):
        return {
            "axis": self.axis,
            "side": self.side,
            "bounds": [None if b is None else [list(iv) for iv in b] for b in self.bounds],
        }

    @classmethod
    def from_dict(cls, data):
        bounds = tuple(
            None if b is None else tuple(tuple(iv) for iv in b)
            for b in data.get("bounds", ())
        )
        return cls(axis=int(data["axis"]), side=data["side"], bounds=bounds)


def _default_dirichlet():
    return (BoundaryPatch(0, "lo", (None, ((-1.0, -0.6), (0.6, 1.0)))),)


def _default_neumann():
    return (BoundaryPatch(1, "hi", ()),)


@dataclass(frozen=True)
class DomainConfig:
    """Box domain with a thin layer around the plane ``x_d = 0``.

    Parameters
    ----------
    dim : int
        2 or 3.
    extents : tuple of (lo, hi)
        Box extents per axis; the last axis is the layer normal.
    eps0 : float
        Half-thickness of the collar around the interface.
    eps : float
        Current layer half-thickness, ``0 < eps < eps0``.
    h_bulk : float
        Target cell size outside the layer.
    m_layer, m_refbox : int
        Cells across the physical layer and across the reference box.
    dirichlet_patches, neumann_patches : tuple of BoundaryPatch
    """

    dim: int = 2
    extents: tuple = ((0.0, 1.0), (-1.0, 1.0))
    eps0: float = 0.5
    eps: float = 0.25
    h_bulk: float = 0.125
    m_layer: int = 4
    m_refbox: int = 4
    dirichlet_patches: tuple = field(default_factory=_default_dirichlet)
    neumann_patches: tuple = field(default_factory=_default_neumann)

    def __post_init__(self):
        object.__setattr__(
            self, "extents", tuple((float(a), float(b)) for a, b in self.extents)
        )
        object.__setattr__(self, "dirichlet_patches", tuple(self.dirichlet_patches))
        object.__setattr__(self, "neumann_patches", tuple(self.neumann_patches))

    def with_eps(self, eps):
        return dataclasses.replace(self, eps=float(eps))

    def validate(self):
        if self.dim not in (2, 3):
            raise MeshError("dim must be 2 or 3")
        if len(self.extents) != self.dim:
            raise MeshError("extents must list one interval per axis")
        for a, b in self.extents:
            if not b > a:
                raise MeshError("extents must be increasing intervals")
        if not self.eps0 > 0:
            raise MeshError("eps0 must be positive")
        if not 0 < self.eps:
            raise MeshError("eps must be positive")
        if self.eps >= self.eps0:
            raise MeshError("eps >= eps0: layer must sit strictly inside the collar")
        lo, hi = self.extents[-1]
        if not (-lo > self.eps0 and hi > self.eps0):
            raise MeshError("eps0 must be smaller than the bulk half-extent")
        if self.h_bulk <= 0 or self.m_layer < 1 or self.m_refbox < 1:
            raise MeshError("mesh resolution parameters must be positive")
        if not self.dirichlet_patches:
            raise MeshError("empty Dirichlet boundary")
        for patch in self.dirichlet_patches + self.neumann_patches:
            if not 0 <= patch.axis < self.dim:
                raise MeshError("patch axis out of range")
        for patch in self.dirichlet_patches:
            if self._touches_collar(patch):
                raise MeshError("Dirichlet patch inside collar |x_d| <= eps0")

    def _touches_collar(self, patch):
        for a, b in patch.normal_span(self.extents):
            if b >= -self.eps0 - COORD_TOL and a <= self.eps0 + COORD_TOL:
                return True
        return False

    def neumann_touches_collar(self):
        return [p for p in self.neumann_patches if self._touches_collar(p)]


def _cells(length, h):
    return max(1, int(math.ceil(length / h - 1e-9)))


def lateral_coords(config):
    return [
        np.linspace(a, b, _cells(b - a, config.h_bulk) + 1)
        for a, b in config.extents[:-1]
    ]


def _segment(a, b, n):
    return np.linspace(a, b, n + 1)


def split_normal_sheets(config):
    """Normal sheets of the split bulk: (minus part, plus part)."""
    lo, hi = config.extents[-1]
    e0 = config.eps0
    n_col = _cells(e0, config.h_bulk)
    minus = np.concatenate(
        [_segment(lo, -e0, _cells(-e0 - lo, config.h_bulk))[:-1], _segment(-e0, 0.0, n_col)]
    )
    plus = np.concatenate(
        [_segment(0.0, e0, n_col)[:-1], _segment(e0, hi, _cells(hi - e0, config.h_bulk))]
    )
    return minus, plus


def thin_normal_sheets(config):
    """Normal sheets of the layer-resolving bulk mesh and the layer slice."""
    lo, hi = config.extents[-1]
    e0, e = config.eps0, config.eps
    n_col = _cells(e0, config.h_bulk)
    parts = [
        _segment(lo, -e0, _cells(-e0 - lo, config.h_bulk))[:-1],
        _segment(-e0, -e, n_col)[:-1],
        _segment(-e, e, config.m_layer)[:-1],
        _segment(e, e0, n_col)[:-1],
        _segment(e0, hi, _cells(hi - e0, config.h_bulk)),
    ]
    sheets = np.concatenate(parts)
    k_lo = parts[0].size + parts[1].size
    return sheets, k_lo, k_lo + config.m_layer


@dataclass(frozen=True, eq=False)
class DomainMeshes:
    """All meshes for one layer thickness and the matching limit meshes.

    Attributes
    ----------
    bulk : TensorGrid
        Layer-resolving mesh of the whole box.
    layer_range : (int, int)
        Normal sheet indices of ``x_d = -eps`` and ``x_d = +eps`` in ``bulk``.
    layer : TensorGrid
        Mesh of the physical layer ``S x (-eps, eps)``.
    ref_layer : TensorGrid
        Mesh of the reference box ``S x (-1, 1)``.
    split_minus, split_plus : TensorGrid
        The two halves of the bulk with duplicated interface sheets.
    coupled : TensorGrid
        Limit grid: split bulk and reference box glued at shared interface
        sheets; its normal integration coordinate runs through the bulk below,
        the box shifted to ``[0, 2]`` and the bulk above shifted by 2.
    """

    config: DomainConfig
    bulk: TensorGrid
    layer_range: tuple
    layer: TensorGrid
    ref_layer: TensorGrid
    split_minus: TensorGrid
    split_plus: TensorGrid
    coupled: TensorGrid
    coupled_range: tuple

    # node maps ---------------------------------------------------------
    @cached_property
    def layer_to_bulk(self):
        k_lo, k_hi = self.layer_range
        lat = np.arange(self.bulk.n_lateral)[:, None] * self.bulk.n_sheets
        return (lat + np.arange(k_lo, k_hi + 1)[None, :]).ravel()

    @cached_property
    def minus_to_coupled(self):
        n = self.split_minus.n_sheets
        lat = np.arange(self.coupled.n_lateral)[:, None] * self.coupled.n_sheets
        return (lat + np.arange(n)[None, :]).ravel()

    @cached_property
    def ref_to_coupled(self):
        k_lo, k_hi = self.coupled_range
        lat = np.arange(self.coupled.n_lateral)[:, None] * self.coupled.n_sheets
        return (lat + np.arange(k_lo, k_hi + 1)[None, :]).ravel()

    @cached_property
    def plus_to_coupled(self):
        k_hi = self.coupled_range[1]
        n = self.split_plus.n_sheets
        lat = np.arange(self.coupled.n_lateral)[:, None] * self.coupled.n_sheets
        return (lat + np.arange(k_hi, k_hi + n)[None, :]).ravel()

    @cached_property
    def trace_tables(self):
        """Interface node tables in lateral order.

        Returns a dict with the split-bulk S-sheet nodes (``"minus"`` on
        ``split_minus``, ``"plus"`` on ``split_plus``) and the matching
        reference-box face nodes (``"ref_minus"``, ``"ref_plus"``).
        """
        return {
            "minus": self.split_minus.sheet_nodes(self.split_minus.n_sheets - 1),
            "plus": self.split_plus.sheet_nodes(0),
            "ref_minus": self.ref_layer.sheet_nodes(0),
            "ref_plus": self.ref_layer.sheet_nodes(self.ref_layer.n_sheets - 1),
        }

    # boundary data -----------------------------------------------------
    def patch_faces(self, grid, patch):
        nodes, areas = grid.boundary_faces(patch.axis, patch.side)
        mask = patch.face_mask(grid.node_coords[nodes])
        return nodes[mask], areas[mask]

    def dirichlet_nodes(self, grid):
        found = [self.patch_faces(grid, p)[0].ravel() for p in self.config.dirichlet_patches]
        nodes = np.unique(np.concatenate(found)) if found else np.zeros(0, int)
        return nodes

    def dirichlet_mask(self, grid):
        """Boolean DOF mask, True where the displacement is prescribed."""
        mask = np.zeros(grid.n_dofs, dtype=bool)
        mask[grid.dofs_of_nodes(self.dirichlet_nodes(grid))] = True
        return mask

    @property
    def eps(self):
        return self.config.eps


def build_domain(config):
    """Build every mesh for one configuration.

    Raises
    ------
    MeshError
        On ``eps >= eps0``, Dirichlet patches reaching the collar, or an empty
        Dirichlet boundary.
    """
    config.validate()
    lat = lateral_coords(config)
    sheets, k_lo, k_hi = thin_normal_sheets(config)
    kinds = np.full(sheets.size - 1, PLUS_BULK)
    kinds[:k_lo] = MINUS_BULK
    kinds[k_lo:k_hi] = LAYER
    bulk = TensorGrid("bulk", tuple(lat) + (sheets,), cell_kind=kinds)
    layer = TensorGrid(
        "layer",
        tuple(lat) + (sheets[k_lo : k_hi + 1],),
        cell_kind=np.full(k_hi - k_lo, LAYER),
    )
    ref_s = np.linspace(-1.0, 1.0, config.m_refbox + 1)
    ref = TensorGrid("ref_layer", tuple(lat) + (ref_s,), cell_kind=np.full(config.m_refbox, LAYER))
    zm, zp = split_normal_sheets(config)
    split_minus = TensorGrid("split_minus", tuple(lat) + (zm,), cell_kind=np.full(zm.size - 1, MINUS_BULK))
    split_plus = TensorGrid("split_plus", tuple(lat) + (zp,), cell_kind=np.full(zp.size - 1, PLUS_BULK))
    comp = np.concatenate([zm[:-1], ref_s + 1.0, zp[1:] + 2.0])
    phys = np.concatenate([zm[:-1], np.zeros(ref_s.size), zp[1:]])
    c_lo = zm.size - 1
    c_hi = c_lo + config.m_refbox
    ckinds = np.full(comp.size - 1, PLUS_BULK)
    ckinds[:c_lo] = MINUS_BULK
    ckinds[c_lo:c_hi] = LAYER
    coupled = TensorGrid("coupled", tuple(lat) + (comp,), phys_normal=phys, cell_kind=ckinds)
    meshes = DomainMeshes(
        config=config,
        bulk=bulk,
        layer_range=(k_lo, k_hi),
        layer=layer,
        ref_layer=ref,
        split_minus=split_minus,
        split_plus=split_plus,
        coupled=coupled,
        coupled_range=(c_lo, c_hi),
    )
    for grid in (bulk, coupled):
        nodes = meshes.dirichlet_nodes(grid)
        if nodes.size == 0:
            raise MeshError("empty Dirichlet boundary: no face matches the patches")
        z = grid.node_coords[nodes, -1]
        if np.any(np.abs(z) <= config.eps0 + COORD_TOL):
            raise MeshError("Dirichlet patch inside collar |x_d| <= eps0")
    logger.debug(
        "built domain: bulk %d nodes / %d cells, coupled %d nodes",
        bulk.n_nodes,
        bulk.n_cells,
        coupled.n_nodes,
    )
    return meshes


# --------------------------------------------------------------------------
# layer rescaling, scaled strain, traces
# --------------------------------------------------------------------------
def _check_lateral(grid_a, grid_b):
    if grid_a.dim != grid_b.dim or any(
        a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=COORD_TOL)
        for a, b in zip(grid_a.coords[:-1], grid_b.coords[:-1])
    ):
        raise MeshError(f"lateral grids of {grid_a.name} and {grid_b.name} differ")


def scale_to_reference(field, eps, meshes):
    """Pull a layer field back to the reference box: ``w(x, s) = v(x, eps s)``.

    With matching normal cell counts this is an exact relabeling, so ``eps``
    enters only through the check that the layer mesh has the stated
    thickness.
    """
    layer, ref = meshes.layer, meshes.ref_layer
    _check_lateral(layer, ref)
    if layer.n_sheets != ref.n_sheets:
        raise MeshError("layer and reference box need the same normal cell count")
    if not np.isclose(layer.coords[-1][-1], eps, rtol=1e-12, atol=0):
        raise MeshError("layer mesh thickness does not match eps")
    if field.mesh != layer.name or field.n_nodes != layer.n_nodes:
        raise MeshError("field does not live on the layer mesh")
    return NodalField(ref.name, field.values.copy())


def scale_from_reference(field, eps, meshes):
    """Inverse of :func:`scale_to_reference`."""
    layer, ref = meshes.layer, meshes.ref_layer
    _check_lateral(layer, ref)
    if layer.n_sheets != ref.n_sheets:
        raise MeshError("layer and reference box need the same normal cell count")
    if not np.isclose(layer.coords[-1][-1], eps, rtol=1e-12, atol=0):
        raise MeshError("layer mesh thickness does not match eps")
    if field.mesh != ref.name or field.n_nodes != ref.n_nodes:
        raise MeshError("field does not live on the reference box")
    return NodalField(layer.name, field.values.copy())


def strain_scale(dim, eps):
    """Derivative scaling giving ``e(eps, w)``; ``eps=0`` gives fiber strains."""
    scale = np.full(dim, float(eps))
    scale[-1] = 1.0
    return scale


def grid_strain(grid, values, scale=None):
    """Symmetric (optionally scaled) gradient at Gauss points.

    Returns
    -------
    ndarray, shape (ncell, nq, d, d)
    """
    d = grid.dim
    vals = np.asarray(values, dtype=float).reshape(grid.n_nodes, d)
    grads = grid.scaled_gradients(scale)
    local = vals[grid.cell_nodes]  # (ncell, nloc, d)
    g = np.einsum("zqaj,zac->zqcj", grads, local)
    return 0.5 * (g + np.swapaxes(g, 2, 3))


def scaled_strain(w, eps, meshes):
    """``e(eps, w) = sym(grad w * diag(eps, ..., eps, 1))`` on the reference box."""
    ref = meshes.ref_layer
    if w.mesh != ref.name or w.n_nodes != ref.n_nodes:
        raise MeshError("scaled_strain expects a field on the reference box")
    return grid_strain(ref, w.values, strain_scale(ref.dim, eps))


def split_field(meshes, coupled_values):
    """Restrict a coupled-grid nodal array to the two bulk halves."""
    vals = np.asarray(coupled_values).reshape(meshes.coupled.n_nodes, -1)
    return NodalField(
        "split_bulk",
        np.concatenate([vals[meshes.minus_to_coupled], vals[meshes.plus_to_coupled]]),
    )


def trace_jump(u, meshes):
    """Interface traces of a split-bulk field and their jump.

    Parameters
    ----------
    u : NodalField
        Values on ``split_minus`` nodes followed by ``split_plus`` nodes.

    Returns
    -------
    trace_plus, trace_minus, jump : ndarray, shape (n_lateral, dim)
    """
    n_minus = meshes.split_minus.n_nodes
    if u.n_nodes != n_minus + meshes.split_plus.n_nodes:
        raise MeshError("field does not live on the split bulk")
    tabs = meshes.trace_tables
    minus = u.values[:n_minus][tabs["minus"]]
    plus = u.values[n_minus:][tabs["plus"]]
    return plus, minus, plus - minus
