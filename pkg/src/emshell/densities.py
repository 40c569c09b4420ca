"""Densities on meshes: tangential surface currents in the lowest-order
divergence-conforming (edge/facet) basis, piecewise-constant scalar surface
densities, and per-cell volume fields.

The edge basis function of edge e (shared by triangles T+ and T-) is
f_e(x) = l_e/(2 A+) (x - v+) on T+ and l_e/(2 A-) (v- - x) on T-, with unit
normal flux density across e. Its surface divergence is piecewise constant,
so densities have an exact discrete divergence, and the loop (divergence-free)
and star subspaces split the coefficient space exactly.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .geometry import SurfaceMesh, VolumeMesh

_GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]),
           np.array([0.5, 0.5]))


class RwgSpace:
    """Edge-based div-conforming function space on a closed triangle mesh."""

    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        tris = mesh.triangles
        edge_key = {}
        edge_verts = []
        tri_plus = []
        tri_minus = []
        opp_plus = []
        opp_minus = []
        for t, tri in enumerate(tris):
            for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
                vi, vj, vk = int(tri[a]), int(tri[b]), int(tri[c])
                key = (min(vi, vj), max(vi, vj))
                if key not in edge_key:
                    edge_key[key] = len(edge_verts)
                    edge_verts.append(key)
                    tri_plus.append(-1)
                    tri_minus.append(-1)
                    opp_plus.append(-1)
                    opp_minus.append(-1)
                e = edge_key[key]
                if vi < vj:
                    tri_plus[e] = t      # directed edge matches CCW order
                    opp_plus[e] = vk
                else:
                    tri_minus[e] = t
                    opp_minus[e] = vk
        self.edge_vertices = np.array(edge_verts, dtype=np.int64)
        self.tri_plus = np.array(tri_plus, dtype=np.int64)
        self.tri_minus = np.array(tri_minus, dtype=np.int64)
        self.opp_plus = np.array(opp_plus, dtype=np.int64)
        self.opp_minus = np.array(opp_minus, dtype=np.int64)
        if np.any(self.tri_plus < 0) or np.any(self.tri_minus < 0):
            raise InvalidArgumentError("mesh is not closed/consistently oriented")
        ev = mesh.vertices[self.edge_vertices]
        self.edge_lengths = np.linalg.norm(ev[:, 1] - ev[:, 0], axis=1)
        self.num_edges = len(self.edge_vertices)

        # per-triangle local edge table: edge index and orientation sign
        F = mesh.num_triangles
        self.tri_edges = np.empty((F, 3), dtype=np.int64)
        self.tri_edge_signs = np.empty((F, 3))
        self.tri_edge_opp = np.empty((F, 3), dtype=np.int64)  # local opp vertex
        for t, tri in enumerate(tris):
            for loc, (a, b, c) in enumerate(((0, 1, 2), (1, 2, 0), (2, 0, 1))):
                vi, vj = int(tri[a]), int(tri[b])
                e = edge_key[(min(vi, vj), max(vi, vj))]
                self.tri_edges[t, loc] = e
                self.tri_edge_signs[t, loc] = 1.0 if vi < vj else -1.0
                self.tri_edge_opp[t, loc] = c
        self._div = None
        self._gram = None
        self._loops = None
        self._stars = None
        self._star_lift = None

    # -- basis evaluation ---------------------------------------------------

    def basis_on_triangle(self, t: int, points):
        """Values of all three edge functions of triangle t at given points.

        Returns (E_loc, signs, values) with values shape (3, P, 3).
        """
        points = np.atleast_2d(points)
        tri = self.mesh.triangles[t]
        verts = self.mesh.vertices[tri]
        area = self.mesh.areas[t]
        vals = np.empty((3, len(points), 3))
        for loc in range(3):
            e = self.tri_edges[t, loc]
            opp = verts[self.tri_edge_opp[t, loc]]
            sgn = self.tri_edge_signs[t, loc]
            vals[loc] = sgn * self.edge_lengths[e] / (2.0 * area) * (points - opp)
        return self.tri_edges[t], self.tri_edge_signs[t], vals

    def evaluate(self, coeffs, tri_idx, points):
        """Density values at `points` lying on triangles `tri_idx`."""
        coeffs = np.asarray(coeffs)
        points = np.atleast_2d(points)
        out = np.zeros((len(points), 3), dtype=coeffs.dtype)
        verts = self.mesh.vertices
        for loc in range(3):
            e = self.tri_edges[tri_idx, loc]
            opp = verts[self.mesh.triangles[tri_idx, self.tri_edge_opp[tri_idx, loc]]]
            sgn = self.tri_edge_signs[tri_idx, loc]
            fac = sgn * self.edge_lengths[e] / (2.0 * self.mesh.areas[tri_idx])
            out += (coeffs[e] * fac)[:, None] * (points - opp)
        return out

    # -- structural operators -------------------------------------------------

    @property
    def divergence_matrix(self):
        """Sparse (F x E) map: coefficients -> per-triangle divergence."""
        if self._div is None:
            F = self.mesh.num_triangles
            rows = np.repeat(np.arange(F), 3)
            cols = self.tri_edges.reshape(-1)
            vals = (self.tri_edge_signs
                    * self.edge_lengths[self.tri_edges]
                    / self.mesh.areas[:, None]).reshape(-1)
            self._div = sp.csr_matrix((vals, (rows, cols)),
                                      shape=(F, self.num_edges))
        return self._div

    @property
    def gram_matrix(self):
        """Sparse (E x E) L2 Gram matrix of the edge basis."""
        if self._gram is None:
            from .geometry import triangle_rule
            bary, w = triangle_rule(4)
            tv = self.mesh.triangle_vertices()
            pts = np.einsum("qb,fbx->fqx", bary, tv)  # (F, Q, 3)
            rows, cols, vals = [], [], []
            opp = tv[np.arange(len(tv))[:, None], self.tri_edge_opp]  # (F,3,3)
            fac = (self.tri_edge_signs * self.edge_lengths[self.tri_edges]
                   / (2.0 * self.mesh.areas[:, None]))  # (F, 3)
            basis = fac[:, :, None, None] * (pts[:, None, :, :] - opp[:, :, None, :])
            # (F, 3loc, Q, 3)
            ww = w[None, :] * self.mesh.areas[:, None]
            local = np.einsum("faqx,fbqx,fq->fab", basis, basis, ww)
            for a in range(3):
                for b in range(3):
                    rows.append(self.tri_edges[:, a])
                    cols.append(self.tri_edges[:, b])
                    vals.append(local[:, a, b])
            self._gram = sp.csr_matrix(
                (np.concatenate(vals),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.num_edges, self.num_edges))
        return self._gram

    @property
    def loops(self):
        """Sparse (E x V-1) basis of the exactly divergence-free subspace.

        Column v is the rotated gradient of the vertex hat function:
        coefficient (delta_{v,i} - delta_{v,j}) / l_e on incident edges.
        """
        if self._loops is None:
            V = self.mesh.num_vertices
            rows, cols, vals = [], [], []
            for e in range(self.num_edges):
                vi, vj = self.edge_vertices[e]
                le = self.edge_lengths[e]
                for v, s in ((vi, 1.0), (vj, -1.0)):
                    if v < V - 1:
                        rows.append(e)
                        cols.append(v)
                        vals.append(s / le)
            self._loops = sp.csr_matrix((vals, (rows, cols)),
                                        shape=(self.num_edges, V - 1))
        return self._loops

    @property
    def stars(self):
        """Sparse (E x F-1) complement: column t sums the edges of triangle t
        with orientation signs."""
        if self._stars is None:
            F = self.mesh.num_triangles
            rows, cols, vals = [], [], []
            for t in range(F - 1):
                for loc in range(3):
                    rows.append(self.tri_edges[t, loc])
                    cols.append(t)
                    vals.append(self.tri_edge_signs[t, loc])
            self._stars = sp.csr_matrix((vals, (rows, cols)),
                                        shape=(self.num_edges, F - 1))
        return self._stars

    def star_lift_factor(self):
        """Prefactored normal equations of D @ S for divergence lifting."""
        if self._star_lift is None:
            DS = (self.divergence_matrix @ self.stars).tocsc()
            self._star_lift = (DS, sp.linalg.splu((DS.T @ DS).astype(complex).tocsc()))
        return self._star_lift

    def lift_divergence(self, div_values):
        """Coefficients h_p with exact per-triangle divergence `div_values`.

        div_values must be (discretely) mean-zero: sum(div * areas) = 0.
        """
        DS, lu = self.star_lift_factor()
        beta = lu.solve(DS.T @ np.asarray(div_values, dtype=complex))
        return self.stars @ beta

    # -- interpolation ---------------------------------------------------------

    def edge_quadrature_points(self, n: int = 2):
        """Gauss points along each edge: (E, n, 3) and weights summing to 1."""
        x, w = _GAUSS2 if n == 2 else (np.linspace(0, 1, n + 2)[1:-1],
                                       np.full(n, 1.0 / n))
        ev = self.mesh.vertices[self.edge_vertices]
        pts = ev[:, None, 0, :] * (1 - x)[None, :, None] + ev[:, None, 1, :] * x[None, :, None]
        return pts, w

    def edge_tangents(self):
        """Unit tangent of each edge, directed from the lower vertex index."""
        ev = self.mesh.vertices[self.edge_vertices]
        t = ev[:, 1] - ev[:, 0]
        return t / self.edge_lengths[:, None]

    def interpolate_tangential_trace(self, rotated_field):
        """Coefficients of the edge interpolant of nu x W for a field W.

        rotated_field : callable points -> (N, 3) values of W. The normal flux
        of nu x W across edge e is -mean(W . t_e), computed with edge Gauss
        points; exact for fields with straight-line-polynomial tangential
        components of degree <= 3.
        """
        pts, w = self.edge_quadrature_points()
        vals = rotated_field(pts.reshape(-1, 3)).reshape(len(pts), len(w), 3)
        t = self.edge_tangents()
        return -np.einsum("enx,ex,n->e", vals, t, w)

    def interpolate_gradient_trace(self, potential):
        """Coefficients of the edge interpolant of nu x grad(u).

        Uses endpoint differences of the scalar potential, so the discrete
        surface divergence of the result is exactly zero (telescoping).
        """
        uv = np.asarray(potential(self.mesh.vertices))
        vi, vj = self.edge_vertices[:, 0], self.edge_vertices[:, 1]
        return -(uv[vj] - uv[vi]) / self.edge_lengths

    def interpolate_values(self, values_at_edge_points, edge_weights=None):
        """Like interpolate_tangential_trace but from precomputed W samples of
        shape (E, n, 3) at edge_quadrature_points()."""
        pts, w = self.edge_quadrature_points()
        if edge_weights is None:
            edge_weights = w
        t = self.edge_tangents()
        return -np.einsum("enx,ex,n->e", values_at_edge_points, t, edge_weights)


@dataclass
class TangentialDensity:
    """Tangential surface vector field in the edge basis, on a closed mesh."""

    space: RwgSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients)
        if self.coefficients.shape != (self.space.num_edges,):
            raise InvalidArgumentError("coefficient vector has wrong length")

    @classmethod
    def from_rotated_field(cls, space: RwgSpace, field):
        """Interpolant of nu x W given W itself (callable points -> values).

        Rotation uses the facet normals implicitly (only edge-tangential
        components of W enter), so for W = grad(u) the discrete surface
        divergence telescopes to exact zero.
        """
        return cls(space, space.interpolate_tangential_trace(field))

    @classmethod
    def from_function(cls, space: RwgSpace, func):
        """Interpolate a tangential field given as callable points -> values.

        func is sampled at edge Gauss points; its values may carry a normal
        component (e.g. exact-sphere tangential data on a faceted mesh), only
        the edge-flux component enters.
        """
        pts, w = space.edge_quadrature_points()
        vals = np.asarray(func(pts.reshape(-1, 3))).reshape(len(pts), len(w), 3)
        nrm = np.linalg.norm(vals, axis=-1).max()
        m = space.mesh
        # reject normal-dominated inputs (facet normals differ from smooth
        # ones by O(h), so a strict pointwise-zero test is not meaningful)
        cvals = np.asarray(func(m.centroids))
        if nrm > 0:
            ndot = np.abs(np.einsum("fx,fx->f", cvals, m.normals)).max()
            if ndot > 0.2 * max(nrm, 1e-300):
                raise InvalidArgumentError(
                    "field is not tangential to the carrier mesh")
        t = space.edge_tangents()
        # edge-flux interpolation: c_e = mean over e of f . (t x nu_plus)
        m_plus = np.cross(t, _edge_plus_normals(space))
        coeffs = np.einsum("enx,ex,n->e", vals, m_plus, w)
        return cls(space, coeffs)

    def evaluate_at_centroids(self):
        m = self.space.mesh
        return self.space.evaluate(self.coefficients,
                                   np.arange(m.num_triangles), m.centroids)

    def surface_divergence(self):
        """Exact per-triangle divergence of the representation."""
        return self.space.divergence_matrix @ self.coefficients

    def l2_norm(self):
        c = self.coefficients
        return float(np.sqrt(np.real(np.conj(c) @ (self.space.gram_matrix @ c))))


def _edge_plus_normals(space: RwgSpace):
    """Facet normal of T+ for each edge (used for in-plane edge normals)."""
    return space.mesh.normals[space.tri_plus]


@dataclass
class ScalarSurfaceDensity:
    """Piecewise-constant scalar density on a closed surface mesh."""

    mesh: SurfaceMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.mesh.num_triangles,):
            raise InvalidArgumentError("values must be per-triangle")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("non-finite density values")

    def l2_norm(self):
        return float(np.sqrt(np.sum(self.mesh.areas * np.abs(self.values) ** 2)))

    def integral(self):
        return complex(np.sum(self.mesh.areas * self.values))


@dataclass
class VolumeField:
    """Per-cell complex 3-vector field on a tetrahedral mesh."""

    mesh: VolumeMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.mesh.num_cells, 3):
            raise InvalidArgumentError("values must have shape (cells, 3)")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("non-finite field values")

    def flat(self):
        return self.values.reshape(-1)

    def l2_norm(self):
        return float(np.sqrt(np.sum(self.mesh.volumes
                                    * np.sum(np.abs(self.values) ** 2, axis=1))))

    @classmethod
    def from_flat(cls, mesh, vec):
        return cls(mesh, np.asarray(vec).reshape(-1, 3))
