"""Surface and volume meshes: generation, validation, quadrature, file I/O.

Surface meshes are watertight flat-triangle meshes with outward unit normals.
Volume meshes are tetrahedral: a uniform cube lattice is split into six Kuhn
tetrahedra per cube and filtered by centroid classification against the shell
boundaries, so cell volumes are exact and densities can be piecewise constant
without a conforming mesh.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, InvalidArgumentError

# ---------------------------------------------------------------------------
# symmetric triangle quadrature rules (barycentric coords, weights sum to 1)

_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (
        np.array([
            [2 / 3, 1 / 6, 1 / 6],
            [1 / 6, 2 / 3, 1 / 6],
            [1 / 6, 1 / 6, 2 / 3],
        ]),
        np.array([1 / 3, 1 / 3, 1 / 3]),
    ),
    4: (
        np.array([
            [0.108103018168070, 0.445948490915965, 0.445948490915965],
            [0.445948490915965, 0.108103018168070, 0.445948490915965],
            [0.445948490915965, 0.445948490915965, 0.108103018168070],
            [0.816847572980459, 0.091576213509771, 0.091576213509771],
            [0.091576213509771, 0.816847572980459, 0.091576213509771],
            [0.091576213509771, 0.091576213509771, 0.816847572980459],
        ]),
        np.array([
            0.223381589678011, 0.223381589678011, 0.223381589678011,
            0.109951743655322, 0.109951743655322, 0.109951743655322,
        ]),
    ),
    5: (
        np.array([
            [1 / 3, 1 / 3, 1 / 3],
            [0.059715871789770, 0.470142064105115, 0.470142064105115],
            [0.470142064105115, 0.059715871789770, 0.470142064105115],
            [0.470142064105115, 0.470142064105115, 0.059715871789770],
            [0.797426985353087, 0.101286507323456, 0.101286507323456],
            [0.101286507323456, 0.797426985353087, 0.101286507323456],
            [0.101286507323456, 0.101286507323456, 0.797426985353087],
        ]),
        np.array([
            0.225,
            0.132394152788506, 0.132394152788506, 0.132394152788506,
            0.125939180544827, 0.125939180544827, 0.125939180544827,
        ]),
    ),
}


def triangle_rule(degree: int):
    """Barycentric nodes and weights (summing to 1) exact to `degree`."""
    if degree not in _TRI_RULES:
        degree = min(d for d in _TRI_RULES if d >= degree) if degree < 5 else 5
    return _TRI_RULES[degree]


@dataclass(frozen=True)
class QuadratureRule:
    """Concrete quadrature: 3d nodes with weights carrying the measure."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise InvalidArgumentError("quadrature weights must be positive")


# ---------------------------------------------------------------------------
# surface mesh


@dataclass
class SurfaceMesh:
    """Closed triangle mesh with outward orientation.

    vertices : (V, 3) float array
    triangles : (F, 3) int array, counter-clockwise seen from outside
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        v = self.vertices[self.triangles]
        cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        nrm = np.linalg.norm(cross, axis=1)
        if np.any(nrm <= 0):
            raise GeometryError("degenerate triangle (zero area)")
        self.normals = cross / nrm[:, None]
        self.areas = 0.5 * nrm
        self.centroids = v.mean(axis=1)
        self.vertices.flags.writeable = False
        self.triangles.flags.writeable = False

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def total_area(self):
        return float(self.areas.sum())

    def triangle_vertices(self):
        """(F, 3, 3) vertex coordinates per triangle."""
        return self.vertices[self.triangles]

    def diameter(self):
        """Largest axis extent (the geometric diameter for centered shapes)."""
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float((hi - lo).max())

    def local_size(self):
        """Per-triangle length scale sqrt(2 * area)."""
        return np.sqrt(2.0 * self.areas)

    def enclosed_volume(self):
        """Signed volume by the divergence theorem; positive when outward."""
        return float(np.einsum("ij,ij,i->", self.centroids, self.normals,
                               self.areas)) / 3.0

    def edge_map(self):
        """Dict (i, j) with i < j -> list of incident triangle indices."""
        edges = {}
        for t, tri in enumerate(self.triangles):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                edges.setdefault(key, []).append(t)
        return edges

    def validate(self):
        """Check watertightness, orientation and positive areas."""
        for key, tris in self.edge_map().items():
            if len(tris) != 2:
                raise GeometryError(
                    f"edge {key} belongs to {len(tris)} triangles (want 2)")
        if self.enclosed_volume() <= 0:
            raise GeometryError("normals are not outward (flux <= 0)")
        if np.any(self.areas <= 0):
            raise GeometryError("non-positive triangle area")
        return self

    def quadrature(self, degree: int = 2) -> QuadratureRule:
        """Surface quadrature from the per-triangle symmetric rule."""
        bary, w = triangle_rule(degree)
        v = self.triangle_vertices()
        nodes = np.einsum("qb,fbx->fqx", bary, v).reshape(-1, 3)
        weights = (self.areas[:, None] * w[None, :]).reshape(-1)
        return QuadratureRule(nodes=nodes, weights=weights)


# ---------------------------------------------------------------------------
# generators


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts[0])
    tris = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, tris


def _subdivide(verts, tris):
    verts = list(map(tuple, verts))
    cache = {}

    def midpoint(a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            cache[key] = len(verts)
            va, vb = verts[a], verts[b]
            verts.append(tuple((np.asarray(va) + np.asarray(vb)) / 2.0))
        return cache[key]

    out = []
    for a, b, c in tris:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts, dtype=float), np.array(out, dtype=np.int64)


def generate_surface_mesh(shape: str, size, center=(0.0, 0.0, 0.0),
                          refinement: int = 0) -> SurfaceMesh:
    """Generate a watertight mesh of a sphere, ellipsoid or axis-aligned box.

    shape : 'sphere' (size = radius), 'ellipsoid' (size = (a, b, c) semi-axes)
            or 'box' (size = half-extents).
    refinement : number of uniform subdivisions, >= 0. Spheres/ellipsoids are
            recursive icosahedral subdivisions (20 * 4^refinement triangles)
            with vertex projection; the box splits each face into a
            (2^refinement)^2 grid of quads, two triangles each.
    """
    if refinement < 0:
        raise InvalidArgumentError("refinement must be >= 0")
    center = np.asarray(center, dtype=float)
    size_arr = np.atleast_1d(np.asarray(size, dtype=float))
    if np.any(size_arr <= 0):
        raise InvalidArgumentError(f"size parameters must be positive: {size}")

    if shape in ("sphere", "ellipsoid"):
        if shape == "sphere":
            radii = np.full(3, float(size_arr[0]))
        else:
            if size_arr.size != 3:
                raise InvalidArgumentError("ellipsoid needs three semi-axes")
            radii = size_arr
        verts, tris = _icosahedron()
        for _ in range(refinement):
            verts, tris = _subdivide(verts, tris)
            verts /= np.linalg.norm(verts, axis=1)[:, None]
        verts = verts * radii[None, :] + center[None, :]
        return SurfaceMesh(verts, tris).validate()

    if shape == "box":
        if size_arr.size == 1:
            half = np.full(3, float(size_arr[0]))
        elif size_arr.size == 3:
            half = size_arr
        else:
            raise InvalidArgumentError("box needs one or three half-extents")
        n = 2**refinement
        vert_index = {}
        verts = []

        def vid(p):
            key = tuple(np.round(p, 12))
            if key not in vert_index:
                vert_index[key] = len(verts)
                verts.append(p)
            return vert_index[key]

        tris = []
        # each face: +-axis, with (u, v) spanning the remaining two axes
        for axis in range(3):
            for sgn in (1.0, -1.0):
                u_axis, v_axis = [a for a in range(3) if a != axis]
                for i in range(n):
                    for j in range(n):
                        corners = []
                        for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                            p = np.empty(3)
                            p[axis] = sgn * half[axis]
                            p[u_axis] = (-1 + 2 * (i + du) / n) * half[u_axis]
                            p[v_axis] = (-1 + 2 * (j + dv) / n) * half[v_axis]
                            corners.append(vid(p + center))
                        c0, c1, c2, c3 = corners
                        if sgn > 0:
                            tris += [[c0, c1, c2], [c0, c2, c3]]
                        else:
                            tris += [[c0, c2, c1], [c0, c3, c2]]
        # outward orientation: faces built with (u, v, axis) handedness; for
        # axes where (u, v, axis) is a left-handed frame the winding above is
        # inverted, so fix by flux sign per triangle group below.
        mesh = SurfaceMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))
        # flip any triangle whose normal points inward (box is star-shaped)
        rel = mesh.centroids - center[None, :]
        bad = np.einsum("ij,ij->i", rel, mesh.normals) < 0
        if np.any(bad):
            tris = mesh.triangles.copy()
            tris[bad] = tris[bad][:, [0, 2, 1]]
            mesh = SurfaceMesh(mesh.vertices, tris)
        return mesh.validate()

    raise InvalidArgumentError(f"unknown shape {shape!r}")


# ---------------------------------------------------------------------------
# point classification (generalized winding number)


def solid_angles(points, mesh: SurfaceMesh, chunk: int = 256):
    """Total signed solid angle of the closed mesh seen from each point.

    Van Oosterom-Strackee per triangle; ~4*pi inside, ~0 outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tv = mesh.triangle_vertices()
    out = np.zeros(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        a = tv[None, :, 0, :] - p[:, None, :]
        b = tv[None, :, 1, :] - p[:, None, :]
        c = tv[None, :, 2, :] - p[:, None, :]
        la = np.linalg.norm(a, axis=2)
        lb = np.linalg.norm(b, axis=2)
        lc = np.linalg.norm(c, axis=2)
        num = np.einsum("ptx,ptx->pt", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("ptx,ptx->pt", a, b) * lc
               + np.einsum("ptx,ptx->pt", b, c) * la
               + np.einsum("ptx,ptx->pt", c, a) * lb)
        out[lo:lo + chunk] = 2.0 * np.arctan2(num, den).sum(axis=1)
    return out


def points_inside(points, mesh: SurfaceMesh):
    """Boolean mask: generalized winding number > 1/2."""
    return solid_angles(points, mesh) / (4.0 * np.pi) > 0.5


# ---------------------------------------------------------------------------
# volume mesh (Kuhn tetrahedra on a uniform lattice)

# six permutations of path directions through a unit cube; odd permutations
# need a vertex swap for positive orientation
_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def _perm_parity(p):
    inv = sum(1 for i in range(3) for j in range(i + 1, 3) if p[i] > p[j])
    return inv % 2


@dataclass
class VolumeMesh:
    """Tetrahedral mesh of the shell between two closed surfaces.

    vertices : (V, 3); tetrahedra : (C, 4) int; volumes and centroids are
    derived. Lattice metadata (pitch) is kept for solver cell grouping.
    """

    vertices: np.ndarray
    tetrahedra: np.ndarray
    lattice_pitch: float = 0.0
    volumes: np.ndarray = field(init=False)
    centroids: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.tetrahedra = np.ascontiguousarray(self.tetrahedra, dtype=np.int64)
        v = self.vertices[self.tetrahedra]
        d = v[:, 1:] - v[:, :1]
        self.volumes = np.einsum("cx,cx->c", d[:, 0],
                                 np.cross(d[:, 1], d[:, 2])) / 6.0
        if np.any(self.volumes <= 0):
            raise GeometryError("non-positive tetrahedron volume")
        self.centroids = v.mean(axis=1)

    @property
    def num_cells(self):
        return len(self.tetrahedra)

    @property
    def total_volume(self):
        return float(self.volumes.sum())

    def cell_vertices(self):
        return self.vertices[self.tetrahedra]

    def quadrature(self) -> QuadratureRule:
        return QuadratureRule(nodes=self.centroids.copy(),
                              weights=self.volumes.copy())

    def validate_shell(self, outer: SurfaceMesh, inner: SurfaceMesh = None):
        """Every centroid must lie inside `outer` and outside `inner`."""
        if not np.all(points_inside(self.centroids, outer)):
            raise GeometryError("volume cell centroid outside the outer surface")
        if inner is not None and np.any(points_inside(self.centroids, inner)):
            raise GeometryError("volume cell centroid inside the inner surface")
        return self


def generate_shell_volume_mesh(outer: SurfaceMesh, inner: SurfaceMesh = None,
                               target_cell_size: float = 0.5) -> VolumeMesh:
    """Tetrahedralize the region inside `outer` and outside `inner`.

    A uniform cube lattice of pitch `target_cell_size` covering `outer` is
    split into Kuhn tetrahedra; a tetrahedron is kept iff its centroid is
    inside `outer` and outside `inner`. `inner=None` meshes the full interior
    of `outer` (no embedded obstacle).
    """
    if target_cell_size <= 0:
        raise InvalidArgumentError("target_cell_size must be positive")
    if inner is not None:
        # strict containment: inner vertices inside outer, no outer vertex
        # inside inner, and the shell non-degenerate
        if not np.all(points_inside(inner.vertices, outer)):
            raise GeometryError("inner surface is not strictly inside outer")
        if np.any(points_inside(outer.vertices, inner)):
            raise GeometryError("surfaces intersect")

    h = float(target_cell_size)
    lo = outer.vertices.min(axis=0)
    hi = outer.vertices.max(axis=0)
    # tiny deterministic jitter keeps mesh vertices off lattice planes
    origin = lo - h * np.array([0.5031, 0.5047, 0.5059])
    n = np.ceil((hi - origin) / h).astype(int) + 1

    ii, jj, kk = np.meshgrid(np.arange(n[0]), np.arange(n[1]), np.arange(n[2]),
                             indexing="ij")
    base = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)

    # per-cube Kuhn tets: vertex lattice offsets for each of 6 tets
    tet_offsets = []
    for perm in _KUHN_PERMS:
        offs = [np.zeros(3, dtype=int)]
        cur = np.zeros(3, dtype=int)
        for axis in perm:
            cur = cur.copy()
            cur[axis] = 1
            offs.append(cur)
        offs = np.array(offs)
        if _perm_parity(perm):
            offs = offs[[0, 2, 1, 3]]
        tet_offsets.append(offs)
    tet_offsets = np.array(tet_offsets)  # (6, 4, 3)

    # candidate tets: all cubes; centroid per tet
    cents = (origin[None, None, :]
             + (base[:, None, :] + tet_offsets.mean(axis=1)[None, :, :]) * h)
    cents = cents.reshape(-1, 3)
    keep = points_inside(cents, outer)
    if inner is not None:
        keep &= ~points_inside(cents, inner)
    if not np.any(keep):
        raise GeometryError("empty shell: no cell centroid between surfaces")

    cube_idx, tet_idx = np.divmod(np.nonzero(keep)[0], 6)
    corner = base[cube_idx][:, None, :] + tet_offsets[tet_idx]  # (C, 4, 3)

    # dedupe lattice vertices
    flat = corner.reshape(-1, 3)
    keys = (flat[:, 0] * (n[1] + 2) + flat[:, 1]) * (n[2] + 2) + flat[:, 2]
    uniq, inv = np.unique(keys, return_inverse=True)
    order = {}
    verts_ijk = np.empty((len(uniq), 3), dtype=int)
    verts_ijk[inv] = flat
    tets = inv.reshape(-1, 4)
    verts = origin[None, :] + verts_ijk * h

    mesh = VolumeMesh(verts, tets, lattice_pitch=h)
    return mesh.validate_shell(outer, inner)


# ---------------------------------------------------------------------------
# surface divergence of a tangential density


def surface_divergence(mesh: SurfaceMesh, density):
    """Surface divergence of a TangentialDensity, one value per triangle.

    The density must live on `mesh` and be pointwise tangential; the result is
    the exact (piecewise-constant) divergence of its div-conforming
    representation, which integrates to zero over the closed surface.
    """
    from .densities import TangentialDensity  # local import: no cycle

    if not isinstance(density, TangentialDensity):
        raise InvalidArgumentError("density must be a TangentialDensity")
    if density.space.mesh is not mesh:
        raise InvalidArgumentError("density does not live on this mesh")
    return density.surface_divergence()


# ---------------------------------------------------------------------------
# file formats


def write_off(mesh: SurfaceMesh, path):
    with open(path, "w") as f:
        f.write("OFF\n")
        f.write(f"{mesh.num_vertices} {mesh.num_triangles} 0\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.triangles:
            f.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def read_off(path) -> SurfaceMesh:
    with open(path) as f:
        tokens = io.StringIO(f.read()).read().split()
    if not tokens or tokens[0] != "OFF":
        raise GeometryError("not an OFF file")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tris = []
    for _ in range(nf):
        cnt = int(tokens[pos])
        if cnt != 3:
            raise GeometryError("OFF reader supports triangles only")
        tris.append([int(tokens[pos + 1]), int(tokens[pos + 2]),
                     int(tokens[pos + 3])])
        pos += 4
    return SurfaceMesh(verts, np.array(tris, dtype=np.int64)).validate()


def write_tet(mesh: VolumeMesh, path):
    with open(path, "w") as f:
        f.write(f"TET {len(mesh.vertices)} {mesh.num_cells}\n")
        for v in mesh.vertices:
            f.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for t in mesh.tetrahedra:
            f.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")


def read_tet(path) -> VolumeMesh:
    with open(path) as f:
        tokens = f.read().split()
    if not tokens or tokens[0] != "TET":
        raise GeometryError("not a TET file")
    nv, nc = int(tokens[1]), int(tokens[2])
    pos = 3
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    tets = np.array(tokens[pos:pos + 4 * nc], dtype=np.int64).reshape(nc, 4)
    return VolumeMesh(verts, tets)
