"""Singular and near-singular quadrature for panel integrals.

Self integrals (target on the panel) use a Duffy-type split: three
subtriangles with apex at the target, tensor Gauss in the radial/angular
parameters so the 1/r singularity is absorbed by the Jacobian. Near-singular
pairs use graded subdivision: panels are split until each leaf is small
relative to its distance from the target, then a standard symmetric rule is
applied per leaf. Both constructions depend only on the geometry, never on
the wavenumber, so operator assemblies remain analytic in frequency.
"""

import numpy as np

from .geometry import triangle_rule


def gauss_legendre01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def duffy_rule(target, tri, n: int = 5):
    """Quadrature for integrands with a 1/r singularity at `target` in `tri`.

    target must lie inside the (flat) triangle. Returns (points, weights)
    with weights carrying the surface measure.
    """
    u, wu = gauss_legendre01(n)
    v, wv = gauss_legendre01(n)
    pts = []
    wts = []
    corners = [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])]
    for va, vb in corners:
        # y = x + u * ((va - x) + v * (vb - va)); |J| = u * |(va-x) x (vb-va)|
        e0 = va - target
        e1 = vb - va
        jac = np.linalg.norm(np.cross(e0, e1))
        if jac <= 0:
            continue
        uu, vv = np.meshgrid(u, v, indexing="ij")
        y = (target[None, None, :] + uu[..., None]
             * (e0[None, None, :] + vv[..., None] * e1[None, None, :]))
        w = (wu[:, None] * wv[None, :]) * uu * jac
        pts.append(y.reshape(-1, 3))
        wts.append(w.reshape(-1))
    return np.concatenate(pts), np.concatenate(wts)


def point_triangle_distance(points, tri_verts):
    """Exact distance from points[i] to triangle tri_verts[i] (batched).

    points : (N, 3); tri_verts : (N, 3, 3). Returns (N,) distances.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _point_triangle_distance_impl(points, tri_verts)


def _point_triangle_distance_impl(points, tri_verts):
    p = points
    a, b, c = tri_verts[:, 0], tri_verts[:, 1], tri_verts[:, 2]
    ab = b - a
    ac = c - a
    ap = p - a

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    closest = np.empty_like(p)

    # vertex regions
    m_a = (d1 <= 0) & (d2 <= 0)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_c = (d6 >= 0) & (d5 <= d6)

    vc = d1 * d4 - d3 * d2
    v_ab = np.where(d1 - d3 != 0, d1 / np.maximum(d1 - d3, 1e-300), 0.0)
    m_ab = (~m_a) & (~m_b) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)

    vb_ = d5 * d2 - d1 * d6
    w_ac = np.where(d2 - d6 != 0, d2 / np.maximum(d2 - d6, 1e-300), 0.0)
    m_ac = (~m_a) & (~m_c) & (vb_ <= 0) & (d2 >= 0) & (d6 <= 0)

    va_ = d3 * d6 - d5 * d4
    den_bc = (d4 - d3) + (d5 - d6)
    w_bc = np.where(den_bc != 0, (d4 - d3) / np.where(den_bc == 0, 1.0, den_bc), 0.0)
    m_bc = (~m_b) & (~m_c) & (va_ <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    denom = va_ + vb_ + vc
    denom = np.where(denom == 0, 1.0, denom)
    v_in = vb_ / denom
    w_in = vc / denom

    closest = a + v_in[:, None] * ab + w_in[:, None] * ac  # interior default
    closest = np.where(m_bc[:, None], b + w_bc[:, None] * (c - b), closest)
    closest = np.where(m_ac[:, None], a + w_ac[:, None] * ac, closest)
    closest = np.where(m_ab[:, None], a + v_ab[:, None] * ab, closest)
    closest = np.where(m_c[:, None], c, closest)
    closest = np.where(m_b[:, None], b, closest)
    closest = np.where(m_a[:, None], a, closest)
    return np.linalg.norm(p - closest, axis=1)


def _tri_diam(tri_verts):
    d01 = np.linalg.norm(tri_verts[:, 0] - tri_verts[:, 1], axis=1)
    d12 = np.linalg.norm(tri_verts[:, 1] - tri_verts[:, 2], axis=1)
    d20 = np.linalg.norm(tri_verts[:, 2] - tri_verts[:, 0], axis=1)
    return np.maximum(d01, np.maximum(d12, d20))


def graded_panel_quadrature(targets, tri_verts, pair_targets, degree=2,
                            alpha=0.6, max_depth=9):
    """Distance-graded quadrature for many (target, panel) pairs at once.

    targets : (T, 3) candidate target points
    tri_verts : (P, 3, 3) panel vertices per pair
    pair_targets : (P,) index into targets per pair
    Returns (pair_index, points, weights): concatenated leaf-rule nodes with
    the owning pair of each node.
    """
    bary, bw = triangle_rule(degree)
    act_tris = tri_verts
    act_pairs = np.asarray(pair_targets, dtype=np.int64)
    out_tris = []
    out_pairs = []
    for depth in range(max_depth + 1):
        if len(act_tris) == 0:
            break
        t = targets[act_pairs]
        dist = point_triangle_distance(t, act_tris)
        diam = _tri_diam(act_tris)
        leaf = (diam <= alpha * dist) | (depth == max_depth)
        if np.any(leaf):
            out_tris.append(act_tris[leaf])
            out_pairs.append(act_pairs[leaf])
        split = ~leaf
        if not np.any(split):
            act_tris = act_tris[:0]
            break
        v = act_tris[split]
        p = act_pairs[split]
        m01 = 0.5 * (v[:, 0] + v[:, 1])
        m12 = 0.5 * (v[:, 1] + v[:, 2])
        m20 = 0.5 * (v[:, 2] + v[:, 0])
        children = np.concatenate([
            np.stack([v[:, 0], m01, m20], axis=1),
            np.stack([m01, v[:, 1], m12], axis=1),
            np.stack([m20, m12, v[:, 2]], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])
        act_tris = children
        act_pairs = np.concatenate([p, p, p, p])

    tris = np.concatenate(out_tris)
    pairs = np.concatenate(out_pairs)
    pts = np.einsum("qb,lbx->lqx", bary, tris)
    areas = 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1)
    wts = areas[:, None] * bw[None, :]
    rep = np.repeat(pairs, len(bw))
    return rep, pts.reshape(-1, 3), wts.reshape(-1)


# -- tetrahedron sampling for volume dynamic corrections ----------------------


def _split_tet(v):
    """Split tets (N, 4, 3) into 8 children each, (8N, 4, 3)."""
    m = {}
    for i in range(4):
        for j in range(i + 1, 4):
            m[(i, j)] = 0.5 * (v[:, i] + v[:, j])
    a, b, c = m[(0, 1)], m[(0, 2)], m[(0, 3)]
    d, e, f = m[(1, 2)], m[(1, 3)], m[(2, 3)]
    kids = [
        np.stack([v[:, 0], a, b, c], axis=1),
        np.stack([v[:, 1], a, d, e], axis=1),
        np.stack([v[:, 2], b, d, f], axis=1),
        np.stack([v[:, 3], c, e, f], axis=1),
        # octahedron a,b,c,d,e,f split along diagonal a-f
        np.stack([a, b, d, f], axis=1),
        np.stack([a, b, c, f], axis=1),
        np.stack([a, c, e, f], axis=1),
        np.stack([a, d, e, f], axis=1),
    ]
    return np.concatenate(kids)


def tet_subdivision_rule(tet_verts, level: int):
    """Centroid rule on 8^level sub-tets: (N, 8^level, 3) points and weights."""
    v = np.asarray(tet_verts)
    single = v.ndim == 3
    n0 = len(v)
    for _ in range(level):
        v = _split_tet(v)
    d = v[:, 1:] - v[:, :1]
    vol = np.abs(np.einsum("cx,cx->c", d[:, 0], np.cross(d[:, 1], d[:, 2]))) / 6.0
    cents = v.mean(axis=1)
    k = 8**level
    pts = cents.reshape(k, n0, 3).transpose(1, 0, 2) if level else cents[:, None, :]
    wts = vol.reshape(k, n0).T if level else vol[:, None]
    return pts, wts
