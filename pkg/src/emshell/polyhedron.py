"""Closed-form Newtonian potential of constant-density polyhedral cells.

For a polyhedron P and the static kernel 1/(4 pi r), the potential
N(x) = (1/4pi) int_P dy/|x-y|, its gradient and its Hessian all reduce to
per-face quantities: the face single-layer integrals I_f = int_f ds/r, the
edge logarithms and the signed solid angles. These formulas are exact for
any target position (inside, outside, or near faces), which is what makes
piecewise-constant volume densities on tetrahedra viable: the non-integrable
grad-div kernel never needs numerical quadrature on its own cell.

Only tetrahedral cells are used here; faces are the four triangles oriented
outward.
"""

import numpy as np

_EDGE_CLAMP = 1e-12


def tet_faces(tets):
    """Outward-oriented triangular faces of tets (..., 4, 3) -> (..., 4, 3, 3)."""
    tets = np.asarray(tets)
    idx = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[..., idx, :]  # (..., 4face, 3vert, 3)
    # flip any face whose normal points toward the opposite vertex
    opp = tets[..., [0, 1, 2, 3], :]
    a = faces[..., 0, :]
    n = np.cross(faces[..., 1, :] - a, faces[..., 2, :] - a)
    flip = np.einsum("...x,...x->...", n, opp - a) > 0
    swapped = faces[..., [0, 2, 1], :]
    faces = np.where(flip[..., None, None], swapped, faces)
    return faces


def _signed_solid_angle(rel):
    """Van Oosterom-Strackee signed solid angle of triangles.

    rel : (..., 3, 3) vertex positions relative to the target.
    Positive when the target lies on the side the (CCW) normal points to.
    """
    a, b, c = rel[..., 0, :], rel[..., 1, :], rel[..., 2, :]
    la = np.linalg.norm(a, axis=-1)
    lb = np.linalg.norm(b, axis=-1)
    lc = np.linalg.norm(c, axis=-1)
    num = np.einsum("...x,...x->...", a, np.cross(b, c))
    den = (la * lb * lc
           + np.einsum("...x,...x->...", a, b) * lc
           + np.einsum("...x,...x->...", b, c) * la
           + np.einsum("...x,...x->...", c, a) * lb)
    return -2.0 * np.arctan2(num, den)


def face_layer_integrals(targets, faces):
    """I_f = int_f ds/r and grad_x I_f for planar triangular faces.

    targets : (..., 3) broadcastable against faces (..., 3vert, 3).
    Returns (I, gradI) with shapes (...,) and (..., 3).
    """
    v = np.asarray(faces)
    x = np.asarray(targets)
    a = v[..., 0, :]
    n = np.cross(v[..., 1, :] - a, v[..., 2, :] - a)
    n = n / np.linalg.norm(n, axis=-1, keepdims=True)
    h = np.einsum("...x,...x->...", x - a, n)
    xpi = x - h[..., None] * n

    I = np.zeros(h.shape)
    grad = np.zeros(h.shape + (3,))
    for e in range(3):
        w1 = v[..., e, :]
        w2 = v[..., (e + 1) % 3, :]
        s = np.linalg.norm(w2 - w1, axis=-1)
        t = (w2 - w1) / s[..., None]
        m = np.cross(t, n)  # outward in-plane edge normal (CCW faces)
        lp = np.linalg.norm(x - w1, axis=-1)
        lq = np.linalg.norm(x - w2, axis=-1)
        num = lp + lq + s
        den = np.maximum(lp + lq - s, _EDGE_CLAMP * s)
        L = np.log(num / den)
        t0 = np.einsum("...x,...x->...", w1 - xpi, m)
        I = I + t0 * L
        grad = grad - m * L[..., None]
    omega = _signed_solid_angle(v - x[..., None, :])
    I = I - h * omega
    grad = grad - n * omega[..., None]
    return I, grad, n, h


def tet_static_interactions(targets, tets, want_hessian=True):
    """Newtonian potential data of unit-density tets at targets (pairwise).

    targets : (P, 3); tets : (P, 4, 3) matched per pair.
    Returns dict with 'value' (P,), 'grad' (P, 3) and 'hess' (P, 3, 3):
    value = (1/4pi) int 1/r, grad and hess its x-derivatives. The Hessian
    trace is -1 inside the cell and 0 outside (Poisson).
    """
    faces = tet_faces(tets)  # (P, 4, 3, 3)
    x = np.asarray(targets)[:, None, :]  # broadcast over faces
    I, gradI, n, h = face_layer_integrals(x, faces)
    inv4pi = 1.0 / (4.0 * np.pi)
    value = -0.5 * inv4pi * np.einsum("pf,pf->p", h, I)
    grad = -inv4pi * np.einsum("pfx,pf->px", n, I)
    out = {"value": value, "grad": grad}
    if want_hessian:
        out["hess"] = -inv4pi * np.einsum("pfx,pfy->pxy", n, gradI)
    return out
