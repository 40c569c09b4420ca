"""Boundary integral operators on a closed triangle mesh.

Scalar operators (single layer, Neumann-Poincare adjoint) act on
piecewise-constant densities by collocation at centroids; the tangential
magnetic-dipole operator acts on the div-conforming edge basis by Galerkin
testing. Self terms use Duffy quadrature (single layer) or vanish exactly on
flat panels (gradient-kernel operators); near pairs use distance-graded
subdivision. All node/weight layouts depend only on the geometry, so every
assembled matrix is analytic in the wavenumber.

The inverse of I/2 + M is realized as a divergence-constrained Galerkin
solve: the surface divergence of the solution is pinned through the scalar
relation div((I/2 + M) h) = (I/2 - K*) div(h), and only the
divergence-free (loop) complement is solved variationally. Divergence-free
right-hand sides therefore produce exactly divergence-free solutions, which
the static operator identities downstream rely on.
"""

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .densities import RwgSpace
from .errors import LinearSolveError, IllConditionedError, PreconditionError
from .geometry import SurfaceMesh, triangle_rule
from .kernels import Wavenumber
from .quadrature import duffy_rule, graded_panel_quadrature

DEFAULT_SOLVER_TOL = 1e-10
DENSE_UNKNOWN_LIMIT = 20000
SMALL_K_DIAM = 0.5


class QuadConfig:
    """Quadrature parameters shared by all operator assemblies."""

    def __init__(self, far_degree=5, outer_degree=2, near_eta=1.5,
                 near_alpha=0.55, near_degree=2, duffy_n=5, max_depth=9):
        self.far_degree = far_degree
        self.outer_degree = outer_degree
        self.near_eta = near_eta
        self.near_alpha = near_alpha
        self.near_degree = near_degree
        self.duffy_n = duffy_n
        self.max_depth = max_depth


def _gamma(k0, r):
    return np.exp(1j * k0 * r) / (4.0 * np.pi * r)


def _grad_gamma(k0, d, r):
    """grad of e^{ikr}/(4 pi r); d offsets (..., 3), r norms (...,)."""
    return (np.exp(1j * k0 * r) * (1j * k0 * r - 1.0)
            / (4.0 * np.pi * r**3))[..., None] * d


def _hess_gamma(k0, d, r):
    ekr = np.exp(1j * k0 * r)
    g1r = ekr * (1j * k0 * r - 1.0) / (4.0 * np.pi * r**3)
    g2 = -k0**2 * ekr / (4.0 * np.pi * r) - 2.0 * g1r
    xh = d / r[..., None]
    outer = xh[..., :, None] * xh[..., None, :]
    eye = np.eye(3)
    return g1r[..., None, None] * (eye - outer) + g2[..., None, None] * outer


class BoundaryOperators:
    """Operator factory bound to one surface mesh (matrices cached per k)."""

    def __init__(self, mesh: SurfaceMesh, quad: QuadConfig = None):
        self.mesh = mesh
        self.space = RwgSpace(mesh)
        self.quad = quad or QuadConfig()
        bary, w = triangle_rule(self.quad.far_degree)
        tv = mesh.triangle_vertices()
        self._qp = np.einsum("qb,fbx->fqx", bary, tv)          # (F, Q, 3)
        self._qw = mesh.areas[:, None] * w[None, :]            # (F, Q)
        obary, ow = triangle_rule(self.quad.outer_degree)
        self._oqp = np.einsum("qb,fbx->fqx", obary, tv)
        self._oqw = mesh.areas[:, None] * ow[None, :]
        self._tv = tv
        self._diam = np.sqrt(2.0 * mesh.areas)
        self._cache = {}
        self._duffy = None

    # -- helpers ---------------------------------------------------------------

    def _key(self, name, k: Wavenumber):
        return (name, round(float(k.k0), 14))

    def _duffy_rules(self):
        """Per-triangle Duffy rule centered at the centroid (cached)."""
        if self._duffy is None:
            pts, wts = [], []
            for t in range(self.mesh.num_triangles):
                p, w = duffy_rule(self.mesh.centroids[t], self._tv[t],
                                  self.quad.duffy_n)
                pts.append(p)
                wts.append(w)
            self._duffy = (np.array(pts), np.array(wts))
        return self._duffy

    def _near_pairs(self, targets):
        """(target, triangle) index pairs needing graded quadrature."""
        c = self.mesh.centroids
        cut = (self.quad.near_eta * 2.0 * self._diam) ** 2
        out_t, out_f = [], []
        chunk = max(1, int(2e7 // max(len(c), 1)))
        for lo in range(0, len(targets), chunk):
            t = targets[lo:lo + chunk]
            d2 = ((t[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
            ti, fi = np.nonzero(d2 <= cut[None, :])
            out_t.append(ti + lo)
            out_f.append(fi)
        return np.concatenate(out_t), np.concatenate(out_f)

    def _near_tri_pairs(self):
        """Cached (outer, inner) triangle pairs within the near cutoff."""
        if "near_tri_pairs" not in self._cache:
            c = self.mesh.centroids
            scale = self._diam
            eta = self.quad.near_eta
            rows, cols = [], []
            chunk = max(1, int(2e7 // max(len(c), 1)))
            for lo in range(0, len(c), chunk):
                d2 = ((c[lo:lo + chunk, None, :] - c[None, :, :]) ** 2).sum(axis=2)
                cut = (eta * (scale[lo:lo + chunk, None] + scale[None, :])) ** 2
                ti, fi = np.nonzero(d2 <= cut)
                keep = (ti + lo) != fi
                rows.append(ti[keep] + lo)
                cols.append(fi[keep])
            self._cache["near_tri_pairs"] = (np.concatenate(rows),
                                             np.concatenate(cols))
        return self._cache["near_tri_pairs"]

    @staticmethod
    def _pair_chunks(n, size=4096):
        for lo in range(0, n, size):
            yield slice(lo, min(lo + size, n))

    def _graded(self, targets, pair_t, pair_f):
        """Graded rule per pair; returned indices are positions in pair_t."""
        return graded_panel_quadrature(
            np.ascontiguousarray(targets[pair_t]), self._tv[pair_f],
            np.arange(len(pair_t)), degree=self.quad.near_degree,
            alpha=self.quad.near_alpha, max_depth=self.quad.max_depth)

    # -- P0 scalar operators -----------------------------------------------------

    def single_layer_matrix(self, k: Wavenumber):
        """Collocation matrix of the single layer on per-triangle densities."""
        key = self._key("S", k)
        if key in self._cache:
            return self._cache[key]
        mesh = self.mesh
        F = mesh.num_triangles
        c = mesh.centroids
        k0 = k.k0
        S = np.empty((F, F), dtype=complex)
        chunk = max(1, int(4e7 // (F * self._qw.shape[1])))
        for lo in range(0, F, chunk):
            d = c[lo:lo + chunk, None, None, :] - self._qp[None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            S[lo:lo + chunk] = np.einsum("ifq,fq->if", _gamma(k0, r), self._qw)
        dp, dw = self._duffy_rules()
        for t in range(F):
            r = np.linalg.norm(c[t][None, :] - dp[t], axis=1)
            S[t, t] = np.sum(_gamma(k0, r) * dw[t])
        ti_all, fi_all = self._near_pairs(c)
        keep = ti_all != fi_all
        ti_all, fi_all = ti_all[keep], fi_all[keep]
        for sl in self._pair_chunks(len(ti_all)):
            ti, fi = ti_all[sl], fi_all[sl]
            rep, qp, qw = self._graded(c, ti, fi)
            r = np.maximum(np.linalg.norm(c[ti][rep] - qp, axis=1), 1e-60)
            acc = np.zeros(len(ti), dtype=complex)
            np.add.at(acc, rep, _gamma(k0, r) * qw)
            d2 = c[ti][:, None, :] - self._qp[fi]
            r2 = np.maximum(np.linalg.norm(d2, axis=-1), 1e-60)
            far = np.einsum("pq,pq->p", _gamma(k0, r2), self._qw[fi])
            S[ti, fi] += acc - far
        self._cache[key] = S
        return S

    def k_matrix(self, k: Wavenumber):
        """Galerkin (P0, area-normalized) Neumann-Poincare operator.

        Entry (i, j): (1/A_i) int_{T_i} int_{T_j} dGamma/dnu_y (x - y). The
        diagonal is closed via the solid-angle identity: the static kernel
        integrates to exactly -1/2 at every face-interior point of a closed
        polyhedron, so the own-panel term equals -1/2 + (dynamic smooth part)
        minus the off-diagonal static row sum. This regularizes the principal
        value and makes the constant density an exact eigenvector of the
        static operator.
        """
        key = self._key("K", k)
        if key in self._cache:
            return self._cache[key]
        k0 = k.k0
        K = self._k_galerkin_raw(k0)
        K0 = K if k0 == 0 else self._k_galerkin_raw(0.0)
        diag = -0.5 - (K0.sum(axis=1) - np.diag(K0)) + np.diag(K0) * 0.0
        if k0 != 0:
            diag = diag + self._k_rowsum_dynamic(k0)
        np.fill_diagonal(K, diag)
        self._cache[key] = K
        return K

    def _k_galerkin_raw(self, k0):
        """Off-diagonal Galerkin entries of K (diagonal left at zero)."""
        mesh = self.mesh
        F = mesh.num_triangles
        nrm = mesh.normals
        oq, ow = self._oqp, self._oqw / mesh.areas[:, None]   # mean over T_i
        Qo = ow.shape[1]
        R = np.empty((F, F), dtype=complex)
        chunk = max(1, int(8e6 // (F * self._qw.shape[1])))
        for lo in range(0, F, chunk):
            d = oq[lo:lo + chunk, :, None, None, :] - self._qp[None, None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            g = _grad_gamma(k0, d, r)
            R[lo:lo + chunk] = -np.einsum("bofqx,fx,fq,bo->bf", g, nrm,
                                          self._qw, ow[lo:lo + chunk])
        np.fill_diagonal(R, 0.0)  # own panel: in-plane, nu_y . grad = 0
        # near corrections: graded inner integrals per outer node
        ti_all, fi_all = self._near_tri_pairs()
        for sl in self._pair_chunks(len(ti_all), 3072):
            ti, fi = ti_all[sl], fi_all[sl]
            tpts = oq[ti].reshape(-1, 3)
            pair_tris = np.repeat(fi, Qo)
            rep, qp, qw = graded_panel_quadrature(
                tpts, self._tv[pair_tris], np.arange(len(tpts)),
                degree=self.quad.near_degree, alpha=self.quad.near_alpha,
                max_depth=self.quad.max_depth)
            d = tpts[rep] - qp
            r = np.maximum(np.linalg.norm(d, axis=1), 1e-60)
            vals = -np.einsum("px,px->p", _grad_gamma(k0, d, r),
                              nrm[pair_tris][rep]) * qw
            acc = np.zeros(len(tpts), dtype=complex)
            np.add.at(acc, rep, vals)
            dd = tpts[:, None, :] - self._qp[pair_tris]
            rr = np.maximum(np.linalg.norm(dd, axis=-1), 1e-60)
            far = -np.einsum("pqx,px,pq->p", _grad_gamma(k0, dd, rr),
                             nrm[pair_tris], self._qw[pair_tris])
            corr = ((acc - far).reshape(len(ti), Qo) * ow[ti]).sum(axis=1)
            np.add.at(R, (ti, fi), corr)
        return R

    def _k_rowsum_dynamic(self, k0):
        """Mean over T_i of int (dGamma_k - dGamma_0)/dnu_y over the surface
        (smooth kernel; the own panel contributes zero)."""
        mesh = self.mesh
        F = mesh.num_triangles
        nrm = mesh.normals
        oq, ow = self._oqp, self._oqw / mesh.areas[:, None]
        dyn = np.zeros(F, dtype=complex)
        chunk = max(1, int(8e6 // (F * self._qw.shape[1])))
        for lo in range(0, F, chunk):
            d = oq[lo:lo + chunk, :, None, None, :] - self._qp[None, None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            g = _grad_gamma(k0, d, r) - _grad_gamma(0.0, d, r)
            dyn[lo:lo + chunk] = -np.einsum("bofqx,fx,fq,bo->b", g, nrm,
                                            self._qw, ow[lo:lo + chunk])
        return dyn

    def kstar_matrix(self, k: Wavenumber):
        """Adjoint Neumann-Poincare operator.

        For the P0 Galerkin bilinear form the adjoint relation is exact at
        the discrete level, so K* is the area-weighted transpose of K.
        """
        key = self._key("Kstar", k)
        if key not in self._cache:
            A = self.mesh.areas
            K = self.k_matrix(k)
            self._cache[key] = (K.T * A[None, :]) / A[:, None]
        return self._cache[key]

    # -- P0 potentials at arbitrary points ----------------------------------------

    def _p0_potential(self, k, values, targets, kernel):
        """Sum over triangles of int kernel(x - y) value_f ds_y.

        kernel(d, r, k0) returns shape d.shape[:-1] + trailing; trailing may
        be () or (3,).
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        values = np.asarray(values, dtype=complex)
        k0 = k.k0
        probe = kernel(np.array([[1.0, 0, 0]]), np.array([1.0]), k0)
        shape = probe.shape[1:]
        out = np.zeros((len(targets),) + shape, dtype=complex)
        F, Q = self._qw.shape
        chunk = max(1, int(2e7 // (F * Q)))
        wv = self._qw * values[:, None]  # (F, Q)
        for lo in range(0, len(targets), chunk):
            t = targets[lo:lo + chunk]
            d = t[:, None, None, :] - self._qp[None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            kv = kernel(d.reshape(-1, 3), r.reshape(-1), k0)
            kv = kv.reshape((len(t), F, Q) + shape)
            out[lo:lo + chunk] = np.einsum("tfq...,fq->t...", kv, wv)
        ti_all, fi_all = self._near_pairs(targets)
        for sl in self._pair_chunks(len(ti_all)):
            ti, fi = ti_all[sl], fi_all[sl]
            rep, qp, qw = self._graded(targets, ti, fi)
            d = targets[ti][rep] - qp
            r = np.maximum(np.linalg.norm(d, axis=1), 1e-60)
            kv = kernel(d, r, k0)
            contrib = kv * qw[(...,) + (None,) * len(shape)]
            acc = np.zeros((len(ti),) + shape, dtype=complex)
            np.add.at(acc, rep, contrib)
            d2 = targets[ti][:, None, :] - self._qp[fi]
            r2 = np.maximum(np.linalg.norm(d2, axis=-1), 1e-60)
            kv2 = kernel(d2.reshape(-1, 3), r2.reshape(-1), k0)
            kv2 = kv2.reshape((len(ti), Q) + shape)
            far = np.einsum("pq...,pq->p...", kv2, self._qw[fi])
            np.add.at(out, ti,
                      (acc - far) * values[fi][(...,) + (None,) * len(shape)])
        return out

    def single_layer_potential(self, k, values, targets):
        return self._p0_potential(k, values, targets,
                                  lambda d, r, k0: _gamma(k0, r))

    def grad_single_layer(self, k, values, targets):
        return self._p0_potential(k, values, targets,
                                  lambda d, r, k0: _grad_gamma(k0, d, r))

    # -- edge-basis potentials ------------------------------------------------------

    def _current_factors(self, coeffs):
        """Per-triangle affine current J(y) = s_f y - b_f from coefficients."""
        space = self.space
        tv = self._tv
        F = self.mesh.num_triangles
        opp = tv[np.arange(F)[:, None], space.tri_edge_opp]      # (F, 3, 3)
        fac = (space.tri_edge_signs * space.edge_lengths[space.tri_edges]
               / (2.0 * self.mesh.areas[:, None]))               # (F, 3)
        ce = np.asarray(coeffs, dtype=complex)[space.tri_edges]  # (F, 3)
        s = (ce * fac).sum(axis=1)                               # (F,)
        b = np.einsum("fl,flx->fx", ce * fac, opp)               # (F, 3)
        return s, b

    @staticmethod
    def _kernel_apply(kind, k0, d, r, J):
        """kernel(d) acting on current value J; shapes broadcast, out (..., 3)."""
        if kind == "value":
            return _gamma(k0, r)[..., None] * J
        if kind == "curl":
            g = _grad_gamma(k0, d, r)
            return np.cross(g, np.broadcast_to(J, g.shape))
        if kind == "graddiv":
            H = _hess_gamma(k0, d, r)
            return np.einsum("...xy,...y->...x", H, np.broadcast_to(J, d.shape))
        raise ValueError(kind)

    def _rwg_field(self, k, coeffs, targets, kind):
        """A[Phi] (kind='value'), curl A[Phi] ('curl'), grad div A ('graddiv')."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        k0 = k.k0
        s, b = self._current_factors(coeffs)
        J = s[:, None, None] * self._qp - b[:, None, :]          # (F, Q, 3)
        out = np.zeros((len(targets), 3), dtype=complex)
        F, Q = self._qw.shape
        chunk = max(1, int(1.2e7 // (F * Q)))
        for lo in range(0, len(targets), chunk):
            t = targets[lo:lo + chunk]
            d = t[:, None, None, :] - self._qp[None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            v = self._kernel_apply(kind, k0, d, r, J[None])
            out[lo:lo + chunk] = np.einsum("tfqx,fq->tx", v, self._qw)
        ti_all, fi_all = self._near_pairs(targets)
        for sl in self._pair_chunks(len(ti_all)):
            ti, fi = ti_all[sl], fi_all[sl]
            rep, qp, qw = self._graded(targets, ti, fi)
            Jg = self.space.evaluate(np.asarray(coeffs, dtype=complex),
                                     fi[rep], qp)
            d = targets[ti][rep] - qp
            r = np.maximum(np.linalg.norm(d, axis=1), 1e-60)
            v = self._kernel_apply(kind, k0, d, r, Jg) * qw[:, None]
            acc = np.zeros((len(ti), 3), dtype=complex)
            np.add.at(acc, rep, v)
            d2 = targets[ti][:, None, :] - self._qp[fi]
            r2 = np.maximum(np.linalg.norm(d2, axis=-1), 1e-60)
            v2 = self._kernel_apply(kind, k0, d2, r2, J[fi])
            far = np.einsum("pqx,pq->px", v2, self._qw[fi])
            np.add.at(out, ti, acc - far)
        return out

    def vector_layer(self, k, coeffs, targets):
        return self._rwg_field(k, coeffs, targets, "value")

    def curl_vector_layer(self, k, coeffs, targets):
        return self._rwg_field(k, coeffs, targets, "curl")

    def graddiv_vector_layer(self, k, coeffs, targets):
        """Direct Hessian-kernel evaluation; off-surface targets only."""
        return self._rwg_field(k, coeffs, targets, "graddiv")

    def graddiv_vector_layer_transfer(self, k, coeffs, targets):
        """grad div A via surface-divergence transfer: grad S[div Phi]
        (exact identity for div-conforming densities; usable on-surface)."""
        div = self.space.divergence_matrix @ np.asarray(coeffs, dtype=complex)
        return self.grad_single_layer(k, div, targets)

    # -- Galerkin magnetic-dipole operator ---------------------------------------

    def mfie_matrix(self, k: Wavenumber):
        """Galerkin matrix of the magnetic-dipole operator on the edge basis.

        Entry (m, n): int f_m(x) . [nu(x) x (grad Gamma(x - y) x f_n(y))]
        over the two panels of each function. Self panel pairs vanish exactly
        (flat facets); near pairs get graded inner quadrature.
        """
        key = self._key("M", k)
        if key in self._cache:
            return self._cache[key]
        space = self.space
        mesh = self.mesh
        F = mesh.num_triangles
        E = space.num_edges
        if E > DENSE_UNKNOWN_LIMIT:
            raise LinearSolveError(
                f"dense magnetic-dipole matrix with {E} edges exceeds limit")
        k0 = k.k0
        tv = self._tv
        opp = tv[np.arange(F)[:, None], space.tri_edge_opp]
        fac = (space.tri_edge_signs * space.edge_lengths[space.tri_edges]
               / (2.0 * mesh.areas[:, None]))
        M = np.zeros((E, E), dtype=complex)

        Q = self._qw.shape[1]
        Qo = self._oqw.shape[1]
        chunk = max(1, int(1.5e6 // (F * Q)))
        for lo in range(0, F, chunk):
            hi = min(lo + chunk, F)
            To = np.arange(lo, hi)
            x = self._oqp[lo:hi]                       # (B, Qo, 3)
            d = x[:, :, None, None, :] - self._qp[None, None, :, :, :]
            r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
            g = _grad_gamma(k0, d, r) * self._qw[None, None, :, :, None]
            G1 = g.sum(axis=3)                          # (B, Qo, F, 3)
            G2 = np.einsum("bofqx,fqy->bofxy", g, self._qp)
            for bi, t in enumerate(To):
                G1[bi, :, t, :] = 0.0
                G2[bi, :, t, :, :] = 0.0
            self._mfie_scatter(M, To, x, self._oqw[lo:hi], G1, G2, opp, fac)
        self._mfie_near(M, k0, opp, fac)
        self._cache[key] = M
        return M

    def _mfie_scatter(self, M, To, x, ow, G1, G2, opp, fac):
        """Accumulate Galerkin entries from inner-integral moments.

        With u = y - v_b and g = grad Gamma: nu x (g x u) = g (nu.u) - u (nu.g);
        the inner integral is V(b) = G2.nu - G1 (v_b.nu) - G2^T.nu + v_b (nu.G1),
        then K_ab = sum_o w_o (x_o - v_a) . V_o(b).
        """
        space = self.space
        mesh = self.mesh
        B, Qo = x.shape[:2]
        F = mesh.num_triangles
        nu = mesh.normals[To]                           # (B, 3)
        P_yg = np.einsum("bofxy,bx->bofy", G2, nu)      # int y (nu . g)
        P_gy = np.einsum("bofxy,by->bofx", G2, nu)      # int g (nu . y)
        nuG1 = np.einsum("bofx,bx->bof", G1, nu)        # int (nu . g)
        base = P_gy - P_yg                              # (B, Qo, F, 3)
        Kab = np.empty((B, F, 3, 3), dtype=complex)
        for a in range(3):
            pa = x - opp[To][:, None, a, :]             # (B, Qo, 3)
            t1 = np.einsum("box,bofx,bo->bf", pa, base, ow)
            t2 = np.einsum("box,bofx,bo->bf", pa, G1, ow)
            for b in range(3):
                vbnu = opp[:, b, :] @ nu.T              # (F, B)
                pavb = np.einsum("box,fx->bof", pa, opp[:, b, :])
                t3 = np.einsum("bof,bof,bo->bf", pavb, nuG1, ow)
                Kab[:, :, a, b] = t1 - t2 * vbnu.T + t3
        vals = Kab * fac[To][:, None, :, None] * fac[None, :, None, :]
        rows = np.broadcast_to(space.tri_edges[To][:, None, :, None], vals.shape)
        cols = np.broadcast_to(space.tri_edges[None, :, None, :], vals.shape)
        np.add.at(M, (rows.reshape(-1), cols.reshape(-1)), vals.reshape(-1))

    def _mfie_near(self, M, k0, opp, fac):
        """Replace far-rule inner integrals by graded ones for close pairs."""
        ti_all, fi_all = self._near_tri_pairs()
        for sl in self._pair_chunks(len(ti_all), 3072):
            self._mfie_near_chunk(M, k0, opp, fac, ti_all[sl], fi_all[sl])

    def _mfie_near_chunk(self, M, k0, opp, fac, ti, fi):
        space = self.space
        mesh = self.mesh
        if not len(ti):
            return
        Qo = self._oqw.shape[1]
        tpts = self._oqp[ti].reshape(-1, 3)
        pair_tris = np.repeat(fi, Qo)
        rep, qp, qw = graded_panel_quadrature(
            tpts, self._tv[pair_tris], np.arange(len(tpts)),
            degree=self.quad.near_degree, alpha=self.quad.near_alpha,
            max_depth=self.quad.max_depth)
        d = tpts[rep] - qp
        r = np.maximum(np.linalg.norm(d, axis=1), 1e-60)
        g = _grad_gamma(k0, d, r) * qw[:, None]
        G1n = np.zeros((len(tpts), 3), dtype=complex)
        np.add.at(G1n, rep, g)
        G2n = np.zeros((len(tpts), 3, 3), dtype=complex)
        np.add.at(G2n, rep, g[:, :, None] * qp[:, None, :])
        d2_ = tpts[:, None, :] - self._qp[pair_tris]
        r2 = np.maximum(np.linalg.norm(d2_, axis=-1), 1e-60)
        g2 = _grad_gamma(k0, d2_, r2) * self._qw[pair_tris][:, :, None]
        G1 = (G1n - g2.sum(axis=1)).reshape(len(ti), Qo, 3)
        G2 = (G2n - np.einsum("pqx,pqy->pxy", g2, self._qp[pair_tris])
              ).reshape(len(ti), Qo, 3, 3)

        nu = mesh.normals[ti]
        x = self._oqp[ti]
        w = self._oqw[ti]
        P_yg = np.einsum("poxy,px->poy", G2, nu)
        P_gy = np.einsum("poxy,py->pox", G2, nu)
        nuG1 = np.einsum("pox,px->po", G1, nu)
        base = P_gy - P_yg
        Kab = np.empty((len(ti), 3, 3), dtype=complex)
        for a in range(3):
            pa = x - opp[ti][:, None, a, :]
            t1 = np.einsum("pox,pox,po->p", pa, base, w)
            t2 = np.einsum("pox,pox,po->p", pa, G1, w)
            for b in range(3):
                vbnu = np.einsum("px,px->p", opp[fi][:, b, :], nu)
                pavb = np.einsum("pox,px->po", pa, opp[fi][:, b, :])
                t3 = np.einsum("po,po,po->p", pavb, nuG1, w)
                Kab[:, a, b] = t1 - t2 * vbnu + t3
        vals = Kab * fac[ti][:, :, None] * fac[fi][:, None, :]
        rows = np.broadcast_to(space.tri_edges[ti][:, :, None], vals.shape)
        cols = np.broadcast_to(space.tri_edges[fi][:, None, :], vals.shape)
        np.add.at(M, (rows.reshape(-1), cols.reshape(-1)), vals.reshape(-1))

    # -- solves --------------------------------------------------------------------

    def solve_half_minus_kstar(self, k, rhs):
        key = self._key("LU_ImK", k)
        if key not in self._cache:
            F = self.mesh.num_triangles
            self._cache[key] = sla.lu_factor(
                0.5 * np.eye(F) - self.kstar_matrix(k))
        return sla.lu_solve(self._cache[key], np.asarray(rhs, dtype=complex))

    def solve_half_plus_kstar(self, k, rhs):
        """Min-norm least-squares solve: the operator has a one-dimensional
        near-null space on closed surfaces (static monopole mode)."""
        key = self._key("PINV_IpK", k)
        if key not in self._cache:
            A = 0.5 * np.eye(self.mesh.num_triangles) + self.kstar_matrix(k)
            self._cache[key] = np.linalg.pinv(A, rcond=1e-8)
        return self._cache[key] @ np.asarray(rhs, dtype=complex)

    def solve_single_layer(self, k, rhs, cond_limit=1e12):
        key = self._key("LU_S", k)
        if key not in self._cache:
            S = self.single_layer_matrix(k)
            lu = sla.lu_factor(S)
            inv_op = spla.LinearOperator(
                S.shape, dtype=complex,
                matvec=lambda v: sla.lu_solve(lu, v),
                rmatvec=lambda v: np.conj(sla.lu_solve(lu, np.conj(v), trans=1)))
            cond = np.linalg.norm(S, 1) * spla.onenormest(inv_op)
            if cond > cond_limit:
                raise IllConditionedError(
                    f"single-layer condition estimate {cond:.3e} exceeds"
                    f" {cond_limit:.1e}", residual=cond)
            self._cache[key] = lu
        return sla.lu_solve(self._cache[key], np.asarray(rhs, dtype=complex))

    def _mfie_factors(self, k):
        key = self._key("MFIE_FACT", k)
        if key not in self._cache:
            M = self.mfie_matrix(k)
            if self.space.num_edges > 4000:
                # consume the cached operator in place: A = G/2 + M
                self._cache.pop(self._key("M", k), None)
                A = M
            else:
                A = M.copy()
            Gc = (0.5 * self.space.gram_matrix).tocoo()
            A[Gc.row, Gc.col] += Gc.data
            L = self.space.loops
            Z = L.T.dot(A.T)                    # (A L)^T, dense
            A_LL = np.ascontiguousarray((Z @ L).T)
            self._cache[key] = (A, sla.lu_factor(A_LL))
        return self._cache[key]

    def solve_half_plus_M(self, k, rhs_coeffs, max_kd=None,
                          tol=DEFAULT_SOLVER_TOL):
        """Divergence-constrained solve of (I/2 + M) h = rhs.

        rhs_coeffs : edge coefficients of the rhs field, vector or (E, nrhs).
        Returns (h, solved-system relative residual). Raises
        PreconditionError when k0 * diam exceeds the small-frequency
        threshold (default 0.5, override via max_kd).
        """
        kd = k.k0 * self.mesh.diameter()
        limit = SMALL_K_DIAM if max_kd is None else max_kd
        if kd > limit + 1e-12:
            raise PreconditionError(
                f"k0*diam = {kd:.3f} exceeds the configured threshold {limit}")
        space = self.space
        rhs = np.asarray(rhs_coeffs, dtype=complex)
        single = rhs.ndim == 1
        rhs = rhs.reshape(space.num_edges, -1)
        D = space.divergence_matrix
        div_rhs = D @ rhs
        hp = np.zeros_like(rhs)
        nontrivial = np.linalg.norm(div_rhs, axis=0) > 0
        if np.any(nontrivial):
            d = self.solve_half_minus_kstar(k, div_rhs[:, nontrivial])
            DS, lu = space.star_lift_factor()
            hp[:, nontrivial] = space.stars @ lu.solve(DS.T @ d)
        A, lu_LL = self._mfie_factors(k)
        L = space.loops
        G = space.gram_matrix
        b = L.T @ (G @ rhs) - L.T @ (A @ hp)
        gam = sla.lu_solve(lu_LL, b)
        h = hp + L @ gam
        rl = (L.T @ (G @ rhs)) - L.T @ (A @ h)
        den = np.linalg.norm(L.T @ (G @ rhs), axis=0)
        den = np.where(den == 0, 1.0, den)
        res = float(np.max(np.linalg.norm(rl, axis=0) / den))
        if not np.isfinite(res):
            raise LinearSolveError("magnetic-dipole solve failed", residual=res)
        return (h[:, 0], res) if single else (h, res)
