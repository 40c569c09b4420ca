"""Volume potential operators on lattice tetrahedral meshes.

Static (zero-frequency) cell interactions use the closed-form polyhedron
potentials, so the grad-div kernel's strong singularity is handled exactly,
self cells included. The frequency-dependent remainder (gamma_k - gamma_0)
is smooth and integrated by midpoint subdivision of the source cells. Cell
interactions on the uniform Kuhn lattice depend only on the cube offset and
the two tet shapes, so they are tabulated once per wavenumber and gathered
into dense matrices.
"""

import numpy as np

from .errors import InvalidArgumentError
from .geometry import VolumeMesh
from .kernels import Wavenumber, dynamic_part_radial
from .polyhedron import tet_static_interactions
from .quadrature import tet_subdivision_rule


def _dyn_kernel(k0, d, r, want_hess=True):
    """value/grad/hess of (gamma_k - gamma_0) at offsets d, norms r."""
    f, f1, f2 = dynamic_part_radial(k0, r)
    xh = d / r[..., None]
    grad = f1[..., None] * xh
    out = {"value": f, "grad": grad}
    if want_hess:
        outer = xh[..., :, None] * xh[..., None, :]
        eye = np.eye(3)
        out["hess"] = (f1 / r)[..., None, None] * (eye - outer) \
            + f2[..., None, None] * outer
    return out


class VolumeOperators:
    """Potential evaluators and dense interaction matrices for one mesh."""

    def __init__(self, vmesh: VolumeMesh):
        self.mesh = vmesh
        self._tables = {}
        self._lattice = None
        if vmesh.lattice_pitch > 0:
            self._build_lattice_index()

    # -- lattice structure -----------------------------------------------------

    def _build_lattice_index(self):
        m = self.mesh
        h = m.lattice_pitch
        vmin = m.vertices.min(axis=0)
        vint = np.round((m.vertices - vmin) / h).astype(np.int64)
        if np.abs(m.vertices - (vmin + vint * h)).max() > 1e-9 * h:
            self._lattice = None
            return
        tv = vint[m.tetrahedra]                      # (C, 4, 3) lattice coords
        corner = tv.min(axis=1)                      # (C, 3)
        local = tv - corner[:, None, :]
        sig = local.reshape(len(tv), -1)
        uniq, type_id = np.unique(sig, axis=0, return_inverse=True)
        self._lattice = {
            "h": h,
            "vmin": vmin,
            "corner": corner,
            "type": type_id,
            "shapes": uniq.reshape(len(uniq), 4, 3),  # local vertex offsets
        }

    @property
    def is_lattice(self):
        return self._lattice is not None

    def _dyn_level(self, dist_cells):
        lv = np.zeros(dist_cells.shape, dtype=np.int64)
        lv[dist_cells <= 3.0] = 1
        lv[dist_cells <= 1.8] = 2
        return lv

    def interaction_table(self, k: Wavenumber, want_hess=True):
        """Per unique (source type, target type, cube offset): value/grad/hess
        of the unit-density cell potential at the target centroid."""
        kkey = (round(float(k.k0), 14), want_hess)
        if kkey in self._tables:
            return self._tables[kkey]
        if not self.is_lattice:
            raise InvalidArgumentError("interaction tables need a lattice mesh")
        lat = self._lattice
        h = lat["h"]
        corner = lat["corner"]
        tid = lat["type"]
        shapes = lat["shapes"]
        ntype = len(shapes)
        C = self.mesh.num_cells

        # unique keys over all ordered (target, source) cell pairs; the key
        # packs the cube offset (corner_t - corner_s) and both tet types
        span = corner.max(axis=0) - corner.min(axis=0) + 1
        ext = 2 * span - 1
        mult = np.array([ext[1] * ext[2] * ntype * ntype,
                         ext[2] * ntype * ntype, ntype * ntype])
        keys = np.empty((C, C), dtype=np.int64)
        for lo in range(0, C, 512):
            dc = corner[lo:lo + 512, None, :] - corner[None, :, :]
            keys[lo:lo + 512] = ((dc + (span - 1)[None, None, :]) @ mult
                                 + tid[lo:lo + 512, None] * ntype + tid[None, :])
        uniq, inv = np.unique(keys.reshape(-1), return_inverse=True)

        # reconstruct geometry per unique key
        rem = uniq.copy()
        stype = rem % ntype
        rem //= ntype
        ttype = rem % ntype
        rem //= ntype
        dz = rem % ext[2] - (span[2] - 1)
        rem //= ext[2]
        dy = rem % ext[1] - (span[1] - 1)
        dx = rem // ext[1] - (span[0] - 1)
        # representative pair: source tet at cube 0, target centroid at offset
        dcell = np.stack([dx, dy, dz], axis=1).astype(float)
        src = shapes[stype] * h                               # (U, 4, 3)
        targets = (dcell + shapes[ttype].mean(axis=1)) * h    # (U, 3)
        static = tet_static_interactions(targets, src, want_hessian=want_hess)

        val = static["value"].astype(complex)
        grad = static["grad"].astype(complex)
        hess = static["hess"].astype(complex) if want_hess else None
        if k.k0 != 0.0:
            dist = np.abs(dcell).max(axis=1)
            levels = self._dyn_level(dist)
            for lv in np.unique(levels):
                sel = np.nonzero(levels == lv)[0]
                pts, wts = tet_subdivision_rule(src[sel], int(lv))
                d = targets[sel][:, None, :] - pts
                r = np.maximum(np.linalg.norm(d, axis=-1), 1e-8 * h)
                dyn = _dyn_kernel(k.k0, d, r, want_hess)
                val[sel] += np.einsum("uq,uq->u", dyn["value"], wts)
                grad[sel] += np.einsum("uqx,uq->ux", dyn["grad"], wts)
                if want_hess:
                    hess[sel] += np.einsum("uqxy,uq->uxy", dyn["hess"], wts)
        table = {"keys": uniq, "inv": inv.reshape(C, C), "value": val,
                 "grad": grad, "hess": hess}
        self._tables[kkey] = table
        return table

    # -- dense matrices ----------------------------------------------------------

    def graddiv_matrix(self, k: Wavenumber):
        """(3C, 3C) matrix of (k0^2 I + grad div) V acting on per-cell fields.

        Row block t, column block s: k0^2 N_s(x_t) I3 + Hess N_s(x_t), where
        N_s is the unit-density potential of cell s; rows are evaluated at
        cell centroids (target = row).
        """
        tab = self.interaction_table(k, want_hess=True)
        C = self.mesh.num_cells
        inv = tab["inv"]
        blocks = (k.k0**2 * tab["value"][:, None, None] * np.eye(3)
                  + tab["hess"])                      # (U, 3, 3)
        out = np.empty((C, 3, C, 3), dtype=complex)
        for lo in range(0, C, 256):
            out[lo:lo + 256] = blocks[inv[lo:lo + 256]].transpose(0, 2, 1, 3)
        return out.reshape(3 * C, 3 * C)

    def curl_matrix(self, k: Wavenumber):
        """(3C, 3C) matrix of curl V: row t, col s block = skew(grad N_s(x_t))."""
        tab = self.interaction_table(k, want_hess=False)
        C = self.mesh.num_cells
        g = tab["grad"]
        sk = np.zeros((len(g), 3, 3), dtype=complex)
        sk[:, 0, 1] = -g[:, 2]
        sk[:, 0, 2] = g[:, 1]
        sk[:, 1, 0] = g[:, 2]
        sk[:, 1, 2] = -g[:, 0]
        sk[:, 2, 0] = -g[:, 1]
        sk[:, 2, 1] = g[:, 0]
        inv = tab["inv"]
        out = np.empty((C, 3, C, 3), dtype=complex)
        for lo in range(0, C, 256):
            out[lo:lo + 256] = sk[inv[lo:lo + 256]].transpose(0, 2, 1, 3)
        return out.reshape(3 * C, 3 * C)

    # -- evaluators at arbitrary targets -------------------------------------------

    def _pair_data(self, k, targets, want_hess):
        """Static + dynamic potential data for all (target, cell) pairs."""
        m = self.mesh
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        C = m.num_cells
        tv = m.cell_vertices()
        out = {"value": np.empty((len(targets), C), dtype=complex),
               "grad": np.empty((len(targets), C, 3), dtype=complex)}
        if want_hess:
            out["hess"] = np.empty((len(targets), C, 3, 3), dtype=complex)
        scale = (m.volumes.mean()) ** (1.0 / 3.0)
        chunk = max(1, int(3e5 // C))
        for lo in range(0, len(targets), chunk):
            t = targets[lo:lo + chunk]
            nt = len(t)
            tt = np.repeat(t, C, axis=0)
            ss = np.tile(tv, (nt, 1, 1))
            stat = tet_static_interactions(tt, ss, want_hessian=want_hess)
            out["value"][lo:lo + chunk] = stat["value"].reshape(nt, C)
            out["grad"][lo:lo + chunk] = stat["grad"].reshape(nt, C, 3)
            if want_hess:
                out["hess"][lo:lo + chunk] = stat["hess"].reshape(nt, C, 3, 3)
            if k.k0 != 0.0:
                cent = m.centroids
                dist = np.linalg.norm(t[:, None, :] - cent[None, :, :], axis=2)
                lvl = self._dyn_level(dist / max(scale, 1e-30))
                for lv in np.unique(lvl):
                    pi, ci = np.nonzero(lvl == lv)
                    pts, wts = tet_subdivision_rule(tv[ci], int(lv))
                    d = t[pi][:, None, :] - pts
                    r = np.maximum(np.linalg.norm(d, axis=-1), 1e-8 * scale)
                    dyn = _dyn_kernel(k.k0, d, r, want_hess)
                    out["value"][lo + pi, ci] += np.einsum(
                        "pq,pq->p", dyn["value"], wts)
                    out["grad"][lo + pi, ci] += np.einsum(
                        "pqx,pq->px", dyn["grad"], wts)
                    if want_hess:
                        out["hess"][lo + pi, ci] += np.einsum(
                            "pqxy,pq->pxy", dyn["hess"], wts)
        return out

    def potential(self, k, cell_values, targets):
        """V[source](x): sum of unit-cell potentials times cell values.

        cell_values : (C,) scalars or (C, 3) vectors; applied componentwise.
        """
        data = self._pair_data(k, targets, want_hess=False)
        cv = np.asarray(cell_values, dtype=complex)
        if cv.ndim == 1:
            return data["value"] @ cv
        return np.einsum("tc,cx->tx", data["value"], cv)

    def divergence(self, k, cell_values, targets):
        """div V[source](x) = sum grad N_c . value_c (scalar potential)."""
        data = self._pair_data(k, targets, want_hess=False)
        return np.einsum("tcx,cx->t", data["grad"],
                         np.asarray(cell_values, dtype=complex))

    def curl(self, k, cell_values, targets):
        data = self._pair_data(k, targets, want_hess=False)
        return np.cross(data["grad"],
                        np.asarray(cell_values, dtype=complex)[None, :, :]
                        ).sum(axis=1)

    def graddiv(self, k, cell_values, targets, shifted=False):
        """grad div V[source](x); with shifted=True adds k0^2 V (full
        Helmholtz-shifted grad-div operator)."""
        data = self._pair_data(k, targets, want_hess=True)
        cv = np.asarray(cell_values, dtype=complex)
        out = np.einsum("tcxy,cy->tx", data["hess"], cv)
        if shifted:
            out = out + k.k0**2 * np.einsum("tc,cx->tx", data["value"], cv)
        return out
