"""Coupled boundary/volume solver for scattering from a conducting obstacle
embedded in a dielectric shell.

Unknowns: the total electric field per volume cell and the tangential current
on the obstacle boundary. The boundary current is eliminated through the
divergence-constrained magnetic-dipole solve, leaving one square volume
system; the current is recovered by back-substitution. All operator
assemblies share frequency-independent quadrature layouts, so the solved
fields are analytic in frequency down to the static limit.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .densities import VolumeField, TangentialDensity
from .errors import (DomainError, InvalidArgumentError, LinearSolveError,
                     PreconditionError)
from .geometry import SurfaceMesh, VolumeMesh, points_inside
from .kernels import Wavenumber
from .surface_ops import BoundaryOperators, QuadConfig
from .volume_ops import VolumeOperators

MAX_K_DIAM = 2.0


@dataclass
class MaterialMap:
    """Permittivity sampled per volume cell, plus background constants.

    The model assumptions are sigma = 0 and mu = mu0 everywhere; the
    relative contrast (eps - eps0)/eps0 is supported on the shell cells.
    """

    eps0: float
    mu0: float
    eps_cells: np.ndarray
    boundary_value: float = None  # eps on the obstacle boundary, if constant

    def __post_init__(self):
        self.eps_cells = np.asarray(self.eps_cells, dtype=float)
        if self.eps0 <= 0 or self.mu0 <= 0:
            raise InvalidArgumentError("eps0 and mu0 must be positive")
        if np.any(self.eps_cells <= 0):
            raise InvalidArgumentError("eps(x) must be positive")

    @property
    def contrast(self):
        return (self.eps_cells - self.eps0) / self.eps0

    @classmethod
    def constant(cls, vmesh: VolumeMesh, eps, eps0=1.0, mu0=1.0):
        n = vmesh.num_cells if vmesh is not None else 0
        return cls(eps0, mu0, np.full(n, float(eps)), boundary_value=float(eps))

    @classmethod
    def radial_profile(cls, vmesh: VolumeMesh, radii, eps_values,
                       center=(0.0, 0.0, 0.0), eps0=1.0, mu0=1.0,
                       obstacle: SurfaceMesh = None):
        """eps(r) by linear interpolation of a table at cell centroids."""
        r = np.linalg.norm(vmesh.centroids - np.asarray(center), axis=1)
        eps = np.interp(r, np.asarray(radii, dtype=float),
                        np.asarray(eps_values, dtype=float))
        bval = None
        if obstacle is not None:
            bval = cls._boundary_eps(vmesh, eps, obstacle)
        return cls(eps0, mu0, eps, boundary_value=bval)

    @staticmethod
    def _boundary_eps(vmesh, eps, obstacle, rtol=1e-9):
        """eps shared by cells touching the obstacle, or None if they differ."""
        diag = vmesh.lattice_pitch * np.sqrt(3.0) if vmesh.lattice_pitch else \
            (vmesh.volumes.mean()) ** (1 / 3) * 2
        d = np.full(vmesh.num_cells, np.inf)
        verts = obstacle.vertices
        for lo in range(0, vmesh.num_cells, 1024):
            c = vmesh.centroids[lo:lo + 1024]
            dd = np.linalg.norm(c[:, None, :] - verts[None, :, :], axis=2)
            d[lo:lo + 1024] = dd.min(axis=1)
        touching = d <= diag
        if not np.any(touching):
            return None
        vals = eps[touching]
        if np.ptp(vals) <= rtol * max(abs(vals).max(), 1e-300):
            return float(vals[0])
        return None


@dataclass(frozen=True)
class PlaneWave:
    """Incident plane wave: E = p/sqrt(eps0) e^{i k0 x.d}."""

    direction: np.ndarray
    polarization: np.ndarray
    wavenumber: Wavenumber

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        p = np.asarray(self.polarization, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise InvalidArgumentError("direction must be a unit vector")
        if abs(d @ p) > 1e-12 * max(np.linalg.norm(p), 1e-300):
            raise InvalidArgumentError("polarization must be orthogonal to d")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "polarization", p)

    def e_inc(self, x):
        x = np.atleast_2d(x)
        k = self.wavenumber
        phase = np.exp(1j * k.k0 * (x @ self.direction))
        return (self.polarization / np.sqrt(k.eps0))[None, :] * phase[:, None]

    def h_inc(self, x):
        x = np.atleast_2d(x)
        k = self.wavenumber
        dp = np.cross(self.direction, self.polarization)
        phase = np.exp(1j * k.k0 * (x @ self.direction))
        return (dp / np.sqrt(k.mu0))[None, :] * phase[:, None]


class DirectionGrid:
    """Product quadrature grid on the unit sphere (Gauss in cos(theta),
    uniform in phi); weights sum to 4 pi exactly."""

    def __init__(self, n_theta=9, n_phi=None):
        n_phi = n_phi or 2 * n_theta
        mu, wmu = np.polynomial.legendre.leggauss(n_theta)
        phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
        st = np.sqrt(1.0 - mu**2)
        pts = np.empty((n_theta * n_phi, 3))
        pts[:, 0] = (st[:, None] * np.cos(phi)[None, :]).reshape(-1)
        pts[:, 1] = (st[:, None] * np.sin(phi)[None, :]).reshape(-1)
        pts[:, 2] = np.repeat(mu, n_phi)
        self.points = pts
        self.weights = np.repeat(wmu, n_phi) * (2.0 * np.pi / n_phi)
        self.thetas = np.arccos(np.repeat(mu, n_phi))
        self.phis = np.tile(phi, n_theta)

    def rotated(self, Rmat):
        g = DirectionGrid.__new__(DirectionGrid)
        g.points = self.points @ np.asarray(Rmat).T
        g.weights = self.weights
        g.thetas = self.thetas
        g.phis = self.phis
        return g

    @classmethod
    def single(cls, direction):
        """Degenerate one-direction grid (for forward-amplitude sampling)."""
        g = cls.__new__(cls)
        d = np.asarray(direction, dtype=float)[None, :]
        g.points = d / np.linalg.norm(d)
        g.weights = np.array([4.0 * np.pi])
        g.thetas = np.array([np.arccos(np.clip(g.points[0, 2], -1, 1))])
        g.phis = np.array([np.arctan2(g.points[0, 1], g.points[0, 0])])
        return g


@dataclass
class FarFieldPattern:
    """Sampled far field on a direction grid, one frequency."""

    grid: DirectionGrid
    samples: np.ndarray
    omega: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.shape != (len(self.grid.points), 3):
            raise InvalidArgumentError("samples must be (n_directions, 3)")

    def transversality(self):
        num = np.abs(np.einsum("ix,ix->i", self.grid.points, self.samples))
        den = np.linalg.norm(self.samples, axis=1)
        scale = den.max()
        if scale == 0:
            return 0.0
        return float((num / np.maximum(den, 1e-12 * scale)).max())

    def l2_norm(self):
        return float(np.sqrt(np.sum(
            self.grid.weights * np.sum(np.abs(self.samples) ** 2, axis=1))))

    def l2_distance(self, other):
        if other.samples.shape != self.samples.shape:
            raise InvalidArgumentError("far-field grids do not match")
        d = self.samples - other.samples
        return float(np.sqrt(np.sum(
            self.grid.weights * np.sum(np.abs(d) ** 2, axis=1))))


class ForwardModel:
    """Meshes plus cached operator factories; reusable across frequencies."""

    def __init__(self, obstacle: SurfaceMesh = None, shell: VolumeMesh = None,
                 quad: QuadConfig = None):
        if obstacle is None and shell is None:
            raise InvalidArgumentError("need an obstacle, a shell, or both")
        self.obstacle = obstacle
        self.shell = shell
        self.boundary = BoundaryOperators(obstacle, quad) if obstacle is not None else None
        self.volume = VolumeOperators(shell) if shell is not None else None
        self._tmat_cache = {}
        self._cvol_cache = {}

    def diameter(self):
        """Largest axis extent of the scene."""
        meshes = [m for m in (self.obstacle, self.shell) if m is not None]
        lo = np.min([m.vertices.min(axis=0) for m in meshes], axis=0)
        hi = np.max([m.vertices.max(axis=0) for m in meshes], axis=0)
        return float((hi - lo).max())

    # -- coupling matrices ------------------------------------------------------

    def trace_matrix(self, k: Wavenumber):
        """(E, 3C) map: cell field w -> edge interpolant of nu x DV[w],
        D = k0^2 I + grad div.

        The grad-div part uses endpoint differences of the scalar potential
        div V[w] at mesh vertices, so its образ is exactly divergence-free;
        the k0^2 part uses edge Gauss interpolation of V[w].
        """
        key = round(float(k.k0), 14)
        if key in self._tmat_cache:
            return self._tmat_cache[key]
        space = self.boundary.space
        mesh = self.obstacle
        C = self.shell.num_cells
        # potential-difference part
        gv = self.volume._pair_data(k, mesh.vertices, want_hess=False)["grad"]
        Uv = gv.reshape(len(mesh.vertices), 3 * C)           # div V[w] at verts
        vi = space.edge_vertices[:, 0]
        vj = space.edge_vertices[:, 1]
        T = -(Uv[vj] - Uv[vi]) / space.edge_lengths[:, None]
        if k.k0 != 0.0:
            pts, wts = space.edge_quadrature_points()
            vals = self.volume._pair_data(
                k, pts.reshape(-1, 3), want_hess=False)["value"]
            vals = vals.reshape(space.num_edges, len(wts), C)
            t = space.edge_tangents()
            # c_e = -sum_n w_n (V[w](x_en)) . t_e, per source component
            Tval = -np.einsum("enc,n,ex->ecx", vals, wts, t)
            T = T + k.k0**2 * Tval.reshape(space.num_edges, 3 * C)
        self._tmat_cache[key] = T
        return T

    def curl_coupling_matrix(self, k: Wavenumber):
        """(3C, E) map: edge coefficients -> curl A at shell centroids."""
        key = round(float(k.k0), 14)
        if key in self._cvol_cache:
            return self._cvol_cache[key]
        out = _curl_layer_matrix(self.boundary, k, self.shell.centroids)
        self._cvol_cache[key] = out
        return out

    def clear_coupling_cache(self):
        self._tmat_cache.clear()
        self._cvol_cache.clear()


def _curl_layer_matrix(bo: BoundaryOperators, k: Wavenumber, targets):
    """(3T, E) matrix of curl A[f_e] at targets, with near-pair grading."""
    space = bo.space
    mesh = bo.mesh
    F = mesh.num_triangles
    E = space.num_edges
    k0 = k.k0
    targets = np.atleast_2d(targets)
    nt = len(targets)
    tv = mesh.triangle_vertices()
    opp = tv[np.arange(F)[:, None], space.tri_edge_opp]       # (F, 3, 3)
    fac = (space.tri_edge_signs * space.edge_lengths[space.tri_edges]
           / (2.0 * mesh.areas[:, None]))                     # (F, 3)
    from .surface_ops import _grad_gamma

    out = np.zeros((nt, 3, E), dtype=complex)
    Q = bo._qw.shape[1]
    chunk = max(1, int(8e6 // (F * Q)))

    def moments_to_cols(m1, m2, rows, tris):
        # column for local basis a of triangle f: fac * (axial(m2) - m1 x v_a)
        cr2 = np.stack([m2[..., 1, 2] - m2[..., 2, 1],
                        m2[..., 2, 0] - m2[..., 0, 2],
                        m2[..., 0, 1] - m2[..., 1, 0]], axis=-1)
        for a in range(3):
            cols = space.tri_edges[tris, a]
            va = opp[tris, a]
            val = fac[tris, a][..., None] * (cr2 - np.cross(m1, np.broadcast_to(
                va, m1.shape)))
            np.add.at(out, (rows, slice(None), cols),
                      np.moveaxis(val, -1, 1) if val.ndim == 3 else val)

    for lo in range(0, nt, chunk):
        t = targets[lo:lo + chunk]
        d = t[:, None, None, :] - bo._qp[None, :, :, :]
        r = np.maximum(np.linalg.norm(d, axis=-1), 1e-60)
        g = _grad_gamma(k0, d, r) * bo._qw[None, :, :, None]
        m1 = g.sum(axis=2)                                   # (B, F, 3)
        m2 = np.einsum("bfqx,fqy->bfxy", g, bo._qp)
        rows = np.repeat(np.arange(lo, min(lo + chunk, nt)), F)
        moments_to_cols(m1.reshape(-1, 3), m2.reshape(-1, 3, 3), rows,
                        np.tile(np.arange(F), len(t)))
    # near corrections
    ti_all, fi_all = bo._near_pairs(targets)
    for sl in bo._pair_chunks(len(ti_all)):
        ti, fi = ti_all[sl], fi_all[sl]
        rep, qp, qw = bo._graded(targets, ti, fi)
        d = targets[ti][rep] - qp
        r = np.maximum(np.linalg.norm(d, axis=1), 1e-60)
        g = _grad_gamma(k0, d, r) * qw[:, None]
        m1 = np.zeros((len(ti), 3), dtype=complex)
        np.add.at(m1, rep, g)
        m2 = np.zeros((len(ti), 3, 3), dtype=complex)
        np.add.at(m2, rep, g[:, :, None] * qp[:, None, :])
        d2 = targets[ti][:, None, :] - bo._qp[fi]
        r2 = np.maximum(np.linalg.norm(d2, axis=-1), 1e-60)
        g2 = _grad_gamma(k0, d2, r2) * bo._qw[fi][:, :, None]
        m1 -= g2.sum(axis=1)
        m2 -= np.einsum("pqx,pqy->pxy", g2, bo._qp[fi])
        moments_to_cols(m1, m2, ti, fi)
    return out.reshape(3 * nt, E)


@dataclass
class ScatteringSolution:
    """Solved fields at one frequency, with evaluators."""

    model: ForwardModel
    material: MaterialMap
    wave: PlaneWave
    e_cells: np.ndarray          # (C, 3) total E at shell centroids (or empty)
    current: np.ndarray          # (E,) edge coefficients of the PEC current
    residual: float
    iterations: int = 1

    @property
    def k(self):
        return self.wave.wavenumber

    def current_density(self):
        if self.model.boundary is None:
            return None
        return TangentialDensity(self.model.boundary.space, self.current)

    def _contrast_source(self):
        if self.model.shell is None or self.e_cells.size == 0:
            return None
        return self.material.contrast[:, None] * self.e_cells

    def evaluate_e(self, targets):
        """Total E by the representation formula; targets outside the obstacle."""
        targets = np.atleast_2d(targets)
        self._check_domain(targets)
        out = self.wave.e_inc(targets).astype(complex)
        if self.model.boundary is not None:
            out += self.model.boundary.curl_vector_layer(
                self.k, self.current, targets)
        src = self._contrast_source()
        if src is not None:
            out += self.model.volume.graddiv(self.k, src, targets, shifted=True)
        return out

    def evaluate_h(self, targets):
        """Total H from the second representation line (not valid at omega=0)."""
        k = self.k
        if k.omega == 0:
            raise PreconditionError(
                "H via the dynamic representation needs omega > 0; use the"
                " static module for the zero-frequency limit")
        targets = np.atleast_2d(targets)
        self._check_domain(targets)
        out = self.wave.h_inc(targets).astype(complex)
        pref = 1.0 / (1j * k.omega * k.mu0)
        src = self._contrast_source()
        if src is not None:
            out += pref * k.k0**2 * self.model.volume.curl(k, src, targets)
        if self.model.boundary is not None:
            bo = self.model.boundary
            # grad-div of the layer by divergence transfer (exact identity
            # for div-conforming currents, stable down to omega -> 0)
            out += pref * (k.k0**2 * bo.vector_layer(k, self.current, targets)
                           + bo.graddiv_vector_layer_transfer(
                               k, self.current, targets))
        return out

    def _check_domain(self, targets):
        if self.model.obstacle is not None:
            if np.any(points_inside(targets, self.model.obstacle)):
                raise DomainError("target inside the obstacle")

    def far_field(self, grid: DirectionGrid) -> FarFieldPattern:
        """Far-field pattern: E_s(R xhat) ~ e^{ik R}/R * pattern(xhat)."""
        k = self.k
        k0 = k.k0
        xh = grid.points
        out = np.zeros((len(xh), 3), dtype=complex)
        if self.model.boundary is not None and k0 > 0:
            bo = self.model.boundary
            s, b = bo._current_factors(self.current)
            J = s[:, None, None] * bo._qp - b[:, None, :]     # (F, Q, 3)
            phase = np.exp(-1j * k0 * np.einsum("dx,fqx->dfq", xh, bo._qp))
            mom = np.einsum("dfq,fq,fqx->dx", phase, bo._qw, J)
            out += 1j * k0 / (4.0 * np.pi) * np.cross(xh, mom)
        src = self._contrast_source()
        if src is not None and k0 > 0:
            c = self.model.shell.centroids
            phase = np.exp(-1j * k0 * (xh @ c.T))
            mom = np.einsum("dc,c,cx->dx", phase, self.model.shell.volumes, src)
            mom -= xh * np.einsum("dx,dx->d", xh, mom)[:, None]
            out += k0**2 / (4.0 * np.pi) * mom
        return FarFieldPattern(grid, out, k.omega)

    def pec_trace_residual(self, offsets=(0.4, 0.2)):
        """|nu x E| on the obstacle boundary relative to the incident trace,
        via extrapolated exterior offsets."""
        mesh = self.model.obstacle
        c, n = mesh.centroids, mesh.normals
        hT = np.sqrt(2.0 * mesh.areas)
        vals = []
        for t in offsets:
            e = self.evaluate_e(c + t * hT[:, None] * n)
            vals.append(np.cross(n, e))
        w = offsets[0] / (offsets[0] - offsets[1])
        trace = (1 - w) * vals[0] + w * vals[1]
        num = np.sqrt(np.sum(mesh.areas * np.sum(np.abs(trace) ** 2, axis=1)))
        inc = np.cross(n, self.wave.e_inc(c))
        den = np.sqrt(np.sum(mesh.areas * np.sum(np.abs(inc) ** 2, axis=1)))
        return float(num / den)


def assemble_and_solve(material: MaterialMap, wave: PlaneWave,
                       model: ForwardModel, max_k_diam=MAX_K_DIAM,
                       tol=1e-10) -> ScatteringSolution:
    """Solve the coupled system for the shell field and the PEC current."""
    k = wave.wavenumber
    diam = model.diameter()
    if k.k0 * diam > max_k_diam + 1e-12:
        raise PreconditionError(
            f"k0*diam(scene) = {k.k0 * diam:.3f} outside the validated band"
            f" (max {max_k_diam})")
    has_b = model.boundary is not None
    has_v = model.shell is not None and np.any(material.contrast != 0)

    if has_b:
        bo = model.boundary
        space = bo.space
        cE = space.interpolate_tangential_trace(wave.e_inc)
        b_kd = None if k.k0 == 0 else k.k0 * model.obstacle.diameter() + 0.1
    if not has_v:
        e_cells = np.zeros((0, 3), dtype=complex)
        if not has_b:
            raise InvalidArgumentError("empty scene")
        phi, res = bo.solve_half_plus_M(k, -cE, max_kd=b_kd)
        return ScatteringSolution(model, material, wave, e_cells, phi, res)

    vo = model.volume
    C = model.shell.num_cells
    eps_t = material.contrast
    Deps = np.repeat(eps_t, 3)
    P = vo.graddiv_matrix(k)
    rhs = wave.e_inc(model.shell.centroids).reshape(-1)
    A = np.eye(3 * C, dtype=complex) - P * Deps[None, :]
    phi_inc = None
    if has_b:
        T = model.trace_matrix(k)
        Cvol = model.curl_coupling_matrix(k)
        X, _ = bo.solve_half_plus_M(k, T * Deps[None, :], max_kd=b_kd)
        A += Cvol @ X
        phi_inc, _ = bo.solve_half_plus_M(k, cE, max_kd=b_kd)
        rhs = rhs - Cvol @ phi_inc
    try:
        lu = sla.lu_factor(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise LinearSolveError(f"volume system factorization failed: {exc}")
    e_flat = sla.lu_solve(lu, rhs)
    res = float(np.linalg.norm(A @ e_flat - rhs) / np.linalg.norm(rhs))
    if res > 1e4 * tol:
        raise LinearSolveError("volume system residual too large", residual=res)
    e_cells = e_flat.reshape(C, 3)
    if has_b:
        phi = -(phi_inc + X @ e_flat)
    else:
        phi = np.zeros(0, dtype=complex)
    return ScatteringSolution(model, material, wave, e_cells, phi, res)


def evaluate_fields(sol: ScatteringSolution, targets, which="both"):
    """E and/or H at arbitrary targets outside the obstacle."""
    if which == "E":
        return sol.evaluate_e(targets)
    if which == "H":
        return sol.evaluate_h(targets)
    if which == "both":
        return sol.evaluate_e(targets), sol.evaluate_h(targets)
    raise InvalidArgumentError(f"unknown field selector {which!r}")


def far_field(sol: ScatteringSolution, grid: DirectionGrid) -> FarFieldPattern:
    return sol.far_field(grid)


def write_far_field_csv(path, patterns):
    """CSV columns: freq,theta,phi,ReEx,ImEx,ReEy,ImEy,ReEz,ImEz."""
    if isinstance(patterns, FarFieldPattern):
        patterns = [patterns]
    with open(path, "w") as f:
        f.write("freq,theta,phi,ReEx,ImEx,ReEy,ImEy,ReEz,ImEz\n")
        for p in patterns:
            for i in range(len(p.grid.points)):
                s = p.samples[i]
                row = [p.omega, p.grid.thetas[i], p.grid.phis[i],
                       s[0].real, s[0].imag, s[1].real, s[1].imag,
                       s[2].real, s[2].imag]
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_far_field_csv(path, grid: DirectionGrid = None):
    """Read patterns back; returns list of (omega, samples) tuples."""
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    out = []
    for om in np.unique(data[:, 0]):
        rows = data[data[:, 0] == om]
        samples = rows[:, 3::2] + 1j * rows[:, 4::2]
        out.append((float(om), samples))
    return out
