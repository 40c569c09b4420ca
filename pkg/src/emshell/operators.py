"""Operation-level API over the surface and volume operator factories.

These wrappers take and return density objects and keep the contracts
(trace and jump formulas, tangential invariants) testable without touching
the assembly classes directly.
"""

import numpy as np
import scipy.sparse.linalg as spla

from .densities import ScalarSurfaceDensity, TangentialDensity, VolumeField
from .errors import AccuracyError, InvalidArgumentError
from .kernels import Wavenumber
from .quadrature import point_triangle_distance
from .surface_ops import BoundaryOperators
from .volume_ops import VolumeOperators


def volume_potential(k: Wavenumber, source: VolumeField, targets,
                     ops: VolumeOperators = None):
    """Newtonian/Helmholtz potential of a per-cell source, componentwise."""
    ops = ops or VolumeOperators(source.mesh)
    return ops.potential(k, source.values, targets)


def single_layer(k: Wavenumber, density: ScalarSurfaceDensity, targets,
                 ops: BoundaryOperators = None):
    """Single-layer potential; on-surface targets must be the collocation
    points (triangle centroids), where the Duffy-regularized matrix applies."""
    ops = ops or BoundaryOperators(density.mesh)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    c = density.mesh.centroids
    scale = density.mesh.diameter()
    out = np.empty(len(targets), dtype=complex)
    # match targets against collocation points
    d2 = ((targets[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    on_surf = np.sqrt(d2[np.arange(len(targets)), nearest]) < 1e-9 * scale
    if np.any(on_surf):
        S = ops.single_layer_matrix(k)
        out[on_surf] = (S @ density.values)[nearest[on_surf]]
    if np.any(~on_surf):
        off = targets[~on_surf]
        _assert_off_surface(density.mesh, off, "single layer")
        out[~on_surf] = ops.single_layer_potential(k, density.values, off)
    return out


def _assert_off_surface(mesh, targets, label, factor=0.02):
    tv = mesh.triangle_vertices()
    hmin = np.sqrt(2.0 * mesh.areas.min())
    # cheap reject: centroid distances
    c = mesh.centroids
    d = np.sqrt(((targets[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))
    close = d.min(axis=1) < 2.0 * hmin
    if not np.any(close):
        return
    idx = np.nonzero(close)[0]
    near_tri = d[idx].argmin(axis=1)
    exact = point_triangle_distance(targets[idx], tv[near_tri])
    if np.any(exact < factor * hmin):
        raise AccuracyError(
            f"{label}: target within {factor} panel sizes of the surface;"
            " use the on-surface (regularized) path")


def neumann_poincare(k: Wavenumber, density: ScalarSurfaceDensity,
                     adjoint: bool = True, ops: BoundaryOperators = None
                     ) -> ScalarSurfaceDensity:
    """Principal-value double-layer operator (or its adjoint) on the surface."""
    ops = ops or BoundaryOperators(density.mesh)
    mat = ops.kstar_matrix(k) if adjoint else ops.k_matrix(k)
    return ScalarSurfaceDensity(density.mesh, mat @ density.values)


def vector_single_layer(k: Wavenumber, density: TangentialDensity, targets,
                        ops: BoundaryOperators = None):
    """Componentwise single layer of a tangential density at targets."""
    ops = ops or _ops_for(density, ops)
    return ops.vector_layer(k, density.coefficients, targets)


def _ops_for(density: TangentialDensity, ops):
    if ops is not None:
        return ops
    bo = BoundaryOperators(density.space.mesh)
    bo.space = density.space
    return bo


def magnetic_dipole_M(k: Wavenumber, density: TangentialDensity,
                      ops: BoundaryOperators = None) -> TangentialDensity:
    """Galerkin projection of the magnetic-dipole operator applied to the
    density: the tangential part of nu x curl A with the jump removed."""
    ops = _ops_for(density, ops)
    M = ops.mfie_matrix(k)
    G = ops.space.gram_matrix.tocsc()
    key = ("GRAM_LU",)
    if key not in ops._cache:
        ops._cache[key] = spla.splu(G.astype(complex))
    coeffs = ops._cache[key].solve(M @ density.coefficients.astype(complex))
    return TangentialDensity(ops.space, coeffs)


def apply_D2_potential(k: Wavenumber, which: str, source, targets,
                       ops=None, on_surface=False):
    """grad div of the volume potential or of the vector single layer.

    which='volume': source is a VolumeField; the analytic cell potentials
    make any target admissible (the self-cell term is exact).
    which='vector_layer': source is a TangentialDensity; off-surface targets
    use the Hessian kernel directly, on-surface ones the divergence-transfer
    identity in the principal-value (two-sided mean) sense.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if which == "volume":
        vo = ops or VolumeOperators(source.mesh)
        return vo.graddiv(k, source.values, targets)
    if which != "vector_layer":
        raise InvalidArgumentError(f"unknown potential selector {which!r}")
    bo = _ops_for(source, ops)
    if not on_surface:
        _assert_off_surface(source.space.mesh, targets, "grad-div layer")
        return bo.graddiv_vector_layer(k, source.coefficients, targets)
    # regularized on-surface path: mean of two-sided extrapolated limits of
    # grad S[div Phi]; the means cancel the normal jump (principal value)
    mesh = source.space.mesh
    c = mesh.centroids
    d2 = ((targets[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    n = mesh.normals[nearest]
    hT = np.sqrt(2.0 * mesh.areas[nearest])
    div = source.surface_divergence()
    vals = []
    for t in (0.4, 0.2):
        plus = bo.grad_single_layer(k, div, targets + t * hT[:, None] * n)
        minus = bo.grad_single_layer(k, div, targets - t * hT[:, None] * n)
        vals.append(0.5 * (plus + minus))
    return 2.0 * vals[1] - vals[0]


def solve_boundary_operator(op: str, rhs, k: Wavenumber = None,
                            ops: BoundaryOperators = None, max_kd=None):
    """Invert one of the four boundary operators.

    op : 'half_plus_M' (rhs TangentialDensity), 'half_minus_kstar',
         'half_plus_kstar', or 'single_layer' (rhs ScalarSurfaceDensity).
    Returns (density, diagnostics dict with the relative residual).
    """
    k = k or Wavenumber(0.0)
    if op == "half_plus_M":
        if not isinstance(rhs, TangentialDensity):
            raise InvalidArgumentError("half_plus_M needs a tangential density")
        bo = _ops_for(rhs, ops)
        h, res = bo.solve_half_plus_M(k, rhs.coefficients, max_kd=max_kd)
        return TangentialDensity(bo.space, h), {"residual": res}
    if not isinstance(rhs, ScalarSurfaceDensity):
        raise InvalidArgumentError(f"{op} needs a scalar surface density")
    bo = ops or BoundaryOperators(rhs.mesh)
    if op == "half_minus_kstar":
        x = bo.solve_half_minus_kstar(k, rhs.values)
        A = 0.5 * np.eye(len(x)) - bo.kstar_matrix(k)
    elif op == "half_plus_kstar":
        x = bo.solve_half_plus_kstar(k, rhs.values)
        A = 0.5 * np.eye(len(x)) + bo.kstar_matrix(k)
    elif op == "single_layer":
        x = bo.solve_single_layer(k, rhs.values)
        A = bo.single_layer_matrix(k)
    else:
        raise InvalidArgumentError(f"unknown operator {op!r}")
    num = np.linalg.norm(A @ x - rhs.values)
    den = max(np.linalg.norm(rhs.values), 1e-300)
    return ScalarSurfaceDensity(rhs.mesh, x), {"residual": float(num / den)}
