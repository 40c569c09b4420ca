"""Static (zero-frequency) operators of the coupled scattering problem and
numerical verification of the low-frequency structure.

The central objects are built from the k = 0 kernels only: the shell
polarization-feedback operator (contrast response corrected by the obstacle
boundary), its magnetic counterpart (which must annihilate), the
obstacle-corrected incident fields, and the leading-order field expansion.
Since the dynamic solver shares every quadrature layout with these
operators, the two-term expansion E(omega) = E0 + i omega E1 + O(omega^2)
holds at the discrete level and the measured remainder orders are clean.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .densities import TangentialDensity, VolumeField
from .errors import ContractError, PreconditionError
from .forward import ForwardModel, MaterialMap, PlaneWave, assemble_and_solve
from .kernels import Wavenumber
from .oracles import OrderFit, order_fit


class StaticOperatorContext:
    """Prefactored zero-frequency operators for one scene and material."""

    def __init__(self, model: ForwardModel, material: MaterialMap):
        if model.shell is None and model.boundary is None:
            raise PreconditionError("empty scene")
        self.model = model
        self.material = material
        self.k0 = Wavenumber(0.0, material.eps0, material.mu0)
        self._static_lu = None
        self._cvol = None
        self._tmat = None
        self.condition_estimates = {}
        if model.boundary is not None:
            # force factorizations now and record condition estimates
            bo = model.boundary
            A, lu_LL = bo._mfie_factors(self.k0)
            L = bo.space.loops
            A_LL = L.T @ (A @ L.toarray())
            self.condition_estimates["half_plus_M_loops"] = float(
                np.linalg.cond(A_LL))
            Ks = bo.kstar_matrix(self.k0)
            F = model.obstacle.num_triangles
            self.condition_estimates["half_minus_kstar"] = float(
                np.linalg.cond(0.5 * np.eye(F) - Ks))
            S = bo.single_layer_matrix(self.k0)
            self.condition_estimates["single_layer"] = float(
                np.linalg.cond(S))

    # -- plumbing ---------------------------------------------------------------

    def _contrast_flat(self, field):
        vals = field.values if isinstance(field, VolumeField) else np.asarray(field)
        return (self.material.contrast[:, None] * vals).reshape(-1)

    def _boundary_solve_for(self, field):
        """h = (I/2+M0)^-1 [nu x grad-div V0 (contrast * field)] coefficients."""
        if self._tmat is None:
            self._tmat = self.model.trace_matrix(self.k0)
        rhs = self._tmat @ self._contrast_flat(field)
        h, _ = self.model.boundary.solve_half_plus_M(self.k0, rhs)
        return h

    def _as_volume_field(self, values):
        return VolumeField(self.model.shell, values.reshape(-1, 3))

    # -- the static operators ------------------------------------------------------

    def polarization_feedback(self, field, targets=None):
        """Shell polarization response corrected by the obstacle boundary.

        Applied at shell centroids (returns a VolumeField) or at explicit
        exterior targets. With no obstacle the boundary correction is absent.
        """
        w = self._contrast_flat(field)
        vo = self.model.volume
        if targets is None:
            out = (vo.graddiv_matrix(self.k0) @ w).reshape(-1, 3)
        else:
            out = vo.graddiv(self.k0, w.reshape(-1, 3), targets)
        if self.model.boundary is not None and np.any(w != 0):
            h = self._boundary_solve_for(field)
            if targets is None:
                if self._cvol is None:
                    self._cvol = self.model.curl_coupling_matrix(self.k0)
                out = out - (self._cvol @ h).reshape(-1, 3)
            else:
                out = out - self.model.boundary.curl_vector_layer(
                    self.k0, h, targets)
        return self._as_volume_field(out) if targets is None else out

    def magnetic_feedback_residual(self, field, targets=None):
        """Literal assembly of the magnetic counterpart, which the static
        theory annihilates; returned so tests can measure the residual."""
        w = self._contrast_flat(field)
        if self.model.boundary is None or not np.any(w != 0):
            shape = (self.model.shell.num_cells if targets is None
                     else len(np.atleast_2d(targets)), 3)
            out = np.zeros(shape, dtype=complex)
            return self._as_volume_field(out) if targets is None else out
        h = self._boundary_solve_for(field)
        pts = self.model.shell.centroids if targets is None else targets
        out = (-1j / self.material.mu0) * \
            self.model.boundary.graddiv_vector_layer(self.k0, h, pts)
        return self._as_volume_field(out) if targets is None else out

    def aux_expansion_op(self, which, field, targets=None):
        """The two auxiliary expansion operators, assembled literally."""
        if which not in (1, 2):
            raise PreconditionError("which must be 1 or 2")
        w = self._contrast_flat(field)
        vo = self.model.volume
        bo = self.model.boundary
        pts = self.model.shell.centroids if targets is None else np.atleast_2d(targets)
        curl_v = vo.curl(self.k0, w.reshape(-1, 3), pts)
        h = None
        if bo is not None and np.any(w != 0):
            space = bo.space
            qpts, qw = space.edge_quadrature_points()
            vals = vo.curl(self.k0, w.reshape(-1, 3), qpts.reshape(-1, 3))
            vals = vals.reshape(space.num_edges, len(qw), 3)
            rhs = space.interpolate_values(vals)
            h, _ = bo.solve_half_plus_M(self.k0, rhs)
        if which == 1:
            out = vo.graddiv(self.k0, w.reshape(-1, 3), pts)
            if h is not None:
                out = out - bo.graddiv_vector_layer(self.k0, h, pts)
        else:
            out = curl_v.copy()
            if h is not None:
                out = out - bo.curl_vector_layer(self.k0, h, pts)
            out = 1j * self.material.eps0 * out
        return self._as_volume_field(out) if targets is None else out

    def obstacle_corrected_field(self, incident):
        """Evaluator of the obstacle-corrected incident field: the incident
        field minus the curl of the vector layer fitted to cancel its
        tangential trace. With no obstacle it is the identity."""
        bo = self.model.boundary
        if bo is None:
            return lambda targets: np.asarray(incident(np.atleast_2d(targets)),
                                              dtype=complex)
        rhs = bo.space.interpolate_tangential_trace(incident)
        h, _ = bo.solve_half_plus_M(self.k0, rhs)

        def evaluate(targets):
            targets = np.atleast_2d(targets)
            return (np.asarray(incident(targets), dtype=complex)
                    - bo.curl_vector_layer(self.k0, h, targets))

        evaluate.current = h
        return evaluate

    def obstacle_magnetic_response(self, incident, incident_curl,
                                   method="direct"):
        """Evaluator of the magnetic response to a smooth incident field.

        incident_curl: callable giving curl(incident), supplied analytically
        by the caller (constant fields: zero; linear (x.d)p fields: d x p).
        method: 'direct' evaluates the grad-div layer term by its Hessian
        kernel (the literal operator; its residual on constants measures the
        discretization); 'transfer' uses the exact divergence-transfer
        identity (the form shared with the dynamic magnetic field).
        """
        bo = self.model.boundary
        mu0 = self.material.mu0
        if bo is None:
            def evaluate0(targets):
                targets = np.atleast_2d(targets)
                return (-1j / mu0) * np.asarray(incident_curl(targets),
                                                dtype=complex)
            return evaluate0
        rhs = bo.space.interpolate_tangential_trace(incident)
        h, _ = bo.solve_half_plus_M(self.k0, rhs)
        layer = (bo.graddiv_vector_layer if method == "direct"
                 else bo.graddiv_vector_layer_transfer)

        def evaluate(targets):
            targets = np.atleast_2d(targets)
            term = layer(self.k0, h, targets)
            return (1j / mu0) * term \
                - (1j / mu0) * np.asarray(incident_curl(targets), dtype=complex)

        evaluate.current = h
        return evaluate

    def grad_div_annihilation_check(self, rotated_trace, targets=None,
                                    rel_tol=1e-2):
        """Check that the grad-div of the boundary-fitted vector layer
        vanishes iff the surface divergence of the trace data vanishes.

        rotated_trace : TangentialDensity (the nu x Phi data) or coefficients.
        Returns (holds, field_residual, div_norm).
        """
        bo = self.model.boundary
        coeffs = (rotated_trace.coefficients
                  if isinstance(rotated_trace, TangentialDensity)
                  else np.asarray(rotated_trace, dtype=complex))
        div = bo.space.divergence_matrix @ coeffs
        areas = self.model.obstacle.areas
        div_norm = float(np.sqrt(np.sum(areas * np.abs(div) ** 2)))
        h, _ = bo.solve_half_plus_M(self.k0, coeffs)
        if targets is None:
            r = self.model.obstacle.diameter()
            from .forward import DirectionGrid
            targets = 1.2 * r * DirectionGrid(4).points
        field = bo.graddiv_vector_layer(self.k0, h, targets)
        gram = bo.space.gram_matrix
        scale = float(np.sqrt(abs(np.conj(coeffs) @ (gram @ coeffs))))
        scale = max(scale / max(self.model.obstacle.diameter(), 1e-30), 1e-300)
        residual = float(np.linalg.norm(field, axis=1).max() / scale)
        return residual <= rel_tol, residual, div_norm

    def surface_divergence_residual(self, field):
        """L2 norm of the surface divergence of the boundary current fitted
        to the shell response of `field` (exactly zero by construction)."""
        h = self._boundary_solve_for(field)
        div = self.model.boundary.space.divergence_matrix @ h
        areas = self.model.obstacle.areas
        dens = TangentialDensity(self.model.boundary.space, h)
        return float(np.sqrt(np.sum(areas * np.abs(div) ** 2))), dens

    # -- leading-order fields ---------------------------------------------------------

    def _static_system(self):
        """Factorized static volume system (identity minus feedback)."""
        if self._static_lu is None:
            vo = self.model.volume
            C = self.model.shell.num_cells
            Deps = np.repeat(self.material.contrast, 3)
            A = np.eye(3 * C, dtype=complex) - vo.graddiv_matrix(self.k0) * Deps[None, :]
            if self.model.boundary is not None:
                if self._tmat is None:
                    self._tmat = self.model.trace_matrix(self.k0)
                if self._cvol is None:
                    self._cvol = self.model.curl_coupling_matrix(self.k0)
                X, _ = self.model.boundary.solve_half_plus_M(
                    self.k0, self._tmat * Deps[None, :])
                A += self._cvol @ X
            self._static_lu = (sla.lu_factor(A), A)
        return self._static_lu

    def static_solve(self, rhs_cells):
        lu, _ = self._static_system()
        return sla.lu_solve(lu, np.asarray(rhs_cells, dtype=complex).reshape(-1))

    def leading_order_fields(self, wave: PlaneWave):
        """Zeroth/first-order electric terms and the zeroth-order magnetic
        field of the low-frequency expansion.

        Requires the permittivity to be constant on the obstacle boundary
        (solvability hypothesis of the static system).
        """
        if self.model.boundary is not None and np.any(self.material.contrast != 0):
            if self.material.boundary_value is None:
                raise PreconditionError(
                    "leading-order expansion needs eps constant on the"
                    " obstacle boundary")
        eps0, mu0 = self.material.eps0, self.material.mu0
        d = wave.direction
        p = wave.polarization
        w0 = lambda x: np.broadcast_to(p / np.sqrt(eps0), np.atleast_2d(x).shape)
        w1 = lambda x: np.sqrt(mu0) * (np.atleast_2d(x) @ d)[:, None] * p
        c1_w0 = self.obstacle_corrected_field(w0)
        c1_w1 = self.obstacle_corrected_field(w1)
        cents = self.model.shell.centroids if self.model.shell is not None else None

        if cents is not None and np.any(self.material.contrast != 0):
            e0 = self.static_solve(c1_w0(cents)).reshape(-1, 3)
            e1 = self.static_solve(c1_w1(cents)).reshape(-1, 3)
        elif cents is not None:
            e0 = np.asarray(c1_w0(cents))
            e1 = np.asarray(c1_w1(cents))
        else:
            e0 = e1 = np.zeros((0, 3), dtype=complex)

        h0_eval = self.obstacle_magnetic_response(
            w1, lambda x: np.broadcast_to(np.sqrt(mu0) * np.cross(d, p),
                                          np.atleast_2d(x).shape),
            method="transfer")

        def e0_eval(targets):
            return self._expansion_field_eval(e0, c1_w0, targets)

        def e1_eval(targets):
            return self._expansion_field_eval(e1, c1_w1, targets)

        def h0(targets):
            return 1j * h0_eval(targets)

        return {
            "E0": self._as_volume_field(e0) if cents is not None else None,
            "E1": self._as_volume_field(e1) if cents is not None else None,
            "E0_eval": e0_eval,
            "E1_eval": e1_eval,
            "H0_eval": h0,
        }

    def _expansion_field_eval(self, e_cells, c1_eval, targets):
        """Field evaluator of a static solution: corrected incident plus the
        shell feedback of the solved cells."""
        targets = np.atleast_2d(targets)
        out = np.asarray(c1_eval(targets), dtype=complex)
        if self.model.shell is not None and e_cells.size and \
                np.any(self.material.contrast != 0):
            out = out + self.polarization_feedback(e_cells, targets)
        return out

    # -- scalar potential extraction --------------------------------------------------

    def extract_scalar_potential(self, field, curl_tol=0.02):
        """Scalar potential of the polarization feedback of `field`.

        Returns (u_evaluator, diagnostics). The feedback field must be
        curl-free to `curl_tol` (checked by central differences at half-cell
        step around cell centroids, where the representation is smooth).
        """
        vals = field.values if isinstance(field, VolumeField) else np.asarray(field)
        curl_rel = self._curl_residual(vals)
        if curl_rel > curl_tol:
            raise ContractError(
                f"feedback field is not curl-free: {curl_rel:.3f} > {curl_tol}")
        vo = self.model.volume
        bo = self.model.boundary
        w = self._contrast_flat(vals).reshape(-1, 3)
        mesh_b = self.model.obstacle
        data = vo.divergence(self.k0, w, mesh_b.centroids)
        sinv_data = bo.solve_single_layer(self.k0, data)
        sinv_one = bo.solve_single_layer(self.k0, np.ones(mesh_b.num_triangles))
        areas = mesh_b.areas
        c2 = complex(np.sum(areas * sinv_data) / np.sum(areas * sinv_one))
        psi = sinv_data - c2 * sinv_one

        def u(targets):
            targets = np.atleast_2d(targets)
            return (vo.divergence(self.k0, w, targets)
                    - bo.single_layer_potential(self.k0, psi, targets))

        diag = {"curl_residual": curl_rel, "offset_constant": c2}
        return u, diag

    def _curl_residual(self, vals, n_samples=40, seed=0):
        """Relative finite-difference curl of the feedback of `vals`."""
        m = self.model.shell
        rng = np.random.default_rng(seed)
        idx = rng.choice(m.num_cells, size=min(n_samples, m.num_cells),
                         replace=False)
        pts = m.centroids[idx]
        step = 0.25 * (m.volumes[idx] * 6.0) ** (1.0 / 3.0)
        vecs = []
        for j in range(3):
            for s in (+1.0, -1.0):
                q = pts.copy()
                q[:, j] += s * step
                vecs.append(self.polarization_feedback(vals, q))
        curl = np.zeros((len(pts), 3), dtype=complex)
        for j in range(3):
            dplus, dminus = vecs[2 * j], vecs[2 * j + 1]
            dgrad = (dplus - dminus) / (2.0 * step[:, None])
            # accumulate epsilon_{ijk} d_j (F_k)
            for i in range(3):
                for kk in range(3):
                    eps = _levi(i, j, kk)
                    if eps:
                        curl[:, i] += eps * dgrad[:, kk]
        ref = self.polarization_feedback(vals, pts)
        scale = np.linalg.norm(ref, axis=1).max()
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(curl, axis=1).max() / scale)


def _levi(i, j, k):
    if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        return 1.0
    if (i, j, k) in ((0, 2, 1), (2, 1, 0), (1, 0, 2)):
        return -1.0
    return 0.0


# -- asymptotic verification ---------------------------------------------------------


@dataclass
class AsymptoticReport:
    """Measured remainder norms against frequency, with fitted orders."""

    frequencies: np.ndarray
    norms_r1: np.ndarray
    norms_r2: np.ndarray
    order_r1: OrderFit
    order_r2: OrderFit

    def serialize(self):
        lines = ["omega  norm_R1  norm_R2"]
        for om, r1, r2 in zip(self.frequencies, self.norms_r1, self.norms_r2):
            lines.append(f"{om:.17g}  {r1:.17g}  {r2:.17g}")
        f1 = "annihilated" if self.order_r1.annihilated else f"{self.order_r1.exponent:.17g}"
        f2 = "annihilated" if self.order_r2.annihilated else f"{self.order_r2.exponent:.17g}"
        lines.append(f"order_fit  {f1}  {f2}")
        return "\n".join(lines) + "\n"


def remainder_report(ctx: StaticOperatorContext, model: ForwardModel,
                     material: MaterialMap, d, p, omegas) -> AsymptoticReport:
    """Solve at each frequency and measure the two-term expansion remainders.

    R1 = E(omega) - E0 - i omega E1 in discrete shell L2; R2 = H(omega) - H0
    likewise at the shell centroids.
    """
    omegas = np.asarray(sorted(omegas, reverse=True), dtype=float)
    if len(omegas) < 3:
        raise PreconditionError("need at least three frequencies")
    lead = ctx.leading_order_fields(PlaneWave(
        d, p, Wavenumber(0.0, material.eps0, material.mu0)))
    cents = model.shell.centroids
    e0 = lead["E0"].values
    e1 = lead["E1"].values
    h0 = lead["H0_eval"](cents)
    vols = model.shell.volumes

    def vnorm(v):
        return float(np.sqrt(np.sum(vols * np.sum(np.abs(v) ** 2, axis=1))))

    r1, r2 = [], []
    for om in omegas:
        wave = PlaneWave(d, p, Wavenumber(float(om), material.eps0,
                                          material.mu0))
        sol = assemble_and_solve(material, wave, model)
        r1.append(vnorm(sol.e_cells - e0 - 1j * om * e1))
        r2.append(vnorm(sol.evaluate_h(cents) - h0))
    fit1 = order_fit(list(zip(omegas, r1)))
    fit2 = order_fit(list(zip(omegas, r2)))
    return AsymptoticReport(omegas, np.array(r1), np.array(r2), fit1, fit2)
