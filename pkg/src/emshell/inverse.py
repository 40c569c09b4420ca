"""Multi-frequency far-field experiments: dataset generation, discrimination
of configurations, the harmonic probe field of the obstacle-uniqueness
argument, and constant-permittivity recovery by residual scan.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, PreconditionError
from .forward import (DirectionGrid, FarFieldPattern, ForwardModel,
                      MaterialMap, PlaneWave, assemble_and_solve,
                      write_far_field_csv)
from .geometry import SurfaceMesh
from .kernels import Wavenumber
from .surface_ops import BoundaryOperators


@dataclass
class FarFieldDataset:
    """Far-field patterns over a frequency grid at fixed incidence."""

    description: dict
    frequencies: np.ndarray
    direction: np.ndarray
    polarization: np.ndarray
    patterns: list

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if np.any(self.frequencies <= 0) or np.any(np.diff(self.frequencies) <= 0):
            raise InvalidArgumentError(
                "frequencies must be positive and strictly increasing")
        if len(self.patterns) != len(self.frequencies):
            raise InvalidArgumentError("one pattern per frequency required")

    def restricted(self, lo, hi):
        """Sub-dataset on the open frequency interval (lo, hi)."""
        keep = (self.frequencies > lo) & (self.frequencies < hi)
        idx = np.nonzero(keep)[0]
        return FarFieldDataset(self.description, self.frequencies[idx],
                               self.direction, self.polarization,
                               [self.patterns[i] for i in idx])

    def add_noise(self, level, seed):
        """Independent complex Gaussian noise, relative to per-frequency RMS."""
        rng = np.random.default_rng(seed)
        out = []
        for pat in self.patterns:
            rms = np.sqrt(np.mean(np.abs(pat.samples) ** 2))
            noise = rng.normal(size=pat.samples.shape) \
                + 1j * rng.normal(size=pat.samples.shape)
            out.append(FarFieldPattern(
                pat.grid, pat.samples + level * rms * noise / np.sqrt(2.0),
                pat.omega))
        return FarFieldDataset(dict(self.description, noise=level),
                               self.frequencies, self.direction,
                               self.polarization, out)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        cfg = dict(self.description)
        cfg["frequencies"] = [float(f) for f in self.frequencies]
        cfg["direction"] = [float(v) for v in self.direction]
        cfg["polarization"] = [float(v) for v in self.polarization]
        with open(os.path.join(directory, "config.json"), "w") as f:
            json.dump(cfg, f, indent=2, sort_keys=True)
        for freq, pat in zip(self.frequencies, self.patterns):
            write_far_field_csv(
                os.path.join(directory, f"farfield_{freq:.17g}.csv"), pat)


def generate_dataset(model: ForwardModel, material: MaterialMap, freqs, d, p,
                     grid: DirectionGrid = None,
                     description=None) -> FarFieldDataset:
    """One forward solve and far-field pattern per frequency."""
    grid = grid or DirectionGrid(9)
    freqs = sorted(float(f) for f in freqs)
    patterns = []
    for f in freqs:
        wave = PlaneWave(d, p, Wavenumber(f, material.eps0, material.mu0))
        try:
            sol = assemble_and_solve(material, wave, model)
        except Exception as exc:
            raise type(exc)(f"forward solve failed at omega={f}: {exc}")
        patterns.append(sol.far_field(grid))
    return FarFieldDataset(description or {}, np.array(freqs),
                           np.asarray(d, float), np.asarray(p, float),
                           patterns)


@dataclass
class DiscrepancyReport:
    """Per-frequency and aggregate distances between two datasets."""

    frequencies: np.ndarray
    distances: np.ndarray        # relative L2 per frequency
    aggregate: float
    noise_floor: float
    verdict: str
    threshold: float = 10.0

    def to_dict(self):
        return {
            "frequencies": [float(f) for f in self.frequencies],
            "distances": [float(v) for v in self.distances],
            "aggregate": float(self.aggregate),
            "noise_floor": float(self.noise_floor),
            "threshold": float(self.threshold),
            "verdict": self.verdict,
        }


def dataset_distance(a: FarFieldDataset, b: FarFieldDataset):
    """(per-frequency relative distances, aggregate relative distance)."""
    if len(a.frequencies) != len(b.frequencies) or \
            np.any(np.abs(a.frequencies - b.frequencies) > 1e-12):
        raise InvalidArgumentError("frequency grids do not match")
    if np.linalg.norm(a.direction - b.direction) > 1e-12 or \
            np.linalg.norm(a.polarization - b.polarization) > 1e-12:
        raise InvalidArgumentError("incidence data do not match")
    dists = []
    num2 = 0.0
    den2 = 0.0
    for pa, pb in zip(a.patterns, b.patterns):
        dd = pa.l2_distance(pb)
        na = pa.l2_norm()
        dists.append(dd / max(na, 1e-300))
        num2 += dd**2
        den2 += na**2
    return np.array(dists), float(np.sqrt(num2 / max(den2, 1e-300)))


def dataset_discrepancy(a: FarFieldDataset, b: FarFieldDataset,
                        floor: FarFieldDataset = None, noise_floor=None,
                        threshold=10.0) -> DiscrepancyReport:
    """Distance report with a verdict against the discrimination threshold.

    The noise floor is the aggregate distance between dataset `a` and a
    re-solve of the same configuration on an independently
    rotated/refined mesh (`floor`), or an explicit number.
    """
    dists, agg = dataset_distance(a, b)
    if noise_floor is None:
        if floor is None:
            raise InvalidArgumentError("need a floor dataset or explicit value")
        _, noise_floor = dataset_distance(a, floor)
    verdict = "distinct" if agg >= threshold * noise_floor else "indistinct"
    return DiscrepancyReport(a.frequencies, dists, agg, noise_floor, verdict,
                             threshold)


# -- the harmonic probe field of the obstacle-uniqueness argument -----------------


def tilde_u_field(obstacle: SurfaceMesh, d, p, mu0, targets,
                  ops: BoundaryOperators = None):
    """Scalar probe potential: linear growth (d x p).x / mu0 corrected by a
    single layer so its exterior normal derivative vanishes on the obstacle.

    Returns (values at targets, evaluator, boundary operators used).
    """
    d = np.asarray(d, dtype=float)
    p = np.asarray(p, dtype=float)
    dp = np.cross(d, p)
    bo = ops or BoundaryOperators(obstacle)
    k0 = Wavenumber(0.0)
    rhs = obstacle.normals @ dp
    dens = bo.solve_half_minus_kstar(k0, -rhs)  # (-I/2 + K*) phi = (d x p).nu
    # (-I/2+K*) = -((I/2) - K*): solve with sign flip

    def evaluate(pts):
        pts = np.atleast_2d(pts)
        lin = (pts @ dp) / mu0
        corr = bo.single_layer_potential(k0, dens, pts) / mu0
        return lin - corr

    def gradient(pts):
        pts = np.atleast_2d(pts)
        g = np.broadcast_to(dp / mu0, (len(pts), 3)).astype(complex)
        return g - bo.grad_single_layer(k0, dens, pts) / mu0

    evaluate.gradient = gradient
    evaluate.density = dens
    return evaluate(np.atleast_2d(targets)), evaluate, bo


def neumann_residual(evaluate, obstacle: SurfaceMesh, offsets=(0.4, 0.2)):
    """|nu . grad(tilde u)| on the boundary relative to |grad(tilde u)|,
    via extrapolated exterior offsets."""
    c, n = obstacle.centroids, obstacle.normals
    hT = np.sqrt(2.0 * obstacle.areas)
    grads = []
    for t in offsets:
        grads.append(evaluate.gradient(c + t * hT[:, None] * n))
    w = offsets[0] / (offsets[0] - offsets[1])
    g = (1 - w) * grads[0] + w * grads[1]
    num = np.sqrt(np.sum(obstacle.areas
                         * np.abs(np.einsum("ix,ix->i", n, g)) ** 2))
    den = np.sqrt(np.sum(obstacle.areas * np.sum(np.abs(g) ** 2, axis=1)))
    return float(num / den)


# -- constant-permittivity recovery ------------------------------------------------


@dataclass
class RecoveryResult:
    eps_grid: np.ndarray
    residuals: np.ndarray
    best_eps: float
    ambiguous: bool

    def to_dict(self):
        return {
            "eps_grid": [float(v) for v in self.eps_grid],
            "residuals": [float(v) for v in self.residuals],
            "best_eps": float(self.best_eps),
            "ambiguous": bool(self.ambiguous),
        }


def recover_constant_permittivity(data: FarFieldDataset, model: ForwardModel,
                                  eps_grid, grid: DirectionGrid = None,
                                  ambiguity_band=0.01) -> RecoveryResult:
    """Scan trial constant permittivities, forward-solving the known geometry,
    and return the residual-curve minimizer.

    The ambiguity flag is set (not raised) when another grid point lies
    within `ambiguity_band` of the minimal residual.
    """
    eps_grid = np.asarray(sorted(float(e) for e in eps_grid))
    if np.any(eps_grid <= 0):
        raise PreconditionError("trial permittivities must be positive")
    grid = grid or data.patterns[0].grid
    residuals = np.empty(len(eps_grid))
    for i, eps in enumerate(eps_grid):
        material = MaterialMap.constant(model.shell, eps)
        trial = generate_dataset(model, material, data.frequencies,
                                 data.direction, data.polarization, grid)
        _, agg = dataset_distance(data, trial)
        residuals[i] = agg
    best = int(np.argmin(residuals))
    others = np.delete(residuals, best)
    ambiguous = bool(np.any(others <= residuals[best] + ambiguity_band))
    return RecoveryResult(eps_grid, residuals, float(eps_grid[best]),
                          ambiguous)
