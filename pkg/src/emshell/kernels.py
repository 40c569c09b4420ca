"""Helmholtz kernel, its derivatives, and the 6x6 electromagnetic fundamental
matrix.

Everything here is a pure function of the evaluation offset ``x`` and the
frequency data; complex arithmetic is used throughout (also at omega = 0) so
all downstream code has a single code path.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularityError

# Evaluation offsets shorter than this (relative to the scene scale supplied
# by the caller, default 1) raise SingularityError instead of returning huge
# values: singular integration is a quadrature concern, never kernel clamping.
SINGULAR_GUARD = 1e-14


@dataclass(frozen=True)
class Wavenumber:
    """Angular frequency plus background material constants.

    k0 = omega * sqrt(eps0 * mu0) is derived, not stored independently.
    """

    omega: float
    eps0: float = 1.0
    mu0: float = 1.0

    def __post_init__(self):
        if self.omega < 0:
            raise SingularityError(f"omega must be >= 0, got {self.omega}")
        if self.eps0 <= 0 or self.mu0 <= 0:
            raise SingularityError("eps0 and mu0 must be positive")

    @property
    def k0(self) -> float:
        return self.omega * np.sqrt(self.eps0 * self.mu0)

    @staticmethod
    def from_k0(k0: float, eps0: float = 1.0, mu0: float = 1.0) -> "Wavenumber":
        return Wavenumber(k0 / np.sqrt(eps0 * mu0), eps0, mu0)


@dataclass(frozen=True)
class KernelValue:
    """Kernel value together with its gradient and (symmetric) Hessian."""

    value: complex
    gradient: np.ndarray
    hessian: np.ndarray


def _norms(x, scale):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r <= SINGULAR_GUARD * scale):
        raise SingularityError("kernel evaluated at zero offset")
    return x, r


def gamma(k: Wavenumber, x, scale: float = 1.0):
    """Fundamental solution e^{i k0 r} / (4 pi r) at offset(s) x."""
    x, r = _norms(x, scale)
    return np.exp(1j * k.k0 * r) / (4.0 * np.pi * r)


def gamma_gradient(k: Wavenumber, x, scale: float = 1.0):
    """Gradient of gamma w.r.t. x; shape (..., 3)."""
    x, r = _norms(x, scale)
    k0 = k.k0
    # d/dr [e^{ikr}/(4 pi r)] = e^{ikr} (ikr - 1) / (4 pi r^2), times x/r
    gfac = np.exp(1j * k0 * r) * (1j * k0 * r - 1.0) / (4.0 * np.pi * r**3)
    return gfac[..., None] * x


def gamma_hessian(k: Wavenumber, x, scale: float = 1.0):
    """Hessian of gamma w.r.t. x; shape (..., 3, 3)."""
    x, r = _norms(x, scale)
    k0 = k.k0
    ekr = np.exp(1j * k0 * r)
    # radial derivatives of gamma; the second is rewritten through the
    # radial identity g'' = -k^2 g - 2 g'/r so the Hessian trace satisfies
    # the Helmholtz equation to machine precision at any radius
    g1_over_r = ekr * (1j * k0 * r - 1.0) / (4.0 * np.pi * r**3)
    g2 = -k0**2 * ekr / (4.0 * np.pi * r) - 2.0 * g1_over_r
    xhat = x / r[..., None]
    eye = np.eye(3)
    outer = xhat[..., :, None] * xhat[..., None, :]
    return g1_over_r[..., None, None] * (eye - outer) + g2[..., None, None] * outer


def gamma_derivatives(k: Wavenumber, x, scale: float = 1.0) -> KernelValue:
    """Value, gradient and Hessian of gamma at a single offset x.

    The trace of the Hessian satisfies trace + k0^2 * value = 0 (Helmholtz
    equation away from the origin) to machine precision by construction.
    """
    x = np.asarray(x, dtype=float)
    value = complex(gamma(k, x, scale))
    hess = gamma_hessian(k, x, scale)
    # constraint-preserving evaluation: pin the last diagonal entry so the
    # trace satisfies the Helmholtz identity exactly (the entry changes only
    # at the roundoff level of the large 1/r^3 terms)
    hess[2, 2] = -k.k0**2 * value - (hess[0, 0] + hess[1, 1])
    return KernelValue(
        value=value,
        gradient=gamma_gradient(k, x, scale),
        hessian=hess,
    )


@dataclass(frozen=True)
class LowFreqExpansion:
    """Two-term frequency expansion of gamma at a fixed offset.

    gamma(x; omega) = gamma0 + i*omega*linear_coeff + remainder, with the
    remainder O(omega^2); ``remainder`` is the evaluated witness.
    """

    gamma0: float
    linear_coeff: complex
    remainder: complex


def gamma_lowfreq_expansion(x, omega: float, eps0: float = 1.0,
                            mu0: float = 1.0) -> LowFreqExpansion:
    """Static kernel, the x-independent linear-in-omega coefficient
    sqrt(eps0*mu0)/(4 pi), and the evaluated second-order remainder."""
    x, r = _norms(x, 1.0)
    gamma0 = 1.0 / (4.0 * np.pi * float(r))
    coeff = np.sqrt(eps0 * mu0) / (4.0 * np.pi)
    k = Wavenumber(omega, eps0, mu0)
    remainder = complex(gamma(k, x)) - gamma0 - 1j * omega * coeff
    return LowFreqExpansion(gamma0=gamma0, linear_coeff=1j * coeff,
                            remainder=remainder)


def _skew(v):
    """Matrix S with S @ u = v x u."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ], dtype=complex)


def maxwell_fundamental_matrix(k: Wavenumber, x, scale: float = 1.0):
    """6x6 fundamental matrix of the homogeneous time-harmonic system.

    Diagonal 3x3 blocks are (k0^2 I + Hessian) gamma; off-diagonal blocks are
    +i*omega*mu0 (top right) and -i*omega*eps0 (bottom left) times the skew
    matrix built from grad gamma (the curl of gamma * I).
    """
    kv = gamma_derivatives(k, x, scale)
    diag = k.k0**2 * kv.value * np.eye(3) + kv.hessian
    curl = _skew(kv.gradient)
    out = np.zeros((6, 6), dtype=complex)
    out[:3, :3] = diag
    out[3:, 3:] = diag
    out[:3, 3:] = 1j * k.omega * k.mu0 * curl
    out[3:, :3] = -1j * k.omega * k.eps0 * curl
    return out


def dynamic_part_radial(k0: float, r):
    """Radial derivatives of the regularized kernel (gamma_k - gamma_0).

    Returns (f, f1, f2): the function (e^{ikr}-1)/(4 pi r) and its first two
    radial derivatives, computed from a series for small k0*r to avoid
    cancellation. Used by volume-cell dynamic corrections.
    """
    r = np.asarray(r, dtype=float)
    kr = k0 * r
    f = np.empty(r.shape, dtype=complex)
    f1 = np.empty(r.shape, dtype=complex)
    f2 = np.empty(r.shape, dtype=complex)
    small = np.abs(kr) < 0.2
    ik = 1j * k0

    # series sum_{n>=1} (ik)^n r^{n-1} / n! and its r-derivatives
    rs = r[small]
    fs = np.zeros(rs.shape, dtype=complex)
    f1s = np.zeros(rs.shape, dtype=complex)
    f2s = np.zeros(rs.shape, dtype=complex)
    term = np.ones(rs.shape, dtype=complex)  # r^{n-1} placeholder builder
    fact = 1.0
    for n in range(1, 16):
        fact *= n
        coef = ik**n / fact
        rp = rs ** (n - 1)
        fs += coef * rp
        if n >= 2:
            f1s += coef * (n - 1) * rs ** (n - 2)
        if n >= 3:
            f2s += coef * (n - 1) * (n - 2) * rs ** (n - 3)
    f[small] = fs / (4.0 * np.pi)
    f1[small] = f1s / (4.0 * np.pi)
    f2[small] = f2s / (4.0 * np.pi)

    big = ~small
    rb = r[big]
    krb = kr[big]
    # e^{ikr} - 1 via trig identities (stable for moderate kr)
    em1 = -2.0 * np.sin(krb / 2.0) ** 2 + 1j * np.sin(krb)
    e = em1 + 1.0
    f[big] = em1 / (4.0 * np.pi * rb)
    f1[big] = (ik * e * rb - em1) / (4.0 * np.pi * rb**2)
    f2[big] = (-(k0**2) * e * rb**2 - 2.0 * ik * e * rb + 2.0 * em1) / (
        4.0 * np.pi * rb**3)
    return f, f1, f2
