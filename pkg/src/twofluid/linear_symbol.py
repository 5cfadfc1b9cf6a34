"""Per-wavenumber analysis of the linearized system.

The compressible part is carried by the amplitudes (ĉ⁺, d̂⁺, ĉ⁻, d̂⁻) with
d = Λ⁻¹div u, and obeys d/dt v = A(|ξ|) v. The divergence-free velocity is a
pure heat flow with rate ν₁±|ξ|². Decay is controlled by the quadratic form

    L² = z* P(ξ) z,

whose time derivative along the flow is bounded by −C|ξ|²L².
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy import integrate

from .closure import LinearCoefficients
from .errors import ConfigurationError, DomainError

# Taylor terms used once the scaled matrix has ∞-norm ≤ 1/2: (1/2)^18/18! ~ 1e-21
_TAYLOR_TERMS = 18
_SCALED_NORM = 0.5


@dataclass
class ModeVector:
    c_plus_hat: complex
    d_plus_hat: complex
    c_minus_hat: complex
    d_minus_hat: complex

    def as_array(self):
        return np.array([self.c_plus_hat, self.d_plus_hat, self.c_minus_hat, self.d_minus_hat],
                        dtype=complex)

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v, dtype=complex).reshape(4)
        return cls(*v.tolist())


@dataclass(frozen=True)
class LyapunovWeights:
    """Mixing weight δ of the Lyapunov form; the coefficients come with ``coeffs``."""

    delta: float

    def matrix(self, xi, coeffs: LinearCoefficients):
        """Hermitian matrix P(ξ) of L² in the basis (ĉ⁺, d̂⁺, ĉ⁻, d̂⁻)."""
        xi = np.asarray(xi, dtype=float)
        d = self.delta
        P = np.zeros(xi.shape + (4, 4))
        P[..., 0, 0] = coeffs.beta1 + xi**2 + d * coeffs.nu_plus * xi**2
        P[..., 2, 2] = coeffs.beta4 + xi**2 + d * coeffs.nu_minus * xi**2
        P[..., 1, 1] = 1.0
        P[..., 3, 3] = 1.0
        P[..., 0, 2] = P[..., 2, 0] = coeffs.beta2
        P[..., 0, 1] = P[..., 1, 0] = -d * xi
        P[..., 2, 3] = P[..., 3, 2] = -d * xi
        return P


def lyapunov_weights(coeffs: LinearCoefficients, delta=None) -> LyapunovWeights:
    if delta is None:
        delta = min(1.0 / 3.0, coeffs.nu_plus, coeffs.nu_minus)
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    return LyapunovWeights(float(delta))


def energy_matrix(xi, coeffs: LinearCoefficients):
    xi = np.asarray(xi, dtype=float)
    E = np.zeros(xi.shape + (4, 4))
    E[..., 0, 0] = coeffs.beta1 + xi**2
    E[..., 1, 1] = 1.0
    E[..., 2, 2] = coeffs.beta4 + xi**2
    E[..., 3, 3] = 1.0
    return E


def compressible_symbol(xi, coeffs: LinearCoefficients):
    """Generator A(|ξ|); vectorized over ``xi`` (shape (..., 4, 4))."""
    xi = np.asarray(xi, dtype=float)
    if np.any(~np.isfinite(xi)) or np.any(xi < 0):
        raise DomainError("|xi| must be finite and nonnegative")
    A = np.zeros(xi.shape + (4, 4))
    A[..., 0, 1] = -xi
    A[..., 1, 0] = coeffs.beta1 * xi + xi**3
    A[..., 1, 1] = -coeffs.nu_plus * xi**2
    A[..., 1, 2] = coeffs.beta2 * xi
    A[..., 2, 3] = -xi
    A[..., 3, 2] = coeffs.beta4 * xi + xi**3
    A[..., 3, 3] = -coeffs.nu_minus * xi**2
    A[..., 3, 0] = coeffs.beta3 * xi
    return A


def lyapunov_value(mode, xi, coeffs: LinearCoefficients, weights: LyapunovWeights) -> float:
    z = mode.as_array() if isinstance(mode, ModeVector) else np.asarray(mode, dtype=complex)
    P = weights.matrix(float(xi), coeffs)
    return float(np.real(np.conj(z) @ P @ z))


def lyapunov_dissipation_margin(xi, coeffs: LinearCoefficients, weights: LyapunovWeights) -> float:
    """Largest C with dL²/dt + C|ξ|²L² ≤ 0 for every mode at this |ξ|.

    dL²/dt = −z*Qz with Q = −(AᵀP + PA); C is the smallest generalized
    eigenvalue of the pencil (Q, |ξ|²P). A negative value is returned as is.
    """
    xi = float(xi)
    if not xi > 0:
        raise DomainError("margin requires |xi| > 0")
    A = compressible_symbol(xi, coeffs)
    P = weights.matrix(xi, coeffs)
    Q = -(A.T @ P + P @ A)
    try:
        w = sla.eigh(Q, xi**2 * P, eigvals_only=True)
    except np.linalg.LinAlgError:
        # P not positive definite: fall back to the general pencil
        w = np.real(sla.eigvals(Q, xi**2 * P))
    return float(np.min(w))


def form_bounds(xi, coeffs: LinearCoefficients, weights: LyapunovWeights):
    """(min, max) of L²/E at one |ξ|."""
    w = sla.eigh(weights.matrix(float(xi), coeffs), energy_matrix(float(xi), coeffs),
                 eigvals_only=True)
    return float(w.min()), float(w.max())


def norm_equivalence(xis, coeffs: LinearCoefficients, weights: LyapunovWeights):
    """Constants c₁ ≤ L²/E ≤ c₂ taken uniformly over the sample ``xis``."""
    b = np.array([form_bounds(x, coeffs, weights) for x in np.atleast_1d(xis)])
    return float(b[:, 0].min()), float(b[:, 1].max())


def expm_batch(A):
    """exp(A) for a stack of small square matrices by scaling and squaring.

    Each matrix is scaled by 2^-s so that its ∞-norm is ≤ 1/2, summed with a
    truncated Taylor series, then squared s times. Matrices are grouped by s.
    """
    A = np.asarray(A)
    n = A.shape[-1]
    flat = A.reshape((-1, n, n))
    out = np.empty_like(flat, dtype=np.result_type(flat.dtype, float))
    norms = np.abs(flat).sum(axis=-1).max(axis=-1)
    with np.errstate(divide="ignore"):
        s_all = np.where(norms > _SCALED_NORM,
                         np.ceil(np.log2(np.maximum(norms, 1e-300) / _SCALED_NORM)), 0).astype(int)
    eye = np.eye(n)
    for s in np.unique(s_all):
        idx = np.nonzero(s_all == s)[0]
        B = flat[idx] / 2.0**s
        term = np.broadcast_to(eye, B.shape).astype(out.dtype)
        acc = term.copy()
        for j in range(1, _TAYLOR_TERMS + 1):
            term = term @ B / j
            acc = acc + term
        for _ in range(s):
            acc = acc @ acc
        out[idx] = acc
    return out.reshape(A.shape)


def propagator(xi, coeffs: LinearCoefficients, t):
    """exp(t A(|ξ|)), vectorized over ``xi``."""
    if t < 0:
        raise DomainError("time must be nonnegative")
    return expm_batch(t * compressible_symbol(xi, coeffs))


def evolve_mode(mode0, xi, coeffs: LinearCoefficients, t) -> ModeVector:
    if t < 0:
        raise DomainError("time must be nonnegative")
    z = mode0.as_array() if isinstance(mode0, ModeVector) else np.asarray(mode0, dtype=complex)
    return ModeVector.from_array(propagator(float(xi), coeffs, t) @ z)


def incompressible_evolve(u_hat, xi, coeffs: LinearCoefficients, t, phase="+"):
    if t < 0:
        raise DomainError("time must be nonnegative")
    if phase in ("+", "plus", 1):
        nu1 = coeffs.nu1_plus
    elif phase in ("-", "minus", -1):
        nu1 = coeffs.nu1_minus
    else:
        raise DomainError(f"unknown phase {phase!r}")
    return np.asarray(u_hat) * np.exp(-nu1 * np.asarray(xi, dtype=float) ** 2 * t)


# ---------------------------------------------------------------------------
# continuous-ξ semigroup norms

def _sphere_area(N):
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def flat_profile(amplitude=1.0, cutoff=None):
    """Radial amplitude giving equal 2^{-qN/2}‖Δ_q U₀‖ on low shells."""
    if cutoff is None:
        return lambda r: amplitude * np.ones_like(np.asarray(r, dtype=float))
    return lambda r: amplitude * np.exp(-(np.asarray(r, dtype=float) / cutoff) ** 2)


def _u_weights(r, coeffs):
    one = np.ones_like(r)
    return np.stack([math.sqrt(coeffs.beta1) + r, one, math.sqrt(coeffs.beta4) + r, one], axis=-1)


def _spectral_gain(r, coeffs: LinearCoefficients, t, N, components):
    """Σ over unit-density data components of |V̂(t)|² at radius r (U variables)."""
    W = _u_weights(r, coeffs)
    E = propagator(r, coeffs, t)
    G = W[..., :, None] * E / W[..., None, :]
    if components == "masses":
        return (G[..., :, [0, 2]] ** 2).sum(axis=(-1, -2))
    if components != "all":
        raise DomainError("components must be 'all' or 'masses'")
    heat = np.exp(-2 * coeffs.nu1_plus * r**2 * t) + np.exp(-2 * coeffs.nu1_minus * r**2 * t)
    return (G**2).sum(axis=(-1, -2)) + (N - 1) * heat


@dataclass
class SemigroupDecay:
    times: np.ndarray
    s: float
    norms: np.ndarray
    shells: np.ndarray
    amplitudes: np.ndarray  # (n_times, n_shells)


def semigroup_besov_decay(profile, s, times, N, coeffs: LinearCoefficients, q0=0, q_lo=-20,
                          nodes_per_octave=64, components="all") -> SemigroupDecay:
    """Low-frequency Ḃˢ₂,₁ norm of e^{tA(D)}U₀ for isotropic data.

    ``profile(r)`` is the radial amplitude of each data component. Shell
    amplitudes are ‖Δ_q V‖² = (2π)^{-N}|S^{N-1}| ∫ φ(2^{-q}r)²|V̂|² r^{N-1} dr,
    integrated by Gauss–Legendre in log r, 64 nodes per octave, over
    [2^{q_lo-1}, 2^{q0+2}].
    """
    from .littlewood_paley import phi

    if N not in (2, 3):
        raise DomainError("N must be 2 or 3")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise DomainError("times must be nonnegative")
    x, w = np.polynomial.legendre.leggauss(nodes_per_octave)
    lnr, wts = [], []
    for j in range(q_lo - 1, q0 + 2):
        a, b = j * math.log(2.0), (j + 1) * math.log(2.0)
        lnr.append(0.5 * (b - a) * x + 0.5 * (a + b))
        wts.append(0.5 * (b - a) * w)
    lnr, wts = np.concatenate(lnr), np.concatenate(wts)
    r = np.exp(lnr)
    f = np.asarray(profile(r), dtype=float)
    if f.shape != r.shape or not np.all(np.isfinite(f)):
        raise ConfigurationError("profile must return finite values on (0, 2^(q0+2)]")
    shells = np.arange(q_lo, q0 + 1)
    Phi2 = np.stack([phi(r / 2.0**q) ** 2 for q in shells])
    const = _sphere_area(N) / (2 * math.pi) ** N
    base = const * wts * r**N * f**2  # d ln r measure carries one extra r

    a0 = np.sqrt(Phi2 @ (base * _spectral_gain(r, coeffs, 0.0, N, components)))
    _check_profile(a0, shells, N)
    amps = np.empty((times.size, shells.size))
    for i, t in enumerate(times):
        amps[i] = np.sqrt(np.maximum(Phi2 @ (base * _spectral_gain(r, coeffs, t, N, components)), 0))
    norms = (2.0 ** (shells * s) * amps).sum(axis=1)
    return SemigroupDecay(times, float(s), norms, shells, amps)


def _check_profile(a0, shells, N):
    weighted = 2.0 ** (-shells * N / 2.0) * a0
    if not np.all(np.isfinite(weighted)):
        raise ConfigurationError("profile produces non-finite shell norms")
    low = weighted[:4]
    if low[-1] > 0 and low[0] > 2.0 * low[-1]:
        raise ConfigurationError("profile is not in B^{-N/2}_{2,inf}: low shells grow")
    if low.max() == 0:
        raise ConfigurationError("profile vanishes on the lowest shells")


def static_shell_norm(profile, q, N, coeffs: LinearCoefficients, components="all"):
    """‖Δ_q U₀‖ by adaptive quadrature (reference for the t=0 value)."""
    from .littlewood_paley import INNER, OUTER, phi

    const = _sphere_area(N) / (2 * math.pi) ** N

    def integrand(r):
        g = _spectral_gain(np.array(r), coeffs, 0.0, N, components)
        return float(phi(r / 2.0**q) ** 2 * profile(np.array(r)) ** 2 * g * r ** (N - 1))

    val, _ = integrate.quad(integrand, INNER * 2.0**q, OUTER * 2.0**q,
                            epsabs=0, epsrel=1e-11, limit=200)
    return math.sqrt(const * val)


def margin_curve(xis, coeffs: LinearCoefficients, weights: LyapunovWeights | None = None):
    weights = weights or lyapunov_weights(coeffs)
    return np.array([lyapunov_dissipation_margin(x, coeffs, weights) for x in np.atleast_1d(xis)])
