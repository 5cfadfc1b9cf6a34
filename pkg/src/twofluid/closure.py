"""Pressure-equilibrium closure of the two-fluid model.

Given the phase masses ``R± = α±ρ±`` the closure recovers the phase
densities, volume fractions and sound speeds from

    α⁺ + α⁻ = 1,    (ρ⁺)^γ⁺ = (ρ⁻)^γ⁻            (A± = 1)

and evaluates the equilibrium coefficients of the perturbation system and
the nonlinear coefficient functions appearing in its source terms.

All functions accept scalars or numpy arrays (elementwise evaluation).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConvergenceError, DomainError

PHI_TOL = 1e-12
MAX_ITER = 200


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters. ``sigma_plus``/``sigma_minus`` are fixed to 1."""

    N: int = 2
    gamma_plus: float = 2.0
    gamma_minus: float = 2.0
    mu_plus: float = 1.0
    mu_minus: float = 1.0
    lambda_plus: float = 0.0
    lambda_minus: float = 0.0
    sigma_plus: float = 1.0
    sigma_minus: float = 1.0

    def __post_init__(self):
        if self.N not in (2, 3):
            raise DomainError(f"dimension N must be 2 or 3, got {self.N}")
        for name in ("gamma_plus", "gamma_minus"):
            if not getattr(self, name) > 1.0:
                raise DomainError(f"{name} must be > 1")
        for mu, lam, tag in ((self.mu_plus, self.lambda_plus, "+"),
                             (self.mu_minus, self.lambda_minus, "-")):
            if not mu > 0.0:
                raise DomainError(f"mu{tag} must be > 0")
            if not lam + 2.0 * mu > 0.0:
                raise DomainError(f"lambda{tag} + 2 mu{tag} must be > 0")
        if self.sigma_plus != 1.0 or self.sigma_minus != 1.0:
            raise DomainError("capillary coefficients are normalized to 1")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ClosureState:
    R_plus: np.ndarray | float
    R_minus: np.ndarray | float
    rho_plus: np.ndarray | float
    rho_minus: np.ndarray | float
    alpha_plus: np.ndarray | float
    alpha_minus: np.ndarray | float
    s2_plus: np.ndarray | float
    s2_minus: np.ndarray | float
    C2: np.ndarray | float

    def to_dict(self):
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class LinearCoefficients:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    nu1_plus: float
    nu1_minus: float
    nu2_plus: float
    nu2_minus: float

    @property
    def nu_plus(self):
        return self.nu1_plus + self.nu2_plus

    @property
    def nu_minus(self):
        return self.nu1_minus + self.nu2_minus

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class PointwiseThermo:
    """Values of the nonlinear coefficient functions at ``(c⁺, c⁻)``.

    ``rho_plus`` is the closure root, kept so callers can warm-start the
    next evaluation.
    """

    g_plus: np.ndarray | float
    g_minus: np.ndarray | float
    gtilde: np.ndarray | float
    h_plus: np.ndarray | float
    h_minus: np.ndarray | float
    k_plus: np.ndarray | float
    k_minus: np.ndarray | float
    l_plus: np.ndarray | float
    l_minus: np.ndarray | float
    rho_plus: np.ndarray | float = None


def _jsonable(x):
    x = np.asarray(x)
    return x.item() if x.ndim == 0 else x.tolist()


def _phi(rho, R_plus, R_minus, gp, gm):
    rho_m = R_minus * rho / (rho - R_plus)
    return rho**gp - rho_m**gm


def _dphi(rho, R_plus, R_minus, gp, gm):
    rho_m = R_minus * rho / (rho - R_plus)
    s2p = gp * rho ** (gp - 1.0)
    s2m = gm * rho_m ** (gm - 1.0)
    return s2p + s2m * R_minus * R_plus / (rho - R_plus) ** 2


def solve_rho_plus(R_plus, R_minus, params: ModelParams, guess=None):
    """Unique root ρ⁺ ∈ (R⁺, ∞) of φ(ρ⁺) = P⁺(ρ⁺) − P⁻(R⁻ρ⁺/(ρ⁺−R⁺)).

    Safeguarded Newton inside a sign-changing bracket; any Newton step that
    leaves the bracket is replaced by bisection. ``guess`` (same shape as
    the inputs) warm-starts the iteration.
    """
    shape = np.broadcast(np.asarray(R_plus), np.asarray(R_minus)).shape
    scalar = shape == ()
    Rp, Rm = np.broadcast_arrays(np.asarray(R_plus, dtype=float),
                                 np.asarray(R_minus, dtype=float))
    Rp = Rp.ravel().copy()
    Rm = Rm.ravel().copy()
    if not (np.all(np.isfinite(Rp)) and np.all(np.isfinite(Rm))):
        raise DomainError("phase masses must be finite")
    if np.any(Rp <= 0.0) or np.any(Rm <= 0.0):
        raise DomainError("phase masses R+ and R- must be positive")
    gp, gm = params.gamma_plus, params.gamma_minus
    gmax = max(gp, gm)

    lo = Rp * (1.0 + 1e-12)
    hi = Rp + Rm * np.maximum(1.0, (Rp + Rm) ** gmax) * 1e3
    # expand the upper end until φ(hi) > 0 (φ → +∞ as ρ → ∞)
    for _ in range(60):
        bad = _phi(hi, Rp, Rm, gp, gm) <= 0.0
        if not bad.any():
            break
        hi[bad] *= 4.0

    if guess is None:
        # equal-density initial guess ρ⁺ = ρ⁻ = R⁺ + R⁻
        x = Rp + Rm
    else:
        x = np.broadcast_to(np.asarray(guess, dtype=float), shape).ravel().copy()
    x = np.where((x > lo) & (x < hi), x, 0.5 * (lo + hi))

    active = np.ones(Rp.shape, dtype=bool)
    for _ in range(MAX_ITER):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        xa, Rpa, Rma = x[idx], Rp[idx], Rm[idx]
        f = _phi(xa, Rpa, Rma, gp, gm)
        # absolute tolerance, floored at the rounding level of P⁺
        tol = np.maximum(PHI_TOL, 16.0 * np.finfo(float).eps * xa**gp)
        done = np.abs(f) <= tol
        active[idx[done]] = False
        keep = ~done
        if not keep.any():
            break
        idx, xa, f = idx[keep], xa[keep], f[keep]
        Rpa, Rma = Rpa[keep], Rma[keep]
        # tighten the bracket (φ increasing)
        lo[idx] = np.where(f < 0.0, xa, lo[idx])
        hi[idx] = np.where(f > 0.0, xa, hi[idx])
        step = f / _dphi(xa, Rpa, Rma, gp, gm)
        xn = xa - step
        outside = ~((xn > lo[idx]) & (xn < hi[idx])) | ~np.isfinite(xn)
        xn[outside] = 0.5 * (lo[idx][outside] + hi[idx][outside])
        x[idx] = xn
    if active.any():
        i = np.nonzero(active)[0][0]
        raise ConvergenceError(
            f"closure root not converged for R+={Rp[i]!r}, R-={Rm[i]!r}",
            bracket=(lo[active], hi[active]))
    if scalar:
        return float(x[0])
    return x.reshape(shape)


def closure_state(R_plus, R_minus, params: ModelParams, guess=None) -> ClosureState:
    rho_p = solve_rho_plus(R_plus, R_minus, params, guess=guess)
    rho_m = R_minus * rho_p / (rho_p - R_plus)
    alpha_p = R_plus / rho_p
    alpha_m = 1.0 - alpha_p
    gp, gm = params.gamma_plus, params.gamma_minus
    s2p = gp * rho_p ** (gp - 1.0)
    s2m = gm * rho_m ** (gm - 1.0)
    C2 = s2m * s2p / (alpha_m * rho_p * s2p + alpha_p * rho_m * s2m)
    return ClosureState(R_plus, R_minus, rho_p, rho_m, alpha_p, alpha_m, s2p, s2m, C2)


def equilibrium_coefficients(params: ModelParams) -> LinearCoefficients:
    eq = closure_state(1.0, 1.0, params)
    return LinearCoefficients(
        beta1=eq.C2 * eq.rho_minus / eq.rho_plus,
        beta2=eq.C2,
        beta3=eq.C2,
        beta4=eq.C2 * eq.rho_plus / eq.rho_minus,
        nu1_plus=params.mu_plus / eq.rho_plus,
        nu1_minus=params.mu_minus / eq.rho_minus,
        nu2_plus=(params.mu_plus + params.lambda_plus) / eq.rho_plus,
        nu2_minus=(params.mu_minus + params.lambda_minus) / eq.rho_minus,
    )


def pointwise_thermo(c_plus, c_minus, params: ModelParams, guess=None) -> PointwiseThermo:
    """Nonlinear coefficient functions g±, g̃, h±, k±, l± at (c⁺, c⁻).

    Formulas are taken literally, including the ``1/(c⁻+1)`` factor in k⁺.
    """
    c_plus = np.asarray(c_plus, dtype=float)
    c_minus = np.asarray(c_minus, dtype=float)
    if np.any(c_plus <= -1.0) or np.any(c_minus <= -1.0):
        raise DomainError("perturbations must satisfy c± > -1")
    Rp = c_plus + 1.0
    Rm = c_minus + 1.0
    st = closure_state(Rp, Rm, params, guess=guess)
    eq = _equilibrium(params)

    g_plus = st.C2 * st.rho_minus / st.rho_plus - eq.C2 * eq.rho_minus / eq.rho_plus
    g_minus = st.C2 * st.rho_plus / st.rho_minus - eq.C2 * eq.rho_plus / eq.rho_minus
    gtilde = st.C2 - eq.C2
    h_plus = st.C2 * st.alpha_minus / (Rp * st.s2_minus)
    h_minus = -st.C2 / (st.rho_minus * st.s2_minus)
    k_plus = -st.C2 / (Rm * st.s2_plus * st.rho_plus)
    k_minus = st.alpha_plus * st.C2 / (Rm * st.s2_plus)
    l_plus = 1.0 / st.rho_plus - 1.0 / eq.rho_plus
    l_minus = 1.0 / st.rho_minus - 1.0 / eq.rho_minus
    out = PointwiseThermo(g_plus, g_minus, gtilde, h_plus, h_minus,
                          k_plus, k_minus, l_plus, l_minus, st.rho_plus)
    if out.g_plus.ndim == 0:
        for f in fields(out):
            setattr(out, f.name, float(getattr(out, f.name)))
    return out


_EQ_CACHE: dict = {}


def _equilibrium(params: ModelParams) -> ClosureState:
    st = _EQ_CACHE.get(params)
    if st is None:
        st = closure_state(1.0, 1.0, params)
        _EQ_CACHE[params] = st
    return st
