"""Littlewood–Paley analysis on the periodic box [0, 2πL)^N.

Fields are real arrays whose last ``N`` axes are spatial; any leading axes
are treated as vector components. Spectral data use the ``rfftn`` layout,
normalized to Fourier coefficients (``rfftn(f) / M**N``), so that

    ‖f‖²_{L²} = (2πL)^N Σ_k w_k |f̂_k|²

with ``w_k`` the Hermitian multiplicity of each stored half-spectrum entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, DomainError

# annulus of the dyadic block and plateau where it equals one
INNER, OUTER = 0.75, 8.0 / 3.0
PLATEAU = (4.0 / 3.0, 1.5)


@dataclass(frozen=True)
class PeriodicGrid:
    N: int
    points_per_axis: int
    L: float = 1.0

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ConfigurationError("N must be 1, 2 or 3")
        if self.points_per_axis <= 0 or self.points_per_axis % 2:
            raise ConfigurationError("points_per_axis must be a positive even integer")
        if not self.L > 0:
            raise ConfigurationError("L must be positive")

    @property
    def shape(self):
        return (self.points_per_axis,) * self.N

    @property
    def spectral_shape(self):
        M = self.points_per_axis
        return (M,) * (self.N - 1) + (M // 2 + 1,)

    @property
    def volume(self):
        return (2.0 * math.pi * self.L) ** self.N

    @property
    def k_min(self):
        return 1.0 / self.L

    @property
    def k_nyquist(self):
        return self.points_per_axis / 2 / self.L

    @cached_property
    def coords(self):
        M = self.points_per_axis
        x = 2.0 * math.pi * self.L * np.arange(M) / M
        return np.meshgrid(*([x] * self.N), indexing="ij")

    @cached_property
    def mvec(self):
        """Integer wave indices in rfft layout, one broadcastable array per axis."""
        M = self.points_per_axis
        full = np.fft.fftfreq(M, 1.0 / M)
        half = np.arange(M // 2 + 1, dtype=float)
        out = []
        for ax in range(self.N):
            m = half if ax == self.N - 1 else full
            shp = [1] * self.N
            shp[ax] = m.size
            out.append(m.reshape(shp))
        return out

    @cached_property
    def kvec(self):
        return [m / self.L for m in self.mvec]

    @cached_property
    def k2(self):
        return np.broadcast_to(sum(k * k for k in self.kvec), self.spectral_shape).copy()

    @cached_property
    def kmag(self):
        return np.sqrt(self.k2)

    @cached_property
    def weights(self):
        """Hermitian multiplicity of each rfft entry (1 on self-conjugate planes)."""
        M = self.points_per_axis
        w = np.full(M // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shp = [1] * self.N
        shp[-1] = w.size
        return np.broadcast_to(w.reshape(shp), self.spectral_shape).copy()

    @cached_property
    def nyquist_mask(self):
        """True on modes carrying a Nyquist index on any axis."""
        M = self.points_per_axis
        mask = np.zeros(self.spectral_shape, dtype=bool)
        for m in self.mvec:
            mask |= np.abs(m) == M // 2
        return mask

    def fft(self, f):
        f = np.asarray(f, dtype=float)
        axes = tuple(range(-self.N, 0))
        return sfft.rfftn(f, axes=axes) / self.points_per_axis**self.N

    def ifft(self, F):
        axes = tuple(range(-self.N, 0))
        return sfft.irfftn(F * self.points_per_axis**self.N, s=self.shape, axes=axes)

    def l2_norm(self, f):
        F = self.fft(f)
        return math.sqrt(self.volume * float(np.sum(self.weights * np.abs(F) ** 2)))

    def to_dict(self):
        return {"N": self.N, "points_per_axis": self.points_per_axis, "L": self.L}


def _h(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    """C∞ ramp: 0 for t ≤ 0, 1 for t ≥ 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    a, b = _h(t), _h(1.0 - t)
    return a / (a + b)


def chi(r):
    """Radial cutoff: 1 for r ≤ 3/4, 0 for r ≥ 4/3."""
    r = np.asarray(r, dtype=float)
    return 1.0 - smooth_step((r - INNER) / (PLATEAU[0] - INNER))


def phi(r):
    """Dyadic bump φ(r) = χ(r/2) − χ(r), supported in [3/4, 8/3]."""
    r = np.asarray(r, dtype=float)
    return chi(r / 2.0) - chi(r)


@dataclass
class DyadicPartition:
    """Shell multipliers φ(2^{-q}|k|) for every shell touching the grid.

    ``q_min..q_max`` cover every nonzero grid wavenumber, so the shells sum
    to one on all of them. ``interior`` lists shells whose neighbours
    q±1 lie fully inside [k_min, (2/3) k_Nyquist].
    """

    grid: PeriodicGrid
    q_min: int
    q_max: int
    interior: tuple
    j0: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def shells(self):
        return np.arange(self.q_min, self.q_max + 1)

    def multiplier(self, q):
        if not self.q_min <= q <= self.q_max:
            raise DomainError(f"shell {q} outside resolvable range [{self.q_min}, {self.q_max}]")
        w = self._cache.get(q)
        if w is None:
            w = phi(self.grid.kmag / 2.0**q)
            self._cache[q] = w
        return w

    def weights_squared(self):
        """Stack (n_shells, *spectral_shape) of φ_q² · Hermitian weights."""
        w = self._cache.get("stack")
        if w is None:
            w = np.stack([self.multiplier(q) ** 2 * self.grid.weights for q in self.shells])
            self._cache["stack"] = w
        return w

    def band(self, q_lo=None, q_hi=None):
        """|k| range on which shells q_lo..q_hi sum exactly to one."""
        q_lo = self.q_min if q_lo is None else q_lo
        q_hi = self.q_max if q_hi is None else q_hi
        return PLATEAU[0] * 2.0**q_lo, PLATEAU[1] * 2.0**q_hi


def build_partition(grid: PeriodicGrid, j0=None) -> DyadicPartition:
    k_min = grid.k_min
    k_top = math.sqrt(grid.N) * grid.k_nyquist
    q_min = math.floor(math.log2(k_min / PLATEAU[0]))
    q_max = math.ceil(math.log2(k_top / PLATEAU[1]))
    eps = 1e-12
    full = [q for q in range(q_min, q_max + 1)
            if INNER * 2.0**q >= k_min * (1 - eps) and OUTER * 2.0**q <= grid.k_nyquist * (1 + eps)]
    if len(full) < 3:
        raise ConfigurationError(
            f"grid {grid.points_per_axis}^{grid.N} holds only {len(full)} full dyadic shells (need >= 3)")
    k_hi = 2.0 / 3.0 * grid.k_nyquist
    interior = tuple(q for q in range(q_min, q_max + 1)
                     if INNER * 2.0 ** (q - 1) >= k_min * (1 - eps)
                     and OUTER * 2.0 ** (q + 1) <= k_hi * (1 + eps))
    if j0 is None:
        j0 = interior[-1] if interior else full[len(full) // 2]
    return DyadicPartition(grid, q_min, q_max, interior, int(j0))


@dataclass
class ShellSpectrum:
    q: np.ndarray
    amplitudes: np.ndarray
    mean: np.ndarray | float

    def as_pairs(self):
        return list(zip(self.q.tolist(), self.amplitudes.tolist()))


def shell_amplitudes_spectral(F, partition: DyadicPartition):
    """‖Δ_q f‖_{L²} for every shell from spectral data (components summed)."""
    grid = partition.grid
    P = np.abs(F) ** 2
    if P.ndim > grid.N:
        P = P.reshape((-1,) + grid.spectral_shape).sum(axis=0)
    W = partition.weights_squared()
    s = np.tensordot(W, P, axes=grid.N)
    return np.sqrt(grid.volume * np.maximum(s, 0.0))


def shell_spectrum(f, partition: DyadicPartition) -> ShellSpectrum:
    F = partition.grid.fft(f)
    mean = np.real(F[(Ellipsis,) + (0,) * partition.grid.N])
    return ShellSpectrum(partition.shells.copy(), shell_amplitudes_spectral(F, partition), mean)


def shell_project(f, q, partition: DyadicPartition):
    grid = partition.grid
    return grid.ifft(grid.fft(f) * partition.multiplier(q))


def _select(q, shells):
    if shells is None:
        return np.ones(q.shape, dtype=bool)
    kind, j0 = shells
    return q <= j0 if kind == "low" else q >= j0


def besov_from_amplitudes(amplitudes, q, s, r=1, shells=None):
    """ℓ^r aggregate of 2^{qs} a_q. ``shells=("low"|"high", j0)`` restricts q."""
    sel = _select(np.asarray(q), shells)
    terms = 2.0 ** (np.asarray(q)[sel] * s) * np.asarray(amplitudes)[..., sel]
    if r == 1:
        return terms.sum(axis=-1)
    if r in (np.inf, "inf", math.inf):
        return terms.max(axis=-1) if terms.shape[-1] else np.zeros(terms.shape[:-1])
    raise DomainError("summation index r must be 1 or inf")


def besov_norm(f, s, r, partition: DyadicPartition, shells=None):
    """Homogeneous Ḃ^s_{2,r} norm (mean excluded)."""
    a = shell_amplitudes_spectral(partition.grid.fft(f), partition)
    return float(besov_from_amplitudes(a, partition.shells, s, r, shells))


def low_high_split(f, j0, partition: DyadicPartition):
    if not partition.q_min <= j0 <= partition.q_max:
        raise DomainError(f"threshold shell {j0} outside resolvable range")
    grid = partition.grid
    F = grid.fft(f)
    mult = sum(partition.multiplier(q) for q in range(partition.q_min, j0 + 1))
    low = grid.ifft(F * mult)
    F0 = F.copy()
    F0[(Ellipsis,) + (0,) * grid.N] = 0.0
    high = grid.ifft(F0) - low
    return low, high


def chemin_lerner_from_amplitudes(times, amplitudes, q, s, rho, shells=None):
    """Per-shell L^ρ in time, then ℓ¹ over shells.

    ``amplitudes`` has shape (n_times, n_shells). ρ=∞ takes the per-shell
    sup; ρ=1 integrates each shell with the trapezoid rule.
    """
    amplitudes = np.asarray(amplitudes, dtype=float)
    if amplitudes.ndim != 2 or amplitudes.shape[0] == 0:
        raise DomainError("empty time series")
    if rho in (np.inf, "inf", math.inf):
        per_shell = amplitudes.max(axis=0)
    elif rho == 1:
        t = np.asarray(times, dtype=float)
        per_shell = np.trapezoid(amplitudes, t, axis=0) if t.size > 1 else np.zeros(amplitudes.shape[1])
    else:
        raise DomainError("temporal exponent must be 1 or inf")
    return float(besov_from_amplitudes(per_shell, q, s, 1, shells))


def chemin_lerner_norm(series, times, s, rho, partition: DyadicPartition, shells=None):
    if len(series) == 0:
        raise DomainError("empty time series")
    amps = np.stack([shell_amplitudes_spectral(partition.grid.fft(f), partition) for f in series])
    return chemin_lerner_from_amplitudes(times, amps, partition.shells, s, rho, shells)
