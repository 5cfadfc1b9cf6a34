"""Pseudo-spectral evolution of the perturbation system on the periodic box.

State layout (physical and spectral): rows ``c⁺, u⁺₁..u⁺_N, c⁻, u⁻₁..u⁻_N``.
The linear part is propagated exactly per mode: the potential velocity and
the masses through exp(hA(|k|)) on (ĉ⁺, d̂⁺, ĉ⁻, d̂⁻), the divergence-free
velocity through heat factors. Sources enter through an explicit midpoint
rule in the integrating-factor variables.
"""

from __future__ import annotations

import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .closure import LinearCoefficients, ModelParams, equilibrium_coefficients, pointwise_thermo
from .errors import (ConfigurationError, ConvergenceError, DomainError, NumericalAbort,
                     StateError)
from .linear_symbol import propagator
from .littlewood_paley import DyadicPartition, PeriodicGrid, build_partition, shell_amplitudes_spectral

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SNAPSHOT_FORMAT = "twofluid-snapshot"


def _layout(N):
    cp, cm = 0, N + 1
    return cp, slice(1, N + 1), cm, slice(N + 2, 2 * N + 2)


@dataclass
class FieldState:
    time: float
    c_plus: np.ndarray
    u_plus: np.ndarray
    c_minus: np.ndarray
    u_minus: np.ndarray
    grid: PeriodicGrid

    @classmethod
    def zeros(cls, grid: PeriodicGrid, time=0.0):
        z = np.zeros(grid.shape)
        v = np.zeros((grid.N,) + grid.shape)
        return cls(time, z, v, z.copy(), v.copy(), grid)

    @classmethod
    def from_stack(cls, grid: PeriodicGrid, arr, time=0.0):
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (2 * grid.N + 2,) + grid.shape:
            raise ConfigurationError(f"state array has shape {arr.shape}")
        cp, up, cm, um = _layout(grid.N)
        return cls(time, arr[cp].copy(), arr[up].copy(), arr[cm].copy(), arr[um].copy(), grid)

    def stack(self):
        return np.concatenate([self.c_plus[None], self.u_plus, self.c_minus[None], self.u_minus])

    def copy(self):
        return FieldState.from_stack(self.grid, self.stack(), self.time)

    def scaled(self, kappa):
        return FieldState.from_stack(self.grid, kappa * self.stack(), self.time)

    def means(self):
        return float(self.c_plus.mean()), float(self.c_minus.mean())


@dataclass
class SourceFields:
    H1: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    H4: np.ndarray

    def stack(self):
        return np.concatenate([self.H1[None], self.H2, self.H3[None], self.H4])


@dataclass
class SolverConfig:
    dim: int = 2
    grid: int = 64
    L: float = 1.0
    dt: float = 0.01
    T: float = 1.0
    dealias_fraction: float = 2.0 / 3.0
    scheme: str = "imex_rk2"
    output_every: int = 1
    output_times: list | None = None
    snapshot_every: int = 0
    seed: int = 0
    amplitude: float = 1e-3
    spectral_slope: float = 0.0
    cutoff: float | None = None
    data_fields: str = "all"
    norm_list: list = field(default_factory=lambda: [[0.0, 1]])
    lp_list: list = field(default_factory=list)
    j0: int | None = None
    output_dir: str | None = None
    blowup_factor: float = 1e3
    picard_iterations: int = 12
    picard_tol: float = 1e-12
    eta: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim not in (2, 3):
            raise ConfigurationError("dim must be 2 or 3")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.T >= 0:
            raise ConfigurationError("T must be nonnegative")
        if not 0 < self.dealias_fraction <= 1:
            raise ConfigurationError("dealias_fraction must lie in (0, 1]")
        if self.scheme not in ("imex_rk2", "picard"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        if self.output_every < 1:
            raise ConfigurationError("output_every must be >= 1")
        if self.data_fields not in ("all", "masses"):
            raise ConfigurationError("data_fields must be 'all' or 'masses'")
        if not self.amplitude >= 0:
            raise ConfigurationError("amplitude must be nonnegative")

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def output_steps(self):
        """Step indices at which norms are recorded (step 0 always included)."""
        n = self.n_steps
        if self.output_times is not None:
            steps = {min(n, max(0, int(round(t / self.dt)))) for t in self.output_times}
        else:
            steps = set(range(0, n + 1, self.output_every))
        return steps | {0, n}

    def make_grid(self):
        return PeriodicGrid(self.dim, self.grid, self.L)

    def to_dict(self):
        return asdict(self)


# keys accepted in config files besides the SolverConfig fields
_PARAM_KEYS = {"gamma_plus", "gamma_minus", "mu_plus", "mu_minus", "lambda_plus", "lambda_minus"}
_ALIASES = {"dealias": "dealias_fraction"}


def load_config(path):
    """Read a TOML or JSON run file. Returns (SolverConfig, ModelParams, extra)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def config_from_dict(data: dict):
    data = dict(data)
    extra = data.pop("campaign", {}) or {}
    if not isinstance(extra, dict):
        extra = {"kind": extra}
    pkeys = {k: data.pop(k) for k in list(data) if k in _PARAM_KEYS}
    names = {f.name for f in fields(SolverConfig)}
    ckeys = {}
    for k, v in data.items():
        k2 = _ALIASES.get(k, k)
        if k2 not in names:
            raise ConfigurationError(f"unknown config key {k!r}")
        ckeys[k2] = v
    try:
        cfg = SolverConfig(**ckeys)
        params = ModelParams(N=cfg.dim, **pkeys)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg, params, extra


class SpectralModel:
    """Spectral operators, exact linear propagators and source evaluation."""

    def __init__(self, grid: PeriodicGrid, params: ModelParams, dealias_fraction=2.0 / 3.0,
                 workers=None):
        if params.N != grid.N:
            raise ConfigurationError("params.N and grid dimension differ")
        self.grid = grid
        self.params = params
        self.coeffs: LinearCoefficients = equilibrium_coefficients(params)
        self.workers = workers
        N = grid.N
        self.kvec = [np.broadcast_to(k, grid.spectral_shape) for k in grid.kvec]
        self.k2 = grid.k2
        self.kmag = grid.kmag
        with np.errstate(invalid="ignore", divide="ignore"):
            self.khat = np.stack([np.where(self.kmag > 0, k / self.kmag, 0.0) for k in self.kvec])
        m2 = sum(np.broadcast_to(m, grid.spectral_shape) ** 2 for m in grid.mvec)
        radius = dealias_fraction * grid.points_per_axis / 2
        self.mask = (m2 < radius**2) & ~grid.nyquist_mask
        m2i = np.rint(m2).astype(np.int64)
        self._m2_unique, self._m2_inverse = np.unique(m2i, return_inverse=True)
        self._m2_inverse = self._m2_inverse.reshape(grid.spectral_shape)
        self._xi_unique = np.sqrt(self._m2_unique) / grid.L
        self._prop_cache = {}
        self._rho_guess = None
        self.layout = _layout(N)

    # -- transforms ---------------------------------------------------------
    def fft(self, f):
        return self.grid.fft(f)

    def ifft(self, F):
        import scipy.fft as sfft
        g = self.grid
        axes = tuple(range(-g.N, 0))
        return sfft.irfftn(F * g.points_per_axis**g.N, s=g.shape, axes=axes, workers=self.workers)

    def fft_w(self, f):
        import scipy.fft as sfft
        g = self.grid
        axes = tuple(range(-g.N, 0))
        return sfft.rfftn(f, axes=axes, workers=self.workers) / g.points_per_axis**g.N

    def dealias(self, F):
        return F * self.mask

    # -- exact linear propagation ------------------------------------------
    def propagators(self, h):
        key = float(h)
        hit = self._prop_cache.get(key)
        if hit is not None:
            return hit
        E = propagator(self._xi_unique, self.coeffs, h)  # (n_unique, 4, 4)
        E = np.moveaxis(E[self._m2_inverse], (-2, -1), (0, 1)).astype(complex)
        c = self.coeffs
        heat = np.stack([np.exp(-c.nu1_plus * self.k2 * h), np.exp(-c.nu1_minus * self.k2 * h)])
        if len(self._prop_cache) > 8:
            self._prop_cache.clear()
        self._prop_cache[key] = (E, heat)
        return E, heat

    def to_linear(self, F):
        """Spectral state -> (ĉ⁺, d̂⁺, ĉ⁻, d̂⁻), solenoidal û⁺, solenoidal û⁻."""
        cp, up, cm, um = self.layout
        dp = 1j * np.sum(self.khat * F[up], axis=0)
        dm = 1j * np.sum(self.khat * F[um], axis=0)
        Pp = F[up] + 1j * self.khat * dp
        Pm = F[um] + 1j * self.khat * dm
        return np.stack([F[cp], dp, F[cm], dm]), Pp, Pm

    def from_linear(self, V, Pp, Pm):
        N = self.grid.N
        F = np.empty((2 * N + 2,) + self.grid.spectral_shape, dtype=complex)
        cp, up, cm, um = self.layout
        F[cp] = V[0]
        F[up] = Pp - 1j * self.khat * V[1]
        F[cm] = V[2]
        F[um] = Pm - 1j * self.khat * V[3]
        return F

    def apply_linear(self, F, h):
        """exp(hL) applied to a spectral state (exact per mode)."""
        if h == 0:
            return F.copy()
        E, heat = self.propagators(h)
        V, Pp, Pm = self.to_linear(F)
        V = np.einsum("ij...,j...->i...", E, V)
        return self.from_linear(V, Pp * heat[0], Pm * heat[1])

    def linear_rhs(self, F):
        """Action of the linear generator L on a spectral state."""
        c = self.coeffs
        cp, up, cm, um = self.layout
        ik = [1j * k for k in self.kvec]
        out = np.empty_like(F)
        divp = sum(ik[j] * F[up][j] for j in range(self.grid.N))
        divm = sum(ik[j] * F[um][j] for j in range(self.grid.N))
        out[cp] = -divp
        out[cm] = -divm
        for j in range(self.grid.N):
            grad_p = ik[j] * (c.beta1 * F[cp] + c.beta2 * F[cm] + self.k2 * F[cp])
            grad_m = ik[j] * (c.beta3 * F[cp] + c.beta4 * F[cm] + self.k2 * F[cm])
            out[up][j] = -grad_p - c.nu1_plus * self.k2 * F[up][j] + c.nu2_plus * ik[j] * divp
            out[um][j] = -grad_m - c.nu1_minus * self.k2 * F[um][j] + c.nu2_minus * ik[j] * divm
        return out

    # -- sources ------------------------------------------------------------
    def sources_spectral(self, F, dealias=True):
        """Spectral sources H(F), truncated to the dealiasing sphere unless ``dealias`` is False."""
        g = self.grid
        N = g.N
        cp, up, cm, um = self.layout
        ik = [1j * k for k in self.kvec]
        p = self.params
        # one batched inverse transform for every physical-space factor
        blocks = [F[cp][None], F[cm][None], F[up], F[um],
                  np.stack([ik[j] * F[cp] for j in range(N)]),
                  np.stack([ik[j] * F[cm] for j in range(N)]),
                  np.stack([ik[j] * F[up][i] for i in range(N) for j in range(N)]),
                  np.stack([ik[j] * F[um][i] for i in range(N) for j in range(N)])]
        for phase, mu, lam in ((up, p.mu_plus, p.lambda_plus), (um, p.mu_minus, p.lambda_minus)):
            div = sum(ik[j] * F[phase][j] for j in range(N))
            blocks.append(np.stack([-mu * self.k2 * F[phase][i] + (mu + lam) * ik[i] * div
                                    for i in range(N)]))
        phys = self.ifft(np.concatenate(blocks))
        o = 0
        c_p = phys[o]; o += 1
        c_m = phys[o]; o += 1
        u_p = phys[o:o + N]; o += N
        u_m = phys[o:o + N]; o += N
        gcp = phys[o:o + N]; o += N
        gcm = phys[o:o + N]; o += N
        gup = phys[o:o + N * N].reshape((N, N) + g.shape); o += N * N  # gup[i, j] = ∂_j u_i
        gum = phys[o:o + N * N].reshape((N, N) + g.shape); o += N * N
        vis_p = phys[o:o + N]; o += N
        vis_m = phys[o:o + N]; o += N

        th = self._thermo(c_p, c_m)
        a_p = th.h_plus * gcp + th.k_plus * gcm
        a_m = th.h_minus * gcp + th.k_minus * gcm
        H2 = _momentum_source(th.g_plus, th.gtilde, gcp, gcm, a_p, u_p, gup, th.l_plus,
                              p.mu_plus, p.lambda_plus, vis_p)
        H4 = _momentum_source(th.g_minus, th.gtilde, gcm, gcp, a_m, u_m, gum, th.l_minus,
                              p.mu_minus, p.lambda_minus, vis_m)
        prods = self.fft_w(np.concatenate([c_p * u_p, c_m * u_m, H2, H4]))
        out = np.empty((2 * N + 2,) + g.spectral_shape, dtype=complex)
        out[cp] = -sum(ik[j] * prods[j] for j in range(N))
        out[cm] = -sum(ik[j] * prods[N + j] for j in range(N))
        out[up] = prods[2 * N:3 * N]
        out[um] = prods[3 * N:4 * N]
        return out * self.mask if dealias else out

    def _thermo(self, c_p, c_m):
        nonfinite = ~np.isfinite(c_p) | ~np.isfinite(c_m)
        if nonfinite.any():
            idx = tuple(int(i) for i in np.unravel_index(np.argmax(nonfinite), nonfinite.shape))
            raise NumericalAbort(f"non-finite phase mass at grid point {idx}",
                                 report={"index": idx})
        bad = (c_p <= -1.0) | (c_m <= -1.0)
        if bad.any():
            idx = tuple(int(i) for i in np.unravel_index(np.argmax(bad), bad.shape))
            raise StateError(f"invalid phase mass at grid point {idx}", index=idx)
        guess = self._rho_guess if (self._rho_guess is not None
                                     and self._rho_guess.shape == c_p.shape) else None
        try:
            th = pointwise_thermo(c_p, c_m, self.params, guess=guess)
        except (ConvergenceError, DomainError) as exc:
            raise StateError(f"closure failed: {exc}") from exc
        self._rho_guess = th.rho_plus
        return th

    # -- time stepping ------------------------------------------------------
    def step(self, F, t, h, forcing=None, sources=True):
        """One integrating-factor midpoint step of size h from time t."""
        def rhs(G, tt):
            out = self.sources_spectral(G) if sources else np.zeros_like(G)
            if forcing is not None:
                out = out + forcing(tt)
            return out

        N0 = rhs(F, t)
        half = self.apply_linear(F + 0.5 * h * N0, 0.5 * h)
        N1 = rhs(half, t + 0.5 * h)
        return self.apply_linear(F, h) + h * self.apply_linear(N1, 0.5 * h)

    # -- diagnostics --------------------------------------------------------
    def u_variables(self, F):
        """Spectral ((√β₁+Λ)c⁺, u⁺, (√β₄+Λ)c⁻, u⁻)."""
        c = self.coeffs
        cp, up, cm, um = self.layout
        out = F.copy()
        out[cp] = (math.sqrt(c.beta1) + self.kmag) * F[cp]
        out[cm] = (math.sqrt(c.beta4) + self.kmag) * F[cm]
        return out


def _momentum_source(g, gt, gc_own, gc_cross, a, u, gu, l, mu, lam, vis):
    """Momentum source of one phase.

    ``gc_own``/``gc_cross``: gradients of this phase's and the other phase's
    mass; ``a = h∇c⁺ + k∇c⁻``; ``gu[i, j] = ∂_j u_i``; ``vis = μΔu + (μ+λ)∇div u``.
    """
    N = u.shape[0]
    div = sum(gu[j, j] for j in range(N))
    out = np.empty_like(u)
    for i in range(N):
        adv = sum(u[j] * gu[i, j] for j in range(N))
        strain = sum(a[j] * (gu[i, j] + gu[j, i]) for j in range(N))
        out[i] = (-g * gc_own[i] - gt * gc_cross[i] - adv + mu * strain
                  + lam * a[i] * div + l * vis[i])
    return out


_MODELS: dict = {}


def get_model(grid: PeriodicGrid, params: ModelParams, dealias_fraction=2.0 / 3.0) -> SpectralModel:
    key = (grid, params, float(dealias_fraction))
    m = _MODELS.get(key)
    if m is None:
        if len(_MODELS) > 4:
            _MODELS.clear()
        m = _MODELS[key] = SpectralModel(grid, params, dealias_fraction)
    return m


def compute_sources(state: FieldState, params: ModelParams, dealias_fraction=2.0 / 3.0,
                    dealias=True) -> SourceFields:
    model = get_model(state.grid, params, dealias_fraction)
    S = model.ifft(model.sources_spectral(model.fft(state.stack()), dealias=dealias))
    cp, up, cm, um = model.layout
    return SourceFields(S[cp], S[up], S[cm], S[um])


def step_imex(state: FieldState, dt, coeffs: LinearCoefficients | None, params: ModelParams,
              dealias_fraction=2.0 / 3.0, forcing=None, sources=True) -> FieldState:
    """Advance one step. ``coeffs`` is accepted for symmetry; it is derived from ``params``."""
    model = get_model(state.grid, params, dealias_fraction)
    if coeffs is not None and coeffs != model.coeffs:
        raise ConfigurationError("coeffs do not match params")
    if not np.all(np.isfinite(state.stack())):
        raise NumericalAbort("non-finite values in the input state",
                             report={"time": state.time, "state": state})
    umax = max(np.abs(state.u_plus).max(), np.abs(state.u_minus).max())
    kmax = state.grid.k_nyquist * math.sqrt(state.grid.N)
    # advection lives in the sources; the linear part is exact
    if sources and dt * umax * kmax > 1.0:
        warnings.warn(f"advective CFL number {dt * umax * kmax:.2f} exceeds 1", RuntimeWarning)
    F = model.fft(state.stack())
    G = model.step(F, state.time, dt, forcing=forcing, sources=sources)
    if not np.all(np.isfinite(G)):
        raise NumericalAbort("non-finite values after step",
                             report={"time": state.time, "state": state})
    return FieldState.from_stack(state.grid, model.ifft(G), state.time + dt)


# ---------------------------------------------------------------------------
# initial data

def generate_initial_data(grid: PeriodicGrid, cfg: SolverConfig, params: ModelParams | None = None) -> FieldState:
    """Random-phase data with radial spectrum |k|^a exp(-(|k|/k_c)²).

    ``cfg.amplitude`` is the RMS value of each nonzero component. Phases are
    those of a seeded white-noise field, so the data are real and reproducible.
    """
    N = grid.N
    rng = np.random.default_rng(cfg.seed)
    k = grid.kmag
    with np.errstate(divide="ignore"):
        spec = np.where(k > 0, np.abs(k) ** cfg.spectral_slope, 0.0)
    if cfg.cutoff is not None:
        spec = spec * np.exp(-(k / cfg.cutoff) ** 2)
    m2 = sum(np.broadcast_to(m, grid.spectral_shape) ** 2 for m in grid.mvec)
    radius = cfg.dealias_fraction * grid.points_per_axis / 2
    spec = spec * ((m2 < radius**2) & ~grid.nyquist_mask)
    Z = grid.fft(rng.standard_normal((2 * N + 2,) + grid.shape))
    F = Z / np.maximum(np.abs(Z), 1e-300) * spec
    cp, up, cm, um = _layout(N)
    if cfg.data_fields == "masses":
        F[up] = 0.0
        F[um] = 0.0
    phys = grid.ifft(F)
    rms = np.sqrt(np.mean(phys**2, axis=tuple(range(1, N + 1))))
    scale = np.where(rms > 0, cfg.amplitude / np.where(rms > 0, rms, 1.0), 0.0)
    phys = phys * scale.reshape((-1,) + (1,) * N)
    if phys[cp].min() <= -1.0 or phys[cm].min() <= -1.0:
        raise ConfigurationError("initial data violate c± > -1; lower the amplitude")
    return FieldState.from_stack(grid, phys, 0.0)


def x_initial(state: FieldState, model: SpectralModel, partition: DyadicPartition) -> float:
    """X(0): weighted Ḃ^{N/2-1}_{2,1} norm of U at one instant."""
    a = shell_amplitudes_spectral(model.u_variables(model.fft(state.stack())), partition)
    return float(np.sum(2.0 ** (partition.shells * (state.grid.N / 2 - 1)) * a))


def rescale_to_x0(state: FieldState, target, model: SpectralModel, partition: DyadicPartition) -> FieldState:
    x0 = x_initial(state, model, partition)
    if x0 == 0:
        raise ConfigurationError("cannot rescale zero data")
    return state.scaled(target / x0)


# ---------------------------------------------------------------------------
# trajectories

def lp_norm(model: SpectralModel, F, p, k=0):
    """‖Λᵏ v‖_{Lᵖ} of the whole state with the pointwise Euclidean norm."""
    G = F * model.kmag**k if k else F
    phys = model.ifft(G)
    mag = np.sqrt(np.sum(phys**2, axis=0))
    if p in (np.inf, "inf", math.inf):
        return float(mag.max())
    p = float(p)
    if p < 1:
        raise DomainError("p must be >= 1")
    dv = model.grid.volume / mag.size
    return float((np.sum(mag**p) * dv) ** (1.0 / p))


@dataclass
class Trajectory:
    times: np.ndarray
    shells: np.ndarray
    U_amps: np.ndarray
    U2_amps: np.ndarray
    mass_amps: np.ndarray
    means: np.ndarray
    lp: dict
    final: FieldState
    partition: DyadicPartition
    params: ModelParams
    coeffs: LinearCoefficients
    config: SolverConfig | None = None
    states: list | None = None
    snapshots: list = field(default_factory=list)

    @property
    def N(self):
        return self.partition.grid.N

    def besov_series(self, s, r=1, shells=None, which="U"):
        from .littlewood_paley import besov_from_amplitudes
        amps = {"U": self.U_amps, "U2": self.U2_amps, "masses": self.mass_amps}[which]
        return besov_from_amplitudes(amps, self.shells, s, r, shells)

    def scaled(self, kappa):
        """Same trajectory with every field multiplied by κ (norm series only)."""
        k = abs(kappa)
        return Trajectory(self.times.copy(), self.shells, k * self.U_amps, k * self.U2_amps,
                          k * self.mass_amps, kappa * self.means,
                          {key: k * v for key, v in self.lp.items()}, self.final.scaled(kappa),
                          self.partition, self.params, self.coeffs, self.config)


class _Recorder:
    def __init__(self, model, partition, lp_list, keep_states):
        self.model, self.partition = model, partition
        self.lp_list = [(float(p) if p not in ("inf",) else math.inf, int(k)) for p, k in lp_list]
        self.keep = keep_states
        self.t, self.a, self.a2, self.am, self.means, self.states = [], [], [], [], [], []
        self.lp = {key: [] for key in self.lp_list}

    def __call__(self, t, F):
        m = self.model
        cp, _, cm, _ = m.layout
        UV = m.u_variables(F)
        self.t.append(t)
        self.a.append(shell_amplitudes_spectral(UV, self.partition))
        self.a2.append(shell_amplitudes_spectral(UV * m.k2, self.partition))
        self.am.append(shell_amplitudes_spectral(UV[[cp, cm]], self.partition))
        zero = (0,) * m.grid.N
        self.means.append((F[cp][zero].real, F[cm][zero].real))
        for key in self.lp_list:
            self.lp[key].append(lp_norm(m, F, *key))
        if self.keep:
            self.states.append(FieldState.from_stack(m.grid, m.ifft(F), t))
        return self.a[-1]

    def trajectory(self, final, params, cfg):
        return Trajectory(np.array(self.t), self.partition.shells.copy(), np.array(self.a),
                          np.array(self.a2), np.array(self.am), np.array(self.means),
                          {k: np.array(v) for k, v in self.lp.items()}, final, self.partition,
                          params, self.model.coeffs, cfg, self.states if self.keep else None)


def simulate(config: SolverConfig, params: ModelParams, initial: FieldState | None = None,
             keep_states=False, forcing=None, sources=True, progress=None) -> Trajectory:
    """Integrate from ``initial`` (or generated data) to ``config.T``."""
    if params.N != config.dim:
        raise ConfigurationError("params.N differs from config.dim")
    grid = config.make_grid()
    partition = build_partition(grid, config.j0)
    model = SpectralModel(grid, params, config.dealias_fraction)
    state0 = initial if initial is not None else generate_initial_data(grid, config, params)
    if state0.grid != grid:
        raise ConfigurationError("initial state grid differs from config")
    F = model.dealias(model.fft(state0.stack()))
    rec = _Recorder(model, partition, config.lp_list, keep_states)
    weight = 2.0 ** (partition.shells * (grid.N / 2 - 1))
    b0 = float(weight @ rec(state0.time, F))
    snapdir = Path(config.output_dir) / "snapshots" if config.output_dir and config.snapshot_every else None
    snaps = []
    if snapdir:
        snapdir.mkdir(parents=True, exist_ok=True)
        snaps.append(write_snapshot(FieldState.from_stack(grid, model.ifft(F), state0.time),
                                    snapdir / "0000", params))
    t = state0.time
    h = config.dt
    record_at = config.output_steps()
    for n in range(1, config.n_steps + 1):
        F = model.step(F, t, h, forcing=forcing, sources=sources)
        t = state0.time + n * h
        if not np.all(np.isfinite(F)):
            raise NumericalAbort(f"non-finite field at t={t:.6g}",
                                 report=_abort_report(t, n, rec, snapdir, params, grid, None))
        if n in record_at:
            b = float(weight @ rec(t, F))
            if b0 > 0 and b > config.blowup_factor * b0:
                raise NumericalAbort(f"norm grew by more than {config.blowup_factor:g}x at t={t:.6g}",
                                     report=_abort_report(t, n, rec, snapdir, params, grid,
                                                          model.ifft(F)))
        if snapdir and n % config.snapshot_every == 0:
            snaps.append(write_snapshot(FieldState.from_stack(grid, model.ifft(F), t),
                                        snapdir / f"{n // config.snapshot_every:04d}", params))
        if progress is not None:
            progress(n, t)
    final = FieldState.from_stack(grid, model.ifft(F), t)
    traj = rec.trajectory(final, params, config)
    traj.snapshots = snaps
    return traj


def _abort_report(t, n, rec, snapdir, params, grid, phys):
    report = {"time": t, "step": n, "last_recorded_time": rec.t[-1] if rec.t else None}
    if phys is not None and snapdir is not None:
        report["snapshot"] = str(write_snapshot(FieldState.from_stack(grid, phys, t),
                                                snapdir / "abort", params))
    elif phys is not None:
        report["state"] = FieldState.from_stack(grid, phys, t)
    return report


# ---------------------------------------------------------------------------
# Picard iteration of the Duhamel map

@dataclass
class PicardReport:
    iterations: int
    differences: list
    ratios: list
    contracted: bool
    converged: bool
    final: FieldState
    x0: float
    reference_factor: float = 0.5

    @property
    def max_ratio(self):
        return max(self.ratios) if self.ratios else 0.0

    def to_dict(self):
        return {"iterations": self.iterations, "differences": self.differences,
                "ratios": self.ratios, "contracted": self.contracted,
                "converged": self.converged, "x0": self.x0,
                "reference_factor": self.reference_factor}


def picard_iterate(initial: FieldState, config: SolverConfig, params: ModelParams) -> PicardReport:
    """Iterate b ↦ Φ(b) on [0, T] with sources frozen at the previous iterate.

    Each sweep solves the linear system exactly per mode and integrates the
    Duhamel term with the trapezoid rule on the time grid. Successive
    differences are measured with the X functional.
    """
    from .decay_harness import x_series

    grid = initial.grid
    partition = build_partition(grid, config.j0)
    model = SpectralModel(grid, params, config.dealias_fraction)
    x0 = x_initial(initial, model, partition)
    if config.eta is not None and x0 > config.eta:
        raise ConfigurationError(f"X(0)={x0:.3g} exceeds the smallness threshold {config.eta:g}")
    K, h = config.n_steps, config.dt
    times = initial.time + h * np.arange(K + 1)
    F0 = model.dealias(model.fft(initial.stack()))
    b = [F0]
    for _ in range(K):
        b.append(model.apply_linear(b[-1], h))

    def metric(series):
        amps = np.array([shell_amplitudes_spectral(model.u_variables(G), partition) for G in series])
        return float(x_series(times, amps, partition.shells, grid.N)[-1])

    diffs, ratios = [], []
    contracted = converged = False
    below = 0
    for it in range(1, config.picard_iterations + 1):
        H = [model.sources_spectral(G) for G in b]
        new = [F0]
        for n in range(K):
            new.append(model.apply_linear(new[-1] + 0.5 * h * H[n], h) + 0.5 * h * H[n + 1])
        d = metric([x - y for x, y in zip(new, b)])
        b = new
        if diffs:
            ratios.append(d / diffs[-1] if diffs[-1] > 0 else 0.0)
            below = below + 1 if ratios[-1] < 1 else 0
            contracted = contracted or below >= 3
        diffs.append(d)
        if d == 0 or (contracted and d <= config.picard_tol * max(metric(b), 1e-300)):
            converged = True
            break
    final = FieldState.from_stack(grid, model.ifft(b[-1]), float(times[-1]))
    return PicardReport(it, diffs, ratios, contracted, converged, final, x0)


# ---------------------------------------------------------------------------
# snapshots

def write_snapshot(state: FieldState, path, params: ModelParams | None = None) -> Path:
    """Write ``path.bin`` (raw little-endian float64) and ``path.json`` (header)."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    g = state.grid
    names = (["c_plus"] + [f"u_plus_{i + 1}" for i in range(g.N)]
             + ["c_minus"] + [f"u_minus_{i + 1}" for i in range(g.N)])
    header = {"format": SNAPSHOT_FORMAT, "version": 1, "endianness": "little", "dtype": "float64",
              "order": "C", "grid": g.to_dict(), "shape": [len(names)] + list(g.shape),
              "fields": names, "time": state.time,
              "params": params.to_dict() if params is not None else None}
    base.parent.mkdir(parents=True, exist_ok=True)
    state.stack().astype("<f8").tofile(base.with_suffix(".bin"))
    base.with_suffix(".json").write_text(json.dumps(header, indent=1))
    return base.with_suffix(".bin")


def read_snapshot(path):
    """Return (FieldState, header) from a snapshot written by ``write_snapshot``."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    try:
        header = json.loads(base.with_suffix(".json").read_text())
        raw = np.fromfile(base.with_suffix(".bin"), dtype="<f8")
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read snapshot {base}: {exc}") from exc
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ConfigurationError(f"{base} is not a snapshot")
    grid = PeriodicGrid(**header["grid"])
    shape = tuple(header["shape"])
    if raw.size != int(np.prod(shape)):
        raise ConfigurationError(f"snapshot {base} has {raw.size} values, expected {np.prod(shape)}")
    return FieldState.from_stack(grid, raw.reshape(shape), header["time"]), header
