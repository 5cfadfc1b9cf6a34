"""Decay experiments: the functionals X(t) and D(t), power-law fits, Lᵖ decay,
the convolution inequality check, and report files.

All functionals work on per-shell amplitude series a_q(t_n) of

    U = ((√β₁+Λ)c⁺, u⁺, (√β₄+Λ)c⁻, u⁻),

where vector components are combined in L² on each shell.
"""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .closure import LinearCoefficients, ModelParams, equilibrium_coefficients
from .errors import ConfigurationError, DomainError
from .linear_symbol import (flat_profile, lyapunov_dissipation_margin, lyapunov_weights,
                            semigroup_besov_decay)
from .littlewood_paley import DyadicPartition, besov_from_amplitudes, shell_amplitudes_spectral

DEFAULT_EPSILON = 0.1
QUADRATURE_WINDOW = (10.0, 1e3)
TORUS_T1 = 10.0


# ---------------------------------------------------------------------------
# X and D

def x_series(times, amps, shells, N):
    """X(t_n): running per-shell sup at s=N/2-1 plus per-shell ∫₀ᵗ at s=N/2+1."""
    amps = np.asarray(amps, dtype=float)
    if amps.ndim != 2 or amps.shape[0] == 0:
        raise DomainError("empty trajectory")
    times = np.asarray(times, dtype=float)
    shells = np.asarray(shells)
    sup = np.maximum.accumulate(amps, axis=0)
    if amps.shape[0] > 1:
        cum = integrate.cumulative_trapezoid(amps, times, axis=0, initial=0.0)
    else:
        cum = np.zeros_like(amps)
    return sup @ 2.0 ** (shells * (N / 2 - 1)) + cum @ 2.0 ** (shells * (N / 2 + 1))


def _u_weight(coeffs: LinearCoefficients, grid):
    k = grid.kmag
    return math.sqrt(coeffs.beta1) + k, math.sqrt(coeffs.beta4) + k


def _state_amplitudes(states, coeffs, partition, laplacian=False):
    grid = partition.grid
    wp, wm = _u_weight(coeffs, grid)
    N = grid.N
    out = []
    for st in states:
        F = grid.fft(st.stack())
        F[0] *= wp
        F[N + 1] *= wm
        if laplacian:
            F = F * grid.k2
        out.append(shell_amplitudes_spectral(F, partition))
    return np.array(out)


def _series(trajectory, coeffs, partition, laplacian=False):
    """(times, amplitudes, shells, N) from a Trajectory or a list of FieldStates."""
    if hasattr(trajectory, "U_amps"):
        amps = trajectory.U2_amps if laplacian else trajectory.U_amps
        return trajectory.times, amps, trajectory.shells, trajectory.N
    states = list(trajectory)
    if not states:
        raise DomainError("empty trajectory")
    if coeffs is None or partition is None:
        raise DomainError("coeffs and partition are required for raw state lists")
    times = np.array([s.time for s in states])
    return times, _state_amplitudes(states, coeffs, partition, laplacian), partition.shells, partition.grid.N


def eval_X(trajectory, coeffs: LinearCoefficients | None = None,
           partition: DyadicPartition | None = None):
    times, amps, shells, N = _series(trajectory, coeffs, partition)
    return x_series(times, amps, shells, N)


def default_s_samples(N, epsilon=DEFAULT_EPSILON, n=9):
    return np.linspace(epsilon - N / 2, 2.0, n + 1)[1:]


@dataclass
class DSeries:
    times: np.ndarray
    low: np.ndarray
    high: np.ndarray
    s_samples: np.ndarray
    alpha: float
    j0: int

    @property
    def total(self):
        return self.low + self.high


def d_series(times, amps, amps2, shells, N, j0, epsilon=DEFAULT_EPSILON, s_samples=None,
             chemin_lerner=True):
    times = np.asarray(times, dtype=float)
    shells = np.asarray(shells)
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    s_samples = default_s_samples(N, epsilon) if s_samples is None else np.atleast_1d(
        np.asarray(s_samples, dtype=float))
    if s_samples.size == 0 or np.any(s_samples <= epsilon - N / 2) or np.any(s_samples > 2):
        raise DomainError(f"s samples must lie in ({epsilon - N / 2:g}, 2]")
    bracket = np.sqrt(1.0 + times**2)
    low = np.zeros_like(times)
    for s in s_samples:
        v = bracket ** (N / 4 + s / 2) * besov_from_amplitudes(amps, shells, s, 1, ("low", j0))
        low = np.maximum(low, np.maximum.accumulate(v))
    alpha = N / 2 + 0.5 - epsilon
    weighted = (times**alpha)[:, None] * np.asarray(amps2)
    sel = shells >= j0
    w = 2.0 ** (shells[sel] * (N / 2 - 1))
    if chemin_lerner:
        high = np.maximum.accumulate(weighted[:, sel], axis=0) @ w
    else:
        high = np.maximum.accumulate(weighted[:, sel] @ w)
    return DSeries(times, low, high, s_samples, alpha, j0)


def eval_D(trajectory, coeffs: LinearCoefficients | None = None,
           partition: DyadicPartition | None = None, epsilon=DEFAULT_EPSILON, s_samples=None,
           chemin_lerner=True) -> DSeries:
    """D(t): ⟨τ⟩-weighted low-frequency sup over s plus τ^α-weighted high block of Λ²U."""
    times, amps, shells, N = _series(trajectory, coeffs, partition)
    _, amps2, _, _ = _series(trajectory, coeffs, partition, laplacian=True)
    part = partition if partition is not None else trajectory.partition
    return d_series(times, amps, amps2, shells, N, part.j0, epsilon, s_samples, chemin_lerner)


# ---------------------------------------------------------------------------
# fits

@dataclass
class DecayFit:
    name: str
    slope: float
    intercept: float
    window: tuple
    residual: float
    theory_slope: float | None = None
    n_samples: int = 0

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise DomainError("fit window must satisfy t1 < t2")

    @property
    def relative_gap(self):
        if self.theory_slope in (None, 0):
            return None
        return abs(self.slope - self.theory_slope) / abs(self.theory_slope)

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        d["relative_gap"] = self.relative_gap
        return d


def fit_power_law(times, values, window=None, theory_slope=None, name="") -> DecayFit:
    """Least squares of log v against log t over ``window`` (inclusive)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t.min(), t.max())
    t1, t2 = float(window[0]), float(window[1])
    sel = (t >= t1) & (t <= t2)
    if sel.sum() < 8:
        raise DomainError(f"need at least 8 samples in window [{t1:g}, {t2:g}], got {int(sel.sum())}")
    if np.any(v[sel] <= 0) or np.any(t[sel] <= 0):
        raise DomainError("power-law fit needs positive times and values")
    x, y = np.log(t[sel]), np.log(v[sel])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ np.array([slope, intercept])
    return DecayFit(name, float(slope), float(intercept), (t1, t2),
                    float(np.sqrt(np.mean(res**2))), theory_slope, int(sel.sum()))


def besov_theory_slope(N, s):
    return -(N / 4 + s / 2)


# ---------------------------------------------------------------------------
# Lᵖ decay

def lp_theory_slope(N, p, k):
    inv = 0.0 if p in (np.inf, math.inf, "inf") else 1.0 / float(p)
    return -(N / 2) * (1 - inv) - k / 2


def lp_admissible(N, p, k):
    """−N/2 < k + N(1/2 − 1/p) < min(2, N/2 − 1)."""
    inv = 0.0 if p in (np.inf, math.inf, "inf") else 1.0 / float(p)
    v = k + N * (0.5 - inv)
    return -N / 2 < v < min(2.0, N / 2 - 1)


def besov_admissible(N, s, field="mass"):
    """Range of s for which the fractional-derivative decay statement is made."""
    top = min(2.0, N / 2) if field == "mass" else min(2.0, N / 2 - 1)
    return -N / 2 < s <= top


@dataclass
class LpDecay:
    p: float
    k: int
    times: np.ndarray
    values: np.ndarray
    fit: DecayFit | None
    admissible: bool


def lp_decay(trajectory, p, k, window=None, strict=True) -> LpDecay:
    """‖Λᵏ(c⁺, u⁺, c⁻, u⁻)‖_{Lᵖ} series and its power-law fit.

    With ``strict`` the admissible-range guard raises; otherwise the fit is
    still computed and ``admissible`` records the guard's verdict.
    """
    N = trajectory.N
    if k not in (0, 1):
        raise DomainError("derivative order k must be 0 or 1")
    p_key = math.inf if p in (np.inf, math.inf, "inf") else float(p)
    if p_key < 2:
        raise DomainError("p must lie in [2, inf]")
    ok = lp_admissible(N, p_key, k)
    if strict and not ok:
        raise DomainError(f"(p={p}, k={k}) is outside the admissible range for N={N}")
    values = trajectory.lp.get((p_key, int(k)))
    if values is None:
        if trajectory.states is None:
            raise DomainError(f"L^{p} norm with k={k} was not recorded")
        from .nonlinear_solver import get_model, lp_norm
        model = get_model(trajectory.partition.grid, trajectory.params)
        values = np.array([lp_norm(model, model.fft(s.stack()), p_key, k) for s in trajectory.states])
    fit = None
    if window is not None:
        fit = fit_power_law(trajectory.times, values, window, lp_theory_slope(N, p_key, k),
                            name=f"Lp p={p} k={k}")
    return LpDecay(p_key, int(k), trajectory.times, np.asarray(values), fit, ok)


# ---------------------------------------------------------------------------
# convolution inequality

def _head_integral(r, a):
    """∫₀ᵃ (1+τ)^{-r} dτ."""
    if abs(r - 1) < 1e-14:
        return math.log1p(a)
    return ((1 + a) ** (1 - r) - 1) / (1 - r)


@dataclass
class ConvolutionCheck:
    r1: float
    r2: float
    t: np.ndarray
    ratio: np.ndarray
    bound: np.ndarray
    max_ratio: float
    bound_sup: float
    tail_increase: float
    monotone_tail: bool

    @property
    def bounded(self):
        return (bool(np.all(self.ratio <= self.bound * (1 + 1e-9)))
                and math.isfinite(self.bound_sup) and self.tail_increase <= 0.10)


def convolution_inequality_check(r1, r2, t_grid=None) -> ConvolutionCheck:
    """max_t (1+t)^{min(r₁,r₂)} ∫₀ᵗ (1+t−τ)^{-r₁}(1+τ)^{-r₂} dτ on ``t_grid``.

    Alongside the ratio, an explicit bound from splitting the integral at
    t/2 is evaluated, and the relative growth of the ratio over the last
    decade of the grid is reported.
    """
    if not max(r1, r2) > 1:
        raise DomainError("the inequality requires max(r1, r2) > 1")
    if min(r1, r2) < 0:
        raise DomainError("exponents must be nonnegative")
    t = np.asarray(t_grid if t_grid is not None else
                   np.concatenate([[0.0], np.geomspace(1e-2, 1e3, 106)]), dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) <= 0):
        raise DomainError("t_grid must be nonnegative and increasing")
    m = min(r1, r2)
    ratio = np.empty_like(t)
    bound = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0:
            ratio[i] = bound[i] = 0.0
            continue
        f = lambda tau: (1 + ti - tau) ** (-r1) * (1 + tau) ** (-r2)
        val, _ = integrate.quad(f, 0, ti, points=[ti / 2], epsabs=0, epsrel=1e-12, limit=200)
        ratio[i] = val * (1 + ti) ** m
        h = ti / 2
        bound[i] = ((1 + h) ** (-r1) * _head_integral(r2, h)
                    + (1 + h) ** (-r2) * _head_integral(r1, h)) * (1 + ti) ** m
    tail = t >= t[-1] / 10
    t0 = np.nonzero(tail)[0][0]
    inc = (ratio[-1] - ratio[t0]) / ratio[t0] if ratio[t0] > 0 else 0.0
    mono = bool(np.all(np.diff(ratio[tail]) <= 1e-12 * ratio[tail][:-1]))
    return ConvolutionCheck(r1, r2, t, ratio, bound, float(ratio.max()), float(bound.max()),
                            float(inc), mono)


# ---------------------------------------------------------------------------
# experiments and reports

@dataclass
class DecayReport:
    config: dict
    times: np.ndarray
    series: dict
    fits: list = field(default_factory=list)
    lp_fits: list = field(default_factory=list)
    X_series: np.ndarray | None = None
    D_series: DSeries | None = None
    meta: dict = field(default_factory=dict)


def torus_window(coeffs: LinearCoefficients, k_min, t1=TORUS_T1):
    """(t₁, t₂) with t₂ = 0.5/(ĉ₀ k_min²), ĉ₀ the Lyapunov margin at k_min."""
    c0 = lyapunov_dissipation_margin(k_min, coeffs, lyapunov_weights(coeffs))
    return t1, 0.5 / (c0 * k_min**2), c0


def _params_from(cfg: dict, N):
    keys = ("gamma_plus", "gamma_minus", "mu_plus", "mu_minus", "lambda_plus", "lambda_minus")
    return ModelParams(N=N, **{k: cfg[k] for k in keys if k in cfg})


def run_linear_campaign(cfg: dict) -> DecayReport:
    N = int(cfg.get("dim", cfg.get("N", 2)))
    params = _params_from(cfg, N)
    coeffs = equilibrium_coefficients(params)
    s_list = [float(s) for s in cfg.get("s_list", [0.0])]
    window = tuple(cfg.get("window", QUADRATURE_WINDOW))
    times = np.asarray(cfg.get("times", np.geomspace(1.0, 2e3, 41)), dtype=float)
    components = cfg.get("components", "all")
    q0 = int(cfg.get("q0", 0))
    profile = flat_profile(float(cfg.get("amplitude", 1.0)), cfg.get("cutoff"))
    series, fits = {}, []
    for s in s_list:
        res = semigroup_besov_decay(profile, s, times, N, coeffs, q0=q0, components=components)
        name = f"low_B{s:g}"
        series[name] = res.norms
        fits.append(fit_power_law(times, res.norms, window, besov_theory_slope(N, s), name=name))
    return DecayReport(dict(cfg), times, series, fits,
                       meta={"kind": "linear", "N": N, "coeffs": coeffs.to_dict(),
                             "components": components, "q0": q0})


def run_nonlinear_campaign(cfg: dict, progress=None) -> DecayReport:
    from .nonlinear_solver import config_from_dict, simulate

    raw = {k: v for k, v in cfg.items() if k not in ("kind", "window", "t1", "t2", "epsilon")}
    raw.pop("campaign", None)
    scfg, params, _ = config_from_dict(raw)
    traj = simulate(scfg, params, progress=progress)
    return report_from_trajectory(traj, cfg)


def report_from_trajectory(traj, cfg: dict) -> DecayReport:
    N = traj.N
    grid = traj.partition.grid
    j0 = traj.partition.j0
    t1, t2, c0 = torus_window(traj.coeffs, grid.k_min, float(cfg.get("t1", TORUS_T1)))
    if "t2" in cfg:
        t2 = float(cfg["t2"])
    series, fits, lp_fits = {}, [], []
    times = traj.times
    norm_list = traj.config.norm_list if traj.config is not None else []
    can_fit = lambda: np.sum((times >= t1) & (times <= t2)) >= 8
    for s, r in norm_list:
        r = math.inf if r in ("inf", math.inf) else int(r)
        for which in ("U", "masses"):
            name = f"low_B{s:g}_{'inf' if r == math.inf else r}" + ("_masses" if which == "masses" else "")
            v = traj.besov_series(float(s), r, ("low", j0), which)
            series[name] = v
            if can_fit() and np.all(v[(times >= t1) & (times <= t2)] > 0):
                fits.append(fit_power_law(times, v, (t1, t2), besov_theory_slope(N, float(s)), name))
    for (p, k), v in traj.lp.items():
        name = f"L{'inf' if p == math.inf else f'{p:g}'}_k{k}"
        series[name] = v
        if can_fit():
            f = fit_power_law(times, v, (t1, t2), lp_theory_slope(N, p, k), name)
            lp_fits.append(f)
    X = x_series(times, traj.U_amps, traj.shells, N)
    eps = float(cfg.get("epsilon", DEFAULT_EPSILON))
    D = d_series(times, traj.U_amps, traj.U2_amps, traj.shells, N, j0, eps)
    series["X"] = X
    series["D_low"] = D.low
    series["D_high"] = D.high
    meta = {"kind": "nonlinear", "N": N, "j0": j0, "interior_shells": list(traj.partition.interior),
            "window": [t1, t2], "margin_at_kmin": c0, "coeffs": traj.coeffs.to_dict(),
            "mean_drift": float(np.abs(traj.means - traj.means[0]).max()),
            "lp_admissible": {f"{p:g},{k}": lp_admissible(N, p, k) for (p, k) in traj.lp}}
    echo = dict(cfg)
    if traj.config is not None:
        echo.update(traj.config.to_dict())
    return DecayReport(echo, times, series, fits, lp_fits, X, D, meta)


def run_experiment(config, progress=None) -> DecayReport:
    """Run a campaign described by a dict or a TOML/JSON file path."""
    if isinstance(config, (str, os.PathLike)):
        config = _read_config(config)
    cfg = dict(config)
    camp = cfg.pop("campaign", None) or {}
    kind = camp.get("kind") if isinstance(camp, dict) else camp
    kind = kind or cfg.pop("kind", None) or "nonlinear"
    if isinstance(camp, dict):
        cfg.update({k: v for k, v in camp.items() if k != "kind"})
    if kind == "linear":
        return run_linear_campaign(cfg)
    if kind == "nonlinear":
        return run_nonlinear_campaign(cfg, progress)
    raise ConfigurationError(f"unknown campaign kind {kind!r}")


def _read_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        from .nonlinear_solver import tomllib
        return tomllib.loads(text)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc


def _jsonify(x):
    if isinstance(x, dict):
        return {str(k): _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonify(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonify(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def emit_report(report: DecayReport, out_dir) -> list:
    """Write report.json, norms.csv, fits.csv and decay_loglog.dat into ``out_dir``.

    Files are assembled in a temporary directory and moved in only when all
    of them were written, so a failure leaves no partial output.
    """
    out_dir = Path(out_dir)
    parent = out_dir.parent if out_dir.parent != Path("") else Path(".")
    try:
        parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=".report-", dir=parent))
    except OSError as exc:
        raise OSError(f"cannot create report directory under {parent}: {exc}") from exc
    try:
        names = list(report.series)
        with open(tmp / "norms.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for i, t in enumerate(report.times):
                w.writerow([repr(float(t))] + [repr(float(report.series[n][i])) for n in names])
        cols = ["name", "slope", "intercept", "t1", "t2", "residual", "theory_slope",
                "relative_gap", "n_samples", "kind"]
        with open(tmp / "fits.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for kind, fl in (("besov", report.fits), ("lp", report.lp_fits)):
                for f in fl:
                    w.writerow([f.name, f.slope, f.intercept, f.window[0], f.window[1], f.residual,
                                "" if f.theory_slope is None else f.theory_slope,
                                "" if f.relative_gap is None else f.relative_gap, f.n_samples, kind])
        pos = [n for n in names if np.all(np.asarray(report.series[n]) > 0)]
        with open(tmp / "decay_loglog.dat", "w") as fh:
            fh.write("# log10(t) " + " ".join(f"log10({n})" for n in pos) + "\n")
            for i, t in enumerate(report.times):
                if t <= 0:
                    continue
                row = [math.log10(t)] + [math.log10(float(report.series[n][i])) for n in pos]
                fh.write(" ".join(f"{v:.10g}" for v in row) + "\n")
        doc = {"config": report.config, "meta": report.meta,
               "fits": [f.to_dict() for f in report.fits],
               "lp_fits": [f.to_dict() for f in report.lp_fits],
               "series_names": names, "n_times": int(len(report.times))}
        if report.X_series is not None:
            doc["X_final"] = float(report.X_series[-1])
            doc["X_initial"] = float(report.X_series[0])
        if report.D_series is not None:
            doc["D_final"] = {"low": float(report.D_series.low[-1]),
                              "high": float(report.D_series.high[-1]),
                              "alpha": report.D_series.alpha,
                              "s_samples": report.D_series.s_samples}
        (tmp / "report.json").write_text(json.dumps(_jsonify(doc), indent=1))
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for f in sorted(tmp.iterdir()):
            os.replace(f, out_dir / f.name)
            written.append(out_dir / f.name)
        return written
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
