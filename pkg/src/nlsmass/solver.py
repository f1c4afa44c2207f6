"""Split-step integration of i u_t + Delta u + gamma |u|^{4/N} u = 0.

Also provides the Duhamel consistency check, a blow-up time estimator and
the explicit pseudoconformal blow-up solution used as an analytic oracle.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .grid import PHYSICAL, Field, GridError, GridSpec, SpacetimeSeries
from .spectral import Propagator, laplacian, nyquist_fraction

log = logging.getLogger(__name__)

FIXED = "fixed"
ADAPTIVE = "adaptive"


class NumericalFailure(RuntimeError):
    """Non-finite state or an unusable numerical result."""

    def __init__(self, message: str, last_valid: Field | None = None):
        super().__init__(message)
        self.last_valid = last_valid


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 1.0
    dt_base: float = 1e-3
    dt_policy: str = FIXED
    amplitude_cutoff: float | None = None
    snapshot_stride: int = 10
    c_adapt: float = 0.05
    mass_tolerance: float = 1e-8
    allow_linear: bool = False  # test hook: admit gamma == 0

    def __post_init__(self):
        if self.gamma == 0 and not self.allow_linear:
            raise ValueError("gamma must be nonzero")
        if not self.dt_base > 0:
            raise ValueError("dt_base must be positive")
        if self.dt_policy not in (FIXED, ADAPTIVE):
            raise ValueError(f"unknown dt_policy {self.dt_policy!r}")
        if self.amplitude_cutoff is not None and not self.amplitude_cutoff > 0:
            raise ValueError("amplitude_cutoff must be positive")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    def cutoff_for(self, spec: GridSpec) -> float:
        """Explicit cutoff, else the width-resolution default (8h)^{-N/2}."""
        if self.amplitude_cutoff is not None:
            return self.amplitude_cutoff
        return (8 * spec.spacing) ** (-spec.dim / 2)

    def dt_for(self, amplitude: float, dim: int) -> float:
        if self.dt_policy == FIXED:
            return self.dt_base
        return self.dt_base / (1 + self.c_adapt * amplitude ** (4 / dim))


@dataclass(frozen=True, eq=False)
class Trajectory:
    series: SpacetimeSeries
    mass_series: np.ndarray
    amp_series: np.ndarray
    st_norm_accum: np.ndarray
    truncated: bool
    valid: bool
    steps: int
    config: SolverConfig = dc_field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.series.times

    @property
    def spec(self) -> GridSpec:
        return self.series.spec

    @property
    def exponent(self) -> float:
        n = self.spec.dim
        return 2 * (n + 2) / n

    def mass_drift(self) -> float:
        m0 = self.mass_series[0]
        return float(np.max(np.abs(self.mass_series - m0)) / m0)

    def spacetime_norm(self) -> float:
        """Accumulated L^q spacetime norm up to the last snapshot."""
        return float(self.st_norm_accum[-1] ** (1 / self.exponent))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mass", "amplitude", "st_norm_accum"])
            for row in zip(self.times, self.mass_series, self.amp_series, self.st_norm_accum):
                w.writerow([repr(float(v)) for v in row])


def _nonlinear_phase(values: np.ndarray, gamma: float, dim: int, dt: float) -> np.ndarray:
    return values * np.exp(1j * gamma * np.abs(values) ** (4 / dim) * dt)


def step(u: Field, dt: float, config: SolverConfig, propagator: Propagator | None = None) -> Field:
    """One Strang step: half nonlinear phase, free evolution, half nonlinear phase."""
    prop = propagator if propagator is not None else Propagator(u.spec)
    n = u.spec.dim
    v = _nonlinear_phase(u.values, config.gamma, n, dt / 2)
    v = prop.apply_hat(np.fft.fftn(v), dt)
    v = _nonlinear_phase(v, config.gamma, n, dt / 2)
    if not np.all(np.isfinite(v)):
        raise NumericalFailure("non-finite values after a step", last_valid=u)
    return Field(u.spec, v)


def evolve(u0: Field, t_target: float, config: SolverConfig) -> Trajectory:
    """Integrate from t=0 to ``t_target`` or until the amplitude cutoff.

    Snapshots are stored every ``snapshot_stride`` steps plus the final
    state.  The running spacetime integral uses the trapezoid rule over every
    step, not just the snapshots.
    """
    if u0.domain != PHYSICAL:
        raise GridError("initial data must be a physical field")
    if u0.max_abs() == 0:
        raise ValueError("initial data must be nonzero")
    if not t_target > 0:
        raise ValueError("t_target must be positive")
    spec = u0.spec
    n = spec.dim
    q = 2 * (n + 2) / n
    vol = spec.cell_volume()
    cutoff = config.cutoff_for(spec)
    prop = Propagator(spec)

    def slice_int(v):
        return float(np.sum(np.abs(v) ** q) * vol)

    u = u0
    t = 0.0
    amp = u.max_abs()
    f_prev = slice_int(u.values)
    accum = 0.0
    times, snaps, masses, amps, accums = [0.0], [u.values], [u.mass()], [amp], [0.0]
    truncated = False
    k = 0
    while t < t_target * (1 - 1e-14):
        dt = min(config.dt_for(amp, n), t_target - t)
        # fixed-dt runs hitting the horizon exactly must not create a sliver step
        if config.dt_policy == FIXED and t_target - t - dt < 1e-12 * t_target:
            dt = t_target - t
        try:
            u = step(u, dt, config, prop)
        except NumericalFailure:
            log.warning("non-finite state at t=%.6g; stopping", t)
            truncated = True
            break
        k += 1
        t = t + dt
        amp = u.max_abs()
        f_new = slice_int(u.values)
        accum += 0.5 * dt * (f_prev + f_new)
        f_prev = f_new
        last = t >= t_target * (1 - 1e-14)
        if amp > cutoff:
            truncated = True
            last = True
        if k % config.snapshot_stride == 0 or last:
            times.append(t)
            snaps.append(u.values)
            masses.append(u.mass())
            amps.append(amp)
            accums.append(accum)
        if truncated:
            log.info("amplitude %.3g exceeded cutoff %.3g at t=%.6g", amp, cutoff, t)
            break
    masses = np.array(masses)
    drift = np.max(np.abs(masses - masses[0])) / masses[0]
    valid = bool(drift < config.mass_tolerance)
    if not valid:
        log.warning("mass drift %.2e exceeds tolerance %.1e", drift, config.mass_tolerance)
    series = SpacetimeSeries(spec, np.array(times), np.stack(snaps))
    return Trajectory(series, masses, np.array(amps), np.array(accums), truncated, valid, k, config)


def time_reversed(u: Field) -> Field:
    """Initial datum for the backward problem: u(-t) conj solves the same equation."""
    return u.conj()


# -- blow-up time estimation --------------------------------------------------

@dataclass(frozen=True)
class BlowupEstimate:
    T_est: float
    fit_exponent: float
    fit_residual: float
    reliable: bool
    n_points: int
    note: str = ""


def _fit_power_law(t: np.ndarray, amp: np.ndarray, dim: int) -> tuple[float, float, float, float]:
    """Fit amp = c (T - t)^beta; returns (T, beta, c, rms log residual)."""
    # linear fit of amp^{-2/N} gives the self-similar root as a starting point
    y = amp ** (-2.0 / dim)
    slope, icpt = np.polyfit(t, y, 1)
    t_last = float(t[-1])
    span = float(t[-1] - t[0])
    T0 = -icpt / slope if slope < 0 else t_last + span
    T0 = max(T0, t_last + 1e-6 * max(span, 1e-12))
    la = np.log(amp)

    def resid(theta):
        T, beta, logc = theta
        return logc + beta * np.log(T - t) - la

    beta0 = -dim / 2
    logc0 = float(np.mean(la - beta0 * np.log(T0 - t)))
    lo = [t_last + 1e-12 * max(abs(t_last), 1.0), -50.0, -np.inf]
    sol = least_squares(resid, [T0, beta0, logc0], bounds=(lo, [np.inf, 0.0, np.inf]),
                        x_scale=[max(span, 1e-6), 1.0, 1.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    T, beta, logc = sol.x
    rms = float(np.sqrt(np.mean(sol.fun**2)))
    return float(T), float(beta), float(math.exp(logc)), rms


def estimate_blowup_time(traj_or_times, amplitudes: Sequence[float] | None = None, *,
                         dim: int | None = None, tail: int = 12,
                         truncated: bool | None = None) -> BlowupEstimate:
    """Estimate the blow-up time from the late amplitude history.

    Accepts a ``Trajectory`` or explicit ``(times, amplitudes)`` arrays.  The
    fit is a power law ``c (T - t)^beta`` on the last ``tail`` snapshots,
    started from the root of the linear fit of ``amp^{-2/N}``.
    """
    if isinstance(traj_or_times, Trajectory):
        traj = traj_or_times
        t = np.asarray(traj.times, dtype=float)
        a = np.asarray(traj.amp_series, dtype=float)
        dim = traj.spec.dim
        truncated = traj.truncated if truncated is None else truncated
    else:
        t = np.asarray(traj_or_times, dtype=float)
        a = np.asarray(amplitudes, dtype=float)
        if dim is None:
            raise ValueError("dim is required with explicit arrays")
        truncated = True if truncated is None else truncated
    if tail < 8:
        raise ValueError("the fit needs at least 8 snapshots")
    if t.size < 8:
        return BlowupEstimate(math.inf, 0.0, math.inf, False, int(t.size), "fewer than 8 snapshots")
    t, a = t[-tail:], a[-tail:]
    notes = []
    if not truncated:
        notes.append("trajectory not truncated")
    if np.any(np.diff(a) <= 0):
        notes.append("non-monotone amplitude tail")
    T, beta, _, rms = _fit_power_law(t, a, dim)
    if beta > -0.05:
        notes.append("no growth in the fitted exponent")
    return BlowupEstimate(T, beta, rms, not notes, int(t.size), "; ".join(notes))


# -- Duhamel consistency --------------------------------------------------------

def duhamel_residual(traj: Trajectory, t_a: float, t_b: float) -> float:
    """L2 norm of u(t_b) - T(t_b - t_a) u(t_a) - i gamma int T(t_b - s) N(u(s)) ds.

    Uses the stored snapshots in ``[t_a, t_b]`` as trapezoid nodes; ``t_a``
    and ``t_b`` must be snapshot times.
    """
    times = traj.times
    ia = int(np.argmin(np.abs(times - t_a)))
    ib = int(np.argmin(np.abs(times - t_b)))
    tol = 1e-9 * max(1.0, abs(t_b))
    if abs(times[ia] - t_a) > tol or abs(times[ib] - t_b) > tol:
        raise ValueError("t_a and t_b must be snapshot times")
    if ib - ia + 1 < 4:
        raise ValueError("need at least 4 quadrature nodes")
    spec = traj.spec
    n = spec.dim
    prop = Propagator(spec)
    gamma = traj.config.gamma
    t_end = times[ib]
    data = traj.series.data
    nodes = times[ia:ib + 1]
    w = np.zeros(nodes.size)
    d = np.diff(nodes)
    w[:-1] += d / 2
    w[1:] += d / 2
    acc = np.zeros(spec.shape, dtype=complex)
    for wk, s, v in zip(w, nodes, data[ia:ib + 1]):
        acc += wk * np.fft.fftn(np.abs(v) ** (4 / n) * v) * prop.multiplier(t_end - s)
    pred = prop.apply_hat(np.fft.fftn(data[ia]), t_end - times[ia]) + 1j * gamma * np.fft.ifftn(acc)
    diff = data[ib] - pred
    return float(np.sqrt(np.sum(np.abs(diff) ** 2) * spec.cell_volume()))


# -- pseudoconformal oracle -----------------------------------------------------

def pseudoconformal_field(profile: Callable, spec: GridSpec, T_blow: float, t: float,
                          tail_tol: float = 1e-9, nyquist_tol: float = 1e-10) -> Field:
    """Explicit blow-up solution of the focusing equation (gamma = 1).

    ``S(t,x) = s^{-N/2} exp(i(|x|^2/(4(t-T)) + 1/s)) Q(x/s)`` with ``s = T - t``.
    ``profile`` evaluates Q at coordinate arrays, e.g. a ``GroundState``.
    """
    s = T_blow - t
    if not s > 0:
        raise ValueError("t must precede the blow-up time")
    n = spec.dim
    coords = spec.coords()
    r2 = spec.radius_sq()
    amp = np.asarray(profile(*[c / s for c in coords]), dtype=float)
    vals = s ** (-n / 2) * np.exp(1j * (r2 / (4 * (t - T_blow)) + 1 / s)) * amp
    f = Field(spec, np.broadcast_to(vals, spec.shape))
    # support check: the periodic extension must not see the profile tails
    edge = np.zeros(spec.shape, dtype=bool)
    for c in coords:
        edge = edge | (np.abs(c) > 0.45 * spec.extent)
    peak = np.max(np.abs(f.values))
    if np.max(np.abs(f.values[edge])) > tail_tol * peak:
        raise GridError(f"rescaled profile at s={s:.3g} leaves the box")
    if nyquist_fraction(f) > nyquist_tol:
        raise GridError(f"rescaled profile at s={s:.3g} is under-resolved")
    return f


def pde_residual(profile: Callable, spec: GridSpec, T_blow: float, t: float,
                 dt: float = 1e-4, gamma: float = 1.0) -> float:
    """L2 norm of i S_t + Delta S + gamma |S|^{4/N} S with a central time difference."""
    n = spec.dim
    sp = pseudoconformal_field(profile, spec, T_blow, t + dt)
    sm = pseudoconformal_field(profile, spec, T_blow, t - dt)
    s0 = pseudoconformal_field(profile, spec, T_blow, t)
    st = (sp.values - sm.values) / (2 * dt)
    r = 1j * st + laplacian(s0).values + gamma * np.abs(s0.values) ** (4 / n) * s0.values
    return float(np.sqrt(np.sum(np.abs(r) ** 2) * spec.cell_volume()))


def resolvable_window(spec: GridSpec, profile: Callable, T_blow: float, t_grid: Sequence[float]) -> list[float]:
    """Instants from ``t_grid`` at which the pseudoconformal field is representable."""
    out = []
    for t in t_grid:
        try:
            pseudoconformal_field(profile, spec, T_blow, t)
        except GridError:
            continue
        out.append(float(t))
    return out
