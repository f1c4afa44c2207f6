"""Measurements: exponents, Strichartz functionals, concentration scans, profiles.

Everything here consumes fields and trajectories produced elsewhere and
returns plain numbers or small report records.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .dyadic import DyadicCube, xpq_sup_term
from .grid import PHYSICAL, Field, GridError, GridSpec, SpacetimeSeries, edge_amplitude, slice_lq_integrals
from .spectral import (Propagator, TimeBox, forward_transform, free_evolve, free_spacetime_norm,
                       inverse_transform, nyquist_fraction, resample)

log = logging.getLogger(__name__)


# -- exponents -----------------------------------------------------------------

@dataclass(frozen=True)
class ExponentSet:
    dim: int
    q: Fraction
    p_min: Fraction
    p_default: Fraction
    beta: Fraction
    mu: Fraction

    @property
    def p(self) -> float:
        return float(self.p_default)

    def with_p(self, p: Fraction | float) -> "ExponentSet":
        """Same dimension with an explicit admissible ``p``."""
        p = Fraction(p).limit_denominator(10**9)
        if not self.p_min < p < 2:
            raise ValueError(f"p={p} outside the admissible range ({self.p_min}, 2)")
        beta, mu = _beta_mu(self.q, p)
        return ExponentSet(self.dim, self.q, self.p_min, p, beta, mu)


def _beta_mu(q: Fraction, p: Fraction) -> tuple[Fraction, Fraction]:
    beta = (max(2 / q, p / 2) + 1) / 2
    return beta, (1 - beta) / p


def admissible_exponents(dim: int) -> ExponentSet:
    """Exact exponent bookkeeping for the refined Strichartz estimate."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if dim > 4:
        raise ValueError("exponent arithmetic is supported up to dim 4")
    n = Fraction(dim)
    q = 2 * (n + 2) / n
    # 1 - 1/p = (N+3)/(N+1) * 1/q
    p_min = 1 / (1 - (n + 3) / ((n + 1) * q))
    p_default = (p_min + 2) / 2
    beta, mu = _beta_mu(q, p_default)
    return ExponentSet(dim, q, p_min, p_default, beta, mu)


# -- Strichartz functionals -----------------------------------------------------

def strichartz_ratio(g: Field, box: TimeBox, propagator: Propagator | None = None) -> float:
    """Spacetime L^q norm of the free evolution over ``box`` divided by ||g||_2."""
    m = g.mass()
    if m == 0:
        raise ValueError("zero input")
    q = float(admissible_exponents(g.spec.dim).q)
    return free_spacetime_norm(g, box.times, q, propagator) / math.sqrt(m)


@dataclass(frozen=True)
class RefinedRatio:
    lhs: float
    sup_term: float
    sup_factor: float   # sup_term ** mu
    mass_factor: float  # ||g||_2 ** (1 - mu p)
    cube: DyadicCube

    @property
    def product(self) -> float:
        return self.sup_factor * self.mass_factor

    @property
    def ratio(self) -> float:
        return self.lhs / self.product


def refined_ratio(g: Field, box: TimeBox, exponents: ExponentSet | None = None,
                  j_range: tuple[int, int] | None = None,
                  propagator: Propagator | None = None) -> RefinedRatio:
    """Left side of the refined estimate and the two factors of its bound."""
    m = g.mass()
    if m == 0:
        raise ValueError("zero input")
    ex = exponents if exponents is not None else admissible_exponents(g.spec.dim)
    p, mu = float(ex.p_default), float(ex.mu)
    lhs = free_spacetime_norm(g, box.times, float(ex.q), propagator)
    sup, cube = xpq_sup_term(forward_transform(g), p, j_range)
    norm = math.sqrt(m)
    return RefinedRatio(lhs, sup, sup**mu, norm ** (1 - mu * p), cube)


def random_localized_input(spec: GridSpec, rng: np.random.Generator, *,
                           xi_range: float = 1.0, width_range: tuple[float, float] = (0.25, 1.0),
                           shift_range: float = 2.0, max_bumps: int = 3) -> Field:
    """Sum of a few Gaussian spectral bumps with random phases and positions."""
    n = spec.dim
    xi = spec.coords("frequency")
    hat = np.zeros(spec.shape, dtype=complex)
    for _ in range(int(rng.integers(1, max_bumps + 1))):
        c = rng.uniform(-xi_range, xi_range, n)
        w = rng.uniform(*width_range)
        x0 = rng.uniform(-shift_range, shift_range, n)
        amp = rng.uniform(0.5, 1.5) * np.exp(2j * np.pi * rng.uniform())
        bump = np.ones(spec.shape, dtype=complex) * amp
        for m in range(n):
            bump = bump * np.exp(-0.5 * ((xi[m] - c[m]) / w) ** 2 - 2j * np.pi * x0[m] * xi[m])
        hat += bump
    return inverse_transform(Field(spec, hat, "frequency"))


def smooth_cube_bump(spec: GridSpec, corner: Sequence[float], side: float = 1.0,
                     position: Sequence[float] | None = None) -> Field:
    """Physical field whose spectrum is a smooth compactly supported bump in a cube.

    The spectral bump is ``prod_m sin^4(pi (xi_m - corner_m) / side)`` inside the
    cube; ``position`` translates the packet in space.
    """
    n = spec.dim
    xi = spec.coords("frequency")
    pos = np.zeros(n) if position is None else np.asarray(position, dtype=float)
    hat = np.ones(spec.shape, dtype=complex)
    for m in range(n):
        u = (xi[m] - corner[m]) / side
        inside = (u >= 0) & (u < 1)
        hat = hat * np.where(inside, np.sin(np.pi * u) ** 4, 0.0) * np.exp(-2j * np.pi * pos[m] * xi[m])
    return inverse_transform(Field(spec, hat, "frequency"))


def separated_cube_family(spec: GridSpec, m: int, *, spacing: float = 4.0,
                          offset: float = 0.5, spread: float = 0.0) -> Field:
    """Unit-mass datum split evenly over ``2**m`` unit frequency cubes.

    Cube ``i`` sits at frequency ``offset + i * spacing`` along the first axis.
    With ``spread`` nonzero packet ``i`` is also placed at ``i * spread`` in
    space so that the packets never focus together.
    """
    k = 2**m
    start = -(k - 1) / 2
    parts = []
    for i in range(k):
        corner = [offset + (start + i) * spacing] + [-0.5] * (spec.dim - 1)
        pos = [(start + i) * spread] + [0.0] * (spec.dim - 1)
        parts.append(smooth_cube_bump(spec, corner, 1.0, pos))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total * (1.0 / math.sqrt(total.mass()))


@dataclass(frozen=True)
class Calibration:
    dim: int
    p: float
    c_emp: float
    ratios: tuple[float, ...]
    seed: int


_CALIBRATIONS: dict[tuple, Calibration] = {}


def calibrate_refined_constant(spec: GridSpec, box: TimeBox, *, samples: int = 32, seed: int = 0,
                               exponents: ExponentSet | None = None,
                               generator: Callable | None = None, margin: float = 1.0,
                               **gen_kwargs) -> Calibration:
    """Largest refined ratio over a seeded randomized family, times ``margin``.

    Results are cached per grid, exponent, box, sample count and seed.
    """
    if samples < 1:
        raise ValueError("calibration needs at least one sample")
    ex = exponents if exponents is not None else admissible_exponents(spec.dim)
    gen = generator if generator is not None else random_localized_input
    key = (spec, ex.p_default, box, samples, seed, margin, gen, tuple(sorted(gen_kwargs.items())))
    if key in _CALIBRATIONS:
        return _CALIBRATIONS[key]
    rng = np.random.default_rng(seed)
    prop = Propagator(spec)
    ratios = []
    for _ in range(samples):
        g = gen(spec, rng, **gen_kwargs)
        ratios.append(refined_ratio(g, box, ex, propagator=prop).ratio)
    cal = Calibration(spec.dim, ex.p, margin * max(ratios), tuple(ratios), seed)
    log.info("calibrated refined constant N=%d p=%.4f: %.4f over %d samples",
             spec.dim, ex.p, cal.c_emp, samples)
    _CALIBRATIONS[key] = cal
    return cal


# -- concentration ------------------------------------------------------------

@dataclass(frozen=True)
class ConcentrationReport:
    t: float
    radius: float
    center: tuple[float, ...]
    mass_in_ball: float
    total_mass: float
    rule: str

    @property
    def fraction(self) -> float:
        return self.mass_in_ball / self.total_mass if self.total_mass > 0 else 0.0


def ball_kernel(spec: GridSpec, radius: float) -> np.ndarray:
    """Indicator of the periodic ball ``|x| < radius`` in FFT index order."""
    d = np.fft.fftfreq(spec.points) * spec.extent
    r2 = np.zeros(spec.shape)
    for m in range(spec.dim):
        shape = [1] * spec.dim
        shape[m] = spec.points
        r2 = r2 + d.reshape(shape) ** 2
    return (r2 < radius**2).astype(float)


def concentration_scan(field: Field, radius: float, t: float = 0.0, rule: str = "fixed-radius") -> ConcentrationReport:
    """Maximal mass in a ball of the given radius centered at a grid point.

    Ties (within 1e-12 relative) go to the lexicographically smallest index.
    """
    if field.domain != PHYSICAL:
        raise GridError("concentration scans need a physical field")
    spec = field.spec
    if radius < spec.spacing:
        raise ValueError(f"radius {radius} is below one grid cell {spec.spacing}")
    dens = np.abs(field.values) ** 2
    total = float(np.sum(dens) * spec.cell_volume())
    kern = ball_kernel(spec, radius)
    conv = np.real(np.fft.ifftn(np.fft.fftn(dens) * np.fft.fftn(kern))) * spec.cell_volume()
    best = conv.max()
    idx = int(np.flatnonzero(conv.ravel() >= best - 1e-12 * max(abs(best), 1e-300))[0])
    loc = np.unravel_index(idx, spec.shape)
    axis = spec.axis()
    center = tuple(float(axis[i]) for i in loc)
    mass = min(max(float(best), 0.0), total)
    return ConcentrationReport(float(t), float(radius), center, mass, total, rule)


LambdaRule = Union[str, Callable[[float], float]]


def radius_rule(rule: LambdaRule) -> tuple[Callable[[float], float], str]:
    """Map a rule name (or a callable lambda(s)) to ``s -> R`` with ``s = T - t``."""
    if callable(rule):
        return (lambda s: rule(s) * math.sqrt(s)), "lambda(t)*sqrt(T-t)"
    if rule == "fixed":
        return (lambda s: math.sqrt(s)), "sqrt(T-t)"
    if rule == "log":
        return (lambda s: abs(math.log(s)) * math.sqrt(s)), "lambda(t)*sqrt(T-t)"
    if rule == "quarter":
        return (lambda s: s**0.25), "lambda(t)*sqrt(T-t)"
    raise ValueError(f"unknown radius rule {rule!r}")


def _as_series(source) -> SpacetimeSeries:
    if isinstance(source, SpacetimeSeries):
        return source
    series = getattr(source, "series", None)
    if isinstance(series, SpacetimeSeries):
        return series
    raise TypeError("expected a SpacetimeSeries or a trajectory")


def concentration_series(source, T_est: float, rule: LambdaRule = "fixed",
                         workers: int = 1) -> list[ConcentrationReport]:
    """Scan every snapshot with ``R = rule(T_est - t)``.

    Snapshots whose radius falls below one grid cell are skipped.
    """
    series = _as_series(source)
    if not T_est > series.times[-1]:
        raise ValueError("T_est must exceed the last snapshot time")
    rad, tag = radius_rule(rule)
    jobs = []
    for i, t in enumerate(series.times):
        r = rad(T_est - t)
        if r < series.spec.spacing:
            log.debug("radius %.3g below a cell at t=%.6g; skipped", r, t)
            continue
        jobs.append((i, float(t), r))

    def run(job):
        i, t, r = job
        return concentration_scan(series[i], r, t, tag)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, jobs))
    return [run(j) for j in jobs]


def windowed_norm(series: SpacetimeSeries, T0: float, T1: float, q: float) -> float:
    """Trapezoid L^q norm over the snapshots inside ``[T0, T1]``."""
    sub = series.window(T0, T1)
    if len(sub) < 2:
        return 0.0
    return float(np.trapezoid(slice_lq_integrals(sub, q), sub.times) ** (1 / q))


def window_concentration(source, T0: float, T1: float) -> tuple[float, ConcentrationReport, float]:
    """Best snapshot in ``(T0, T1)`` at radius ``min(T1 - t, t - T0)^{1/2}``.

    Returns ``(t0, report, eta)`` where ``eta`` is the windowed spacetime norm.
    """
    series = _as_series(source)
    times = series.times
    inside = np.flatnonzero((times > T0) & (times < T1))
    if times.size > 1:
        stride = float(np.median(np.diff(times)))
        if T1 - T0 < 2 * stride:
            raise ValueError("window shorter than two snapshot strides")
    if inside.size == 0:
        raise ValueError("no snapshot inside the window")
    q = 2 * (series.spec.dim + 2) / series.spec.dim
    eta = windowed_norm(series, T0, T1, q)
    best = None
    for i in inside:
        t = float(times[i])
        r = math.sqrt(min(T1 - t, t - T0))
        if r < series.spec.spacing:
            continue
        rep = concentration_scan(series[i], r, t, "window")
        if best is None or rep.mass_in_ball > best.mass_in_ball:
            best = rep
    if best is None:
        raise ValueError("every window radius is below one grid cell")
    return best.t, best, eta


def partition_by_spacetime_norm(source, eta0: float) -> list[float]:
    """Greedy slab boundaries ``T_1 < T_2 < ...`` with slab norms equal to ``eta0``.

    The integrand is the trapezoid interpolation of the per-snapshot
    integrals; the last slab is partial.  Returns all boundaries including
    the first and last snapshot times.
    """
    if not eta0 > 0:
        raise ValueError("eta0 must be positive")
    series = _as_series(source)
    q = 2 * (series.spec.dim + 2) / series.spec.dim
    f = slice_lq_integrals(series, q)
    t = series.times
    target = eta0**q
    cuts = [float(t[0])]
    acc = 0.0
    for i in range(len(t) - 1):
        t0, t1, f0, f1 = t[i], t[i + 1], f[i], f[i + 1]
        a = t0
        fa = f0
        while True:
            seg = 0.5 * (t1 - a) * (fa + f1)
            if acc + seg < target:
                acc += seg
                break
            # solve int_a^b linear(f) = target - acc for b
            need = target - acc
            slope = (f1 - f0) / (t1 - t0)
            if abs(slope) < 1e-300:
                dx = need / fa
            else:
                disc = fa * fa + 2 * slope * need
                dx = (-fa + math.sqrt(max(disc, 0.0))) / slope
            b = a + dx
            cuts.append(float(b))
            acc = 0.0
            a = b
            fa = f0 + slope * (b - t0)
    if cuts[-1] < t[-1] - 1e-12 * max(1.0, abs(t[-1])):
        cuts.append(float(t[-1]))
    return cuts


# -- profiles ----------------------------------------------------------------

@dataclass(frozen=True)
class ProfileParams:
    rho: float = 1.0
    t0: float = 0.0
    xi: tuple[float, ...] = (0.0,)
    x0: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(v) for v in np.atleast_1d(self.xi)))
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        vals = (self.rho, self.t0, *self.xi, *self.x0)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("profile parameters must be finite")
        if len(self.xi) != len(self.x0):
            raise ValueError("xi and x0 must have the same dimension")


def orthogonality_score(a: ProfileParams, b: ProfileParams) -> float:
    """rho_a/rho_b + rho_b/rho_a + |t_a - t_b|/rho_a^2 + |(x_a - x_b + t_a xi_a - t_b xi_b)/rho_a|."""
    if len(a.xi) != len(b.xi):
        raise ValueError("parameter dimensions differ")
    vec = [((xa - xb) + (a.t0 * pa - b.t0 * pb)) / a.rho
           for xa, xb, pa, pb in zip(a.x0, b.x0, a.xi, b.xi)]
    return (a.rho / b.rho + b.rho / a.rho + abs(a.t0 - b.t0) / a.rho**2
            + math.sqrt(math.fsum(v * v for v in vec)))


def _dilated(phi, spec: GridSpec, params: ProfileParams, edge_tol: float) -> Field:
    n = spec.dim
    if len(params.x0) != n:
        raise ValueError("profile parameters do not match the grid dimension")
    if isinstance(phi, Field):
        if phi.spec != spec:
            raise GridError("profile field lives on a different grid")
        if params.rho == 1.0 and not any(params.x0):
            return phi
        out = resample(phi, params.rho, params.x0) * params.rho ** (-n / 2)
        ref = phi.mass()
        if abs(out.mass() - ref) > 1e-8 * ref:
            raise GridError("rescaled profile does not fit in the box")
        return out
    coords = spec.coords()
    vals = phi(*[(c - x) / params.rho for c, x in zip(coords, params.x0)])
    out = Field(spec, np.broadcast_to(np.asarray(vals) * params.rho ** (-n / 2), spec.shape))
    if edge_amplitude(out) > edge_tol:
        raise GridError("rescaled profile does not fit in the box")
    if nyquist_fraction(out) > 1e-8:
        raise GridError("rescaled profile is under-resolved")
    return out


def profile_datum(phi, spec: GridSpec, params: ProfileParams, edge_tol: float = 1e-8) -> Field:
    """``e^{i x.xi/2} T(-t0) [rho^{-N/2} phi((x - x0)/rho)]`` on the grid."""
    base = free_evolve(_dilated(phi, spec, params, edge_tol), -params.t0)
    phase = np.ones(spec.shape, dtype=complex)
    for c, k in zip(spec.coords(), params.xi):
        phase = phase * np.exp(0.5j * c * k)
    return base * phase


def apply_profile(phi, spec: GridSpec, params: ProfileParams, t: float = 0.0,
                  edge_tol: float = 1e-8) -> Field:
    """The profile operator applied to ``phi`` at time ``t``.

    ``phi`` is either a callable of the coordinate arrays or a Field on ``spec``.
    """
    return free_evolve(profile_datum(phi, spec, params, edge_tol), t)


def pythagorean_defect(phis: Sequence, spec: GridSpec, params: Sequence[ProfileParams]) -> float:
    """|| sum_j H^j(phi^j)(0) ||^2 - sum_j ||phi^j||^2 (the cross terms)."""
    if len(phis) != len(params):
        raise ValueError("one parameter set per profile is required")
    fields = [apply_profile(phi, spec, p) for phi, p in zip(phis, params)]
    total = fields[0]
    for f in fields[1:]:
        total = total + f
    return total.mass() - math.fsum(f.mass() for f in fields)


def _product_norm(v1: Field, v2: Field, box: TimeBox, r: float, prop: Propagator) -> float:
    vol = v1.spec.cell_volume()
    h1, h2 = np.fft.fftn(v1.values), np.fft.fftn(v2.values)
    times = box.times
    ints = np.empty(times.size)
    for i, t in enumerate(times):
        ints[i] = np.sum(np.abs(prop.apply_hat(h1, t) * prop.apply_hat(h2, t)) ** r) * vol
    if times.size == 1:
        return float(ints[0] ** (1 / r))
    return float(np.trapezoid(ints, times) ** (1 / r))


def product_norm_decay(phi1, phi2, family1: Sequence[ProfileParams], family2: Sequence[ProfileParams],
                       spec: GridSpec, box: TimeBox, workers: int = 1) -> list[float]:
    """Mixed products ``||H^1_n(phi1) H^2_n(phi2)||`` in L^{(N+2)/N} over ``box``, per n."""
    if len(family1) != len(family2):
        raise ValueError("families must have equal length")
    n = spec.dim
    r = (n + 2) / n
    prop = Propagator(spec)

    def one(pair):
        a, b = pair
        return _product_norm(profile_datum(phi1, spec, a), profile_datum(phi2, spec, b), box, r, prop)

    pairs = list(zip(family1, family2))
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, pairs))
    return [one(p) for p in pairs]


# -- reports -----------------------------------------------------------------

def write_reports_csv(path, reports: Iterable[ConcentrationReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "radius", "center", "mass_in_ball", "total_mass", "fraction", "rule"])
        for rep in reports:
            w.writerow([repr(rep.t), repr(rep.radius), " ".join(repr(c) for c in rep.center),
                        repr(rep.mass_in_ball), repr(rep.total_mass), repr(rep.fraction), rep.rule])


def _jsonable(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
