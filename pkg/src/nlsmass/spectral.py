"""Fourier transform with the e^{-2 pi i x.xi} convention and the free propagator.

This module is the single owner of the transform convention.  With it the
free Schroedinger group ``e^{it Laplacian}`` acts in frequency as
multiplication by ``exp(-4 pi^2 i |xi|^2 t)`` and a wave packet with carrier
frequency ``xi0`` travels along ``x = 4 pi t xi0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import FREQUENCY, PHYSICAL, Field, GridError, GridSpec, SpacetimeSeries


def _require(field: Field, domain: str) -> None:
    if field.domain != domain:
        raise GridError(f"expected a {domain} field, got {field.domain}")


def natural_frequency_sq(spec: GridSpec) -> np.ndarray:
    """|xi|^2 on the frequency lattice in FFT (unshifted) order."""
    k = np.fft.fftfreq(spec.points, d=spec.spacing)
    out = np.zeros(spec.shape)
    for m in range(spec.dim):
        shape = [1] * spec.dim
        shape[m] = spec.points
        out = out + k.reshape(shape) ** 2
    return out


def _origin_phase(spec: GridSpec, sign: float) -> np.ndarray | float:
    if spec.origin == 0.0:
        return 1.0
    phase = np.ones(spec.shape, dtype=np.complex128)
    for xi in spec.coords(FREQUENCY):
        phase = phase * np.exp(sign * 2j * np.pi * spec.origin * xi)
    return phase


def forward_transform(field: Field) -> Field:
    """Discrete analogue of ``\\hat u(xi) = int e^{-2 pi i x.xi} u(x) dx``.

    The output is unitary with respect to the frequency cell volume
    ``extent**-dim``.
    """
    _require(field, PHYSICAL)
    spec = field.spec
    hat = np.fft.fftshift(np.fft.fftn(field.values)) * spec.cell_volume(PHYSICAL)
    return Field(spec, hat * _origin_phase(spec, -1.0), FREQUENCY)


def inverse_transform(field_hat: Field) -> Field:
    _require(field_hat, FREQUENCY)
    spec = field_hat.spec
    vals = np.fft.ifftn(np.fft.ifftshift(field_hat.values * _origin_phase(spec, 1.0)))
    return Field(spec, vals / spec.cell_volume(PHYSICAL), PHYSICAL)


class Propagator:
    """Cache of free-evolution multipliers, one per distinct time."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self._xi2 = natural_frequency_sq(spec)
        self._cache: dict[float, np.ndarray] = {}

    def multiplier(self, t: float) -> np.ndarray:
        t = float(t)
        mult = self._cache.get(t)
        if mult is None:
            mult = np.exp(-4j * np.pi**2 * self._xi2 * t)
            self._cache[t] = mult
        return mult

    def apply_hat(self, values_hat: np.ndarray, t: float) -> np.ndarray:
        """Evolve FFT-ordered spectral values and return physical samples."""
        return np.fft.ifftn(values_hat * self.multiplier(t))

    def __call__(self, field: Field, t: float) -> Field:
        _require(field, PHYSICAL)
        if t == 0:
            return field
        return Field(self.spec, self.apply_hat(np.fft.fftn(field.values), t), PHYSICAL)


def free_evolve(field: Field, t: float, propagator: Propagator | None = None) -> Field:
    """Apply ``T(t) = e^{it Laplacian}`` on the periodic grid."""
    prop = propagator if propagator is not None else Propagator(field.spec)
    return prop(field, t)


def evaluate_on_spacetime_grid(field: Field, t_list: Iterable[float],
                               propagator: Propagator | None = None) -> SpacetimeSeries:
    times = np.asarray(list(t_list), dtype=float)
    if times.size == 0:
        raise GridError("t_list is empty")
    if np.any(np.diff(times) <= 0):
        raise GridError("t_list must be strictly increasing")
    _require(field, PHYSICAL)
    prop = propagator if propagator is not None else Propagator(field.spec)
    hat = np.fft.fftn(field.values)
    data = np.empty((times.size,) + field.spec.shape, dtype=np.complex128)
    for i, t in enumerate(times):
        data[i] = field.values if t == 0 else prop.apply_hat(hat, t)
    return SpacetimeSeries(field.spec, times, data)


def free_slice_integrals(field: Field, times: Sequence[float], q: float,
                         propagator: Propagator | None = None) -> np.ndarray:
    """``int |T(t) g|^q dx`` for each t, without storing the evolution."""
    _require(field, PHYSICAL)
    prop = propagator if propagator is not None else Propagator(field.spec)
    hat = np.fft.fftn(field.values)
    vol = field.spec.cell_volume(PHYSICAL)
    out = np.empty(len(times))
    for i, t in enumerate(times):
        out[i] = np.sum(np.abs(prop.apply_hat(hat, t)) ** q) * vol
    return out


def free_spacetime_norm(field: Field, times: Sequence[float], q: float,
                        propagator: Propagator | None = None) -> float:
    """Trapezoid-in-time L^q norm of the free evolution over ``times``."""
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise GridError("need at least two instants")
    integ = free_slice_integrals(field, times, q, propagator)
    return float(np.trapezoid(integ, times) ** (1.0 / q))


def shift(field: Field, offset: Sequence[float]) -> Field:
    """Translate a physical field by ``offset`` (periodic, via a phase ramp)."""
    _require(field, PHYSICAL)
    spec = field.spec
    k = np.fft.fftfreq(spec.points, d=spec.spacing)
    phase = np.ones(spec.shape, dtype=np.complex128)
    for m in range(spec.dim):
        shape = [1] * spec.dim
        shape[m] = spec.points
        phase = phase * np.exp(-2j * np.pi * k.reshape(shape) * offset[m])
    return Field(spec, np.fft.ifftn(np.fft.fftn(field.values) * phase), PHYSICAL)


def laplacian(field: Field) -> Field:
    """Spectral Laplacian of a physical field."""
    _require(field, PHYSICAL)
    xi2 = natural_frequency_sq(field.spec)
    return Field(field.spec, np.fft.ifftn(-4 * np.pi**2 * xi2 * np.fft.fftn(field.values)), PHYSICAL)


def gradient_sq_norm(field: Field) -> float:
    """``||grad f||_2^2`` computed in frequency."""
    _require(field, PHYSICAL)
    spec = field.spec
    hat = np.fft.fftn(field.values) * spec.cell_volume(PHYSICAL)
    xi2 = natural_frequency_sq(spec)
    return float(np.sum(4 * np.pi**2 * xi2 * np.abs(hat) ** 2) / spec.extent**spec.dim)


def nyquist_fraction(field: Field, band: float = 0.1) -> float:
    """Fraction of the L2 mass in the outer ``band`` of the frequency box.

    Used as an under-resolution indicator.
    """
    spec = field.spec
    xi = np.abs(np.fft.fftfreq(spec.points, d=spec.spacing))
    cut = (1 - band) * xi.max()
    hat2 = np.abs(np.fft.fftn(field.values)) ** 2
    outer = np.zeros(spec.shape, dtype=bool)
    for m in range(spec.dim):
        shape = [1] * spec.dim
        shape[m] = spec.points
        outer = outer | (xi.reshape(shape) >= cut)
    total = hat2.sum()
    return float(hat2[outer].sum() / total) if total > 0 else 0.0


@dataclass(frozen=True)
class TimeBox:
    """Uniform time samples on ``[t_min, t_max]`` used for spacetime norms."""

    t_min: float = -8.0
    t_max: float = 8.0
    samples: int = 513

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("a time box needs at least one sample")
        if self.samples > 1 and not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")

    @property
    def times(self) -> np.ndarray:
        if self.samples == 1:
            return np.array([float(self.t_min)])
        return np.linspace(self.t_min, self.t_max, self.samples)

    def scaled(self, factor: float) -> "TimeBox":
        """Box with both endpoints multiplied by ``factor``."""
        return TimeBox(self.t_min * factor, self.t_max * factor, self.samples)


def _axis_eval_matrix(spec: GridSpec, y: np.ndarray) -> np.ndarray:
    """Matrix mapping FFT coefficients of one axis to values at points ``y``."""
    k = np.fft.fftfreq(spec.points, d=spec.spacing)
    mat = np.exp(2j * np.pi * np.outer(y - spec.origin, k)) / spec.points
    if spec.points % 2 == 0:
        # split the Nyquist mode symmetrically so real data stay real
        nyq = spec.points // 2
        mat[:, nyq] = np.cos(np.pi * spec.points * (y - spec.origin) / spec.extent) / spec.points
    return mat


def resample(field: Field, scale: float, offset: Sequence[float]) -> Field:
    """Band-limited evaluation of ``x -> field((x - offset) / scale)`` on the grid.

    Points that fall outside the box see the periodic extension; callers
    check mass bookkeeping to detect that.
    """
    _require(field, PHYSICAL)
    spec = field.spec
    coef = np.fft.fftn(field.values)
    x = spec.axis()
    out = coef
    for m in range(spec.dim):
        mat = _axis_eval_matrix(spec, (x - offset[m]) / scale)
        out = np.moveaxis(np.tensordot(mat, out, axes=([1], [m])), 0, m)
    return Field(spec, out, PHYSICAL)
