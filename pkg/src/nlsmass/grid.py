"""Uniform periodic grids, immutable fields and Lebesgue norms on them.

A grid discretizes a box of side ``extent`` in each of ``dim`` directions
with ``points`` samples per axis.  Fields carry a domain tag: physical
fields live on the sample points ``origin + n * spacing`` while frequency
fields live on the dual lattice ``(k - points/2) / extent`` stored in
centered order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

PHYSICAL = "physical"
FREQUENCY = "frequency"

SNAPSHOT_MAGIC = b"NLSFIELD"
SNAPSHOT_VERSION = 1
_FLAG_FREQUENCY = 1
_FLAG_ZERO_ORIGIN = 2


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched fields."""


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    dim: int
    extent: float
    points: int
    origin: float | None = None

    def __post_init__(self):
        if not 1 <= self.dim <= 3:
            raise GridError(f"dim must be in 1..3, got {self.dim}")
        if not _is_power_of_two(int(self.points)) or int(self.points) != self.points:
            raise GridError(f"points must be a power of two, got {self.points}")
        if not self.extent > 0:
            raise GridError(f"extent must be positive, got {self.extent}")
        if self.origin is None:
            object.__setattr__(self, "origin", -0.5 * float(self.extent))
        object.__setattr__(self, "extent", float(self.extent))
        object.__setattr__(self, "origin", float(self.origin))

    @property
    def spacing(self) -> float:
        return self.extent / self.points

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dim

    @property
    def size(self) -> int:
        return self.points**self.dim

    @property
    def centered(self) -> bool:
        return self.origin == -0.5 * self.extent

    def spacing_of(self, domain: str) -> float:
        return self.spacing if domain == PHYSICAL else 1.0 / self.extent

    def origin_of(self, domain: str) -> float:
        if domain == PHYSICAL:
            return self.origin
        return -0.5 * self.points / self.extent

    def cell_volume(self, domain: str = PHYSICAL) -> float:
        return self.spacing_of(domain) ** self.dim

    def axis(self, domain: str = PHYSICAL) -> np.ndarray:
        return self.origin_of(domain) + self.spacing_of(domain) * np.arange(self.points)

    def coords(self, domain: str = PHYSICAL) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis (``ij`` indexing)."""
        ax = self.axis(domain)
        out = []
        for m in range(self.dim):
            shape = [1] * self.dim
            shape[m] = self.points
            out.append(ax.reshape(shape))
        return out

    def radius_sq(self, domain: str = PHYSICAL, center: Sequence[float] | None = None) -> np.ndarray:
        c = np.zeros(self.dim) if center is None else np.asarray(center, dtype=float)
        r2 = np.zeros(self.shape)
        for m, x in enumerate(self.coords(domain)):
            r2 = r2 + (x - c[m]) ** 2
        return r2

    def box_volume(self, domain: str = PHYSICAL) -> float:
        return (self.spacing_of(domain) * self.points) ** self.dim


def make_grid(dim: int, extent: float, points: int, origin: float | None = None) -> GridSpec:
    """Build a grid; ``origin`` defaults to a box centered at zero."""
    if int(points) < 8:
        raise GridError(f"points must be at least 8, got {points}")
    return GridSpec(dim=int(dim), extent=float(extent), points=int(points), origin=origin)


@dataclass(frozen=True, eq=False)
class Field:
    spec: GridSpec
    values: np.ndarray
    domain: str = PHYSICAL

    def __post_init__(self):
        if self.domain not in (PHYSICAL, FREQUENCY):
            raise GridError(f"unknown domain tag {self.domain!r}")
        vals = np.array(self.values, dtype=np.complex128)
        if vals.size != self.spec.size:
            raise GridError(f"expected {self.spec.size} values, got {vals.size}")
        vals = vals.reshape(self.spec.shape)
        if not np.all(np.isfinite(vals)):
            raise GridError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, spec: GridSpec, func, domain: str = PHYSICAL) -> "Field":
        """Sample ``func(*coords)`` on the grid."""
        vals = np.broadcast_to(func(*spec.coords(domain)), spec.shape)
        return cls(spec, vals, domain)

    @classmethod
    def zeros(cls, spec: GridSpec, domain: str = PHYSICAL) -> "Field":
        return cls(spec, np.zeros(spec.shape), domain)

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.spec, values, self.domain)

    def __mul__(self, other) -> "Field":
        return self.with_values(self.values * other)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def conj(self) -> "Field":
        return self.with_values(np.conj(self.values))

    @property
    def cell_volume(self) -> float:
        return self.spec.cell_volume(self.domain)

    def mass(self) -> float:
        """Squared L2 norm."""
        return float(np.sum(np.abs(self.values) ** 2) * self.cell_volume)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


def _check_compatible(a: Field, b: Field) -> None:
    if a.spec != b.spec or a.domain != b.domain:
        raise GridError("fields live on different grids or domains")


@dataclass(frozen=True, eq=False)
class SpacetimeSeries:
    """Fields sampled at strictly increasing instants on one grid.

    ``data`` has shape ``(len(times),) + spec.shape``.
    """

    spec: GridSpec
    times: np.ndarray
    data: np.ndarray
    domain: str = dc_field(default=PHYSICAL)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise GridError("a series needs at least one instant")
        if np.any(np.diff(times) <= 0):
            raise GridError("times must be strictly increasing")
        data = np.asarray(self.data, dtype=np.complex128).reshape((times.size,) + self.spec.shape)
        times.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_fields(cls, times: Iterable[float], fields: Sequence[Field]) -> "SpacetimeSeries":
        fields = list(fields)
        if not fields:
            raise GridError("a series needs at least one field")
        spec = fields[0].spec
        for f in fields:
            if f.spec != spec or f.domain != fields[0].domain:
                raise GridError("all fields in a series must share one grid")
        return cls(spec, np.asarray(list(times), dtype=float), np.stack([f.values for f in fields]),
                   fields[0].domain)

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, i: int) -> Field:
        return Field(self.spec, self.data[i], self.domain)

    @property
    def fields(self) -> list[Field]:
        return [self[i] for i in range(len(self))]

    def window(self, t_lo: float, t_hi: float) -> "SpacetimeSeries":
        """Sub-series of instants inside the closed interval ``[t_lo, t_hi]``."""
        sel = (self.times >= t_lo) & (self.times <= t_hi)
        return SpacetimeSeries(self.spec, self.times[sel], self.data[sel], self.domain)


def lp_norm(field: Field, p: float) -> float:
    """Riemann-sum L^p norm; ``p = inf`` gives the sample maximum."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(field.values)
    if np.isinf(p):
        return float(a.max())
    return float((np.sum(a**p) * field.cell_volume) ** (1.0 / p))


def slice_lq_integrals(series: SpacetimeSeries, q: float) -> np.ndarray:
    """Per-instant spatial integrals of ``|u|^q``."""
    axes = tuple(range(1, series.data.ndim))
    return np.sum(np.abs(series.data) ** q, axis=axes) * series.spec.cell_volume(series.domain)


def spacetime_lq_norm(series: SpacetimeSeries, q: float) -> float:
    """L^q norm over (first instant, last instant) x box.

    Trapezoid rule in time, Riemann sum in space.
    """
    if len(series) < 2:
        raise GridError("spacetime norm needs at least two instants")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    integ = slice_lq_integrals(series, q)
    return float(np.trapezoid(integ, series.times) ** (1.0 / q))


# -- binary snapshots ---------------------------------------------------------

def write_snapshot(stream: BinaryIO, field: Field) -> None:
    """Write a field in the little-endian binary snapshot format.

    Header: 8-byte magic, u32 version, u32 flags, then u32 dim, u32 points,
    f64 extent, followed by interleaved (re, im) f64 pairs in row-major order.
    """
    spec = field.spec
    flags = 0
    if field.domain == FREQUENCY:
        flags |= _FLAG_FREQUENCY
    if spec.origin == 0.0:
        flags |= _FLAG_ZERO_ORIGIN
    elif not spec.centered:
        raise GridError("snapshots support centered or zero-origin grids only")
    stream.write(SNAPSHOT_MAGIC + struct.pack("<II", SNAPSHOT_VERSION, flags))
    stream.write(struct.pack("<IId", spec.dim, spec.points, spec.extent))
    stream.write(np.ascontiguousarray(field.values).astype("<c16").tobytes())


def read_snapshot(stream: BinaryIO) -> Field:
    head = stream.read(16)
    if len(head) != 16 or head[:8] != SNAPSHOT_MAGIC:
        raise GridError("not a field snapshot")
    version, flags = struct.unpack("<II", head[8:])
    if version != SNAPSHOT_VERSION:
        raise GridError(f"unsupported snapshot version {version}")
    dim, points, extent = struct.unpack("<IId", stream.read(16))
    spec = GridSpec(dim, extent, points, 0.0 if flags & _FLAG_ZERO_ORIGIN else None)
    raw = stream.read(16 * spec.size)
    if len(raw) != 16 * spec.size:
        raise GridError("truncated snapshot")
    vals = np.frombuffer(raw, dtype="<c16").reshape(spec.shape)
    return Field(spec, vals, FREQUENCY if flags & _FLAG_FREQUENCY else PHYSICAL)


def save_snapshot(path, field: Field) -> None:
    with open(path, "wb") as fh:
        write_snapshot(fh, field)


def load_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        return read_snapshot(fh)


def edge_amplitude(field: Field, frac: float = 0.45) -> float:
    """Largest modulus in the layer ``|x_m| > frac * extent`` relative to the peak.

    Meaningful for centered grids; a small value means the periodic
    extension does not see the field.
    """
    a = np.abs(field.values)
    peak = a.max()
    if peak == 0:
        return 0.0
    spec = field.spec
    center = spec.origin + 0.5 * spec.extent
    edge = np.zeros(spec.shape, dtype=bool)
    for x in spec.coords(field.domain):
        edge = edge | (np.abs(x - center) > frac * spec.extent)
    return float(a[edge].max() / peak) if edge.any() else 0.0
