"""Dyadic cubes, X_{p,q} norms, the dyadic sup functional and Whitney pairs.

Cube combinatorics are done in integer arithmetic.  Integrals over cubes use
the grid's Riemann sum, so a cube is required to be a union of grid cells:
its side must be an integer multiple of the grid spacing and the grid origin
must sit on a multiple of the spacing.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .grid import Field, GridError, GridSpec


@dataclass(frozen=True, order=True)
class DyadicCube:
    """The half-open cube ``prod_m [k_m 2^-j, (k_m + 1) 2^-j)``."""

    scale: int
    corner: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "corner", tuple(int(k) for k in self.corner))

    @property
    def dim(self) -> int:
        return len(self.corner)

    @property
    def side(self) -> float:
        return math.ldexp(1.0, -self.scale)

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.corner, dtype=float) * self.side

    @property
    def upper(self) -> np.ndarray:
        return (np.array(self.corner, dtype=float) + 1) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.corner, dtype=float) + 0.5) * self.side

    def parent(self) -> "DyadicCube":
        return DyadicCube(self.scale - 1, tuple(k >> 1 for k in self.corner))

    def children(self) -> list["DyadicCube"]:
        return [DyadicCube(self.scale + 1, tuple(2 * k + e for k, e in zip(self.corner, bits)))
                for bits in itertools.product((0, 1), repeat=self.dim)]

    def descendants(self, levels: int) -> list["DyadicCube"]:
        n = 1 << levels
        return [DyadicCube(self.scale + levels, tuple(n * k + e for k, e in zip(self.corner, offs)))
                for offs in itertools.product(range(n), repeat=self.dim)]

    def adjacent(self, other: "DyadicCube") -> bool:
        """True when the closures touch (equal cubes count as adjacent)."""
        if other.scale != self.scale:
            raise ValueError("adjacency is defined for cubes of one scale")
        return max(abs(a - b) for a, b in zip(self.corner, other.corner)) <= 1

    def contains(self, points: np.ndarray) -> np.ndarray:
        # integer comparison at the cube's own scale avoids rounding of the bounds
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor(np.ldexp(pts, self.scale))
        return np.all(idx == np.array(self.corner, dtype=float), axis=-1)


def cube_of(point: Sequence[float], scale: int) -> DyadicCube:
    return DyadicCube(scale, tuple(math.floor(math.ldexp(float(x), scale)) for x in point))


def cube_distance(a: DyadicCube, b: DyadicCube) -> float:
    """Euclidean distance between the closures of two cubes."""
    gap = np.maximum(0.0, np.maximum(a.lower - b.upper, b.lower - a.upper))
    return float(np.sqrt(np.sum(gap**2)))


@dataclass(frozen=True)
class CubePair:
    left: DyadicCube
    right: DyadicCube

    def __post_init__(self):
        if self.left.scale != self.right.scale:
            raise ValueError("paired cubes must share a scale")

    @property
    def scale(self) -> int:
        return self.left.scale

    def related(self) -> bool:
        """Not adjacent, with adjacent parents."""
        return (not self.left.adjacent(self.right)
                and self.left.parent().adjacent(self.right.parent()))

    def separation(self) -> float:
        return cube_distance(self.left, self.right)

    def swapped(self) -> "CubePair":
        return CubePair(self.right, self.left)


@dataclass(frozen=True)
class XpqParams:
    p: float
    q: float
    j_min: int
    j_max: int

    def __post_init__(self):
        if not 1 < self.p < 2:
            raise ValueError(f"p must lie in (1, 2), got {self.p}")
        if not self.q > 2:
            raise ValueError(f"q must exceed 2, got {self.q}")
        if self.j_min > self.j_max:
            raise ValueError("empty scale window")


# -- per-scale cube integrals -------------------------------------------------

def _cells_per_side(field: Field, scale: int) -> int:
    h = field.spec.spacing_of(field.domain)
    ratio = math.ldexp(1.0, -scale) / h
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise GridError(f"scale {scale} is not aligned with grid spacing {h}")
    return int(n)


def _origin_cells(field: Field) -> int:
    spec = field.spec
    h = spec.spacing_of(field.domain)
    o = spec.origin_of(field.domain) / h
    if abs(o - round(o)) > 1e-9 * max(1.0, abs(o)):
        raise GridError("grid origin is not a multiple of the spacing")
    return int(round(o))


def default_j_range(field: Field) -> tuple[int, int]:
    """Scales from cubes covering the whole box down to 4 grid cells."""
    spec = field.spec
    h = spec.spacing_of(field.domain)
    j_min = -math.ceil(math.log2(h * spec.points) - 1e-12)
    j_max = math.floor(-math.log2(4 * h) + 1e-12)
    return j_min, j_max


def axis_cube_index(field: Field, scale: int) -> np.ndarray:
    """Integer cube index of every grid sample along one axis."""
    s = _cells_per_side(field, scale)
    n = np.arange(field.spec.points, dtype=np.int64) + _origin_cells(field)
    return np.floor_divide(n, s)


def scale_integrals(field: Field, scale: int, p: float) -> tuple[np.ndarray, np.ndarray]:
    """``int_tau |f|^p`` for every cube of one scale that meets the box.

    Returns ``(corners, integrals)`` with ``corners`` of shape ``(K, dim)``
    in lexicographic order.
    """
    spec = field.spec
    idx = axis_cube_index(field, scale)
    lo, hi = int(idx[0]), int(idx[-1])
    nk = hi - lo + 1
    local = idx - lo
    label = np.zeros(spec.shape, dtype=np.int64)
    for m in range(spec.dim):
        shape = [1] * spec.dim
        shape[m] = spec.points
        label = label * nk + local.reshape(shape)
    weights = (np.abs(field.values) ** p).ravel() * field.cell_volume
    sums = np.bincount(label.ravel(), weights=weights, minlength=nk**spec.dim)
    grids = np.meshgrid(*[np.arange(lo, hi + 1)] * spec.dim, indexing="ij")
    corners = np.stack([g.ravel() for g in grids], axis=1)
    return corners, sums


def cube_restrict(field: Field, cube: DyadicCube) -> Field:
    """Zero every sample outside ``cube``."""
    spec = field.spec
    if cube.dim != spec.dim:
        raise ValueError("cube and field dimensions differ")
    mask = np.ones(spec.shape, dtype=bool)
    for m, x in enumerate(spec.coords(field.domain)):
        mask = mask & (x >= cube.lower[m]) & (x < cube.upper[m])
    if not mask.any():
        warnings.warn(f"{cube} does not meet the grid box", stacklevel=2)
    return field.with_values(np.where(mask, field.values, 0))


def _scales(field: Field, j_range: tuple[int, int] | None) -> range:
    j_min, j_max = j_range if j_range is not None else default_j_range(field)
    if j_min > j_max:
        raise ValueError("empty scale window")
    return range(j_min, j_max + 1)


def xpq_terms(field: Field, params: XpqParams) -> dict[int, float]:
    """Per-scale contributions ``2^{j N (2-p) q / (2p)} sum_k ||f_k^j||_p^q``."""
    p, q, n = params.p, params.q, field.spec.dim
    out = {}
    for j in range(params.j_min, params.j_max + 1):
        _, integ = scale_integrals(field, j, p)
        weight = 2.0 ** (j * n * (2 - p) * q / (2 * p))
        out[j] = weight * math.fsum(integ ** (q / p))
    return out


def xpq_norm(field: Field, params: XpqParams) -> float:
    """X_{p,q} norm truncated to the scale window of ``params``."""
    return math.fsum(xpq_terms(field, params).values()) ** (1.0 / params.q)


def xpq_sup_term(field: Field, p: float,
                 j_range: tuple[int, int] | None = None) -> tuple[float, DyadicCube]:
    """Max over scanned cubes of ``2^{j N (2-p)/2} int_tau |f|^p``.

    Ties go to the coarsest scale, then the lexicographically smallest corner.
    """
    if not 1 < p < 2:
        raise ValueError(f"p must lie in (1, 2), got {p}")
    n = field.spec.dim
    best, best_cube = -1.0, None
    for j in _scales(field, j_range):
        corners, integ = scale_integrals(field, j, p)
        i = int(np.argmax(integ))
        val = 2.0 ** (j * n * (2 - p) / 2) * float(integ[i])
        if val > best:
            best, best_cube = val, DyadicCube(j, tuple(corners[i]))
    return best, best_cube


# -- Whitney-type pairing ------------------------------------------------------

def _box_cube_range(box: Sequence[tuple[float, float]], scale: int) -> list[range]:
    out = []
    for lo, hi in box:
        a = math.floor(math.ldexp(lo, scale))
        b = math.ceil(math.ldexp(hi, scale))
        out.append(range(a, b))
    return out


def partners(cube: DyadicCube) -> Iterator[DyadicCube]:
    """Cubes related to ``cube``: same scale, not adjacent, adjacent parents."""
    parent = cube.parent()
    for shift in itertools.product((-1, 0, 1), repeat=cube.dim):
        nb = DyadicCube(parent.scale, tuple(k + d for k, d in zip(parent.corner, shift)))
        for child in nb.children():
            if not child.adjacent(cube):
                yield child


def whitney_pairs(j_min: int, j_max: int, box: Sequence[tuple[float, float]]) -> list[CubePair]:
    """All related pairs with scale in ``[j_min, j_max]`` whose cubes meet ``box``.

    ``box`` is a sequence of ``(low, high)`` bounds, one per axis.
    """
    if j_min > j_max:
        raise ValueError("empty scale window")
    box = [(float(lo), float(hi)) for lo, hi in box]
    out = []
    for j in range(j_min, j_max + 1):
        ranges = _box_cube_range(box, j)
        for corner in itertools.product(*ranges):
            cube = DyadicCube(j, corner)
            for other in partners(cube):
                if all(r.start <= k < r.stop for k, r in zip(other.corner, ranges)):
                    out.append(CubePair(cube, other))
    return out


def whitney_locate(xi: Sequence[float], eta: Sequence[float]) -> CubePair:
    """The unique related pair whose product contains ``(xi, eta)``, xi != eta."""
    if tuple(xi) == tuple(eta):
        raise ValueError("points on the diagonal have no Whitney pair")
    xi = [float(v) for v in xi]
    eta = [float(v) for v in eta]
    # coarse start: both points fit in adjacent cubes at this scale
    span = max(max(abs(a), abs(b)) for a, b in zip(xi, eta)) + 1.0
    j = -math.ceil(math.log2(span)) - 1
    while True:
        a, b = cube_of(xi, j), cube_of(eta, j)
        if not a.adjacent(b):
            return CubePair(a, b)
        j += 1


def refined_subdivision(pair: CubePair, m_sub: int) -> list[CubePair]:
    """All subcube pairs at scale ``j + m_sub`` inside ``pair``.

    The products cover ``left x right`` exactly; with ``2**m_sub >= dim`` every
    output pair is separated by at least ``dim * 2**-(j + m_sub)``.
    """
    if m_sub < 0:
        raise ValueError("m_sub must be nonnegative")
    lefts = pair.left.descendants(m_sub)
    rights = pair.right.descendants(m_sub)
    return [CubePair(a, b) for a in lefts for b in rights]


# -- text serialization ------------------------------------------------------

def write_cubes(stream: TextIO, cubes: Iterable[DyadicCube]) -> None:
    """One cube per line: ``j k_1 ... k_N``."""
    for c in cubes:
        stream.write(" ".join(str(v) for v in (c.scale, *c.corner)) + "\n")


def read_cubes(stream: TextIO) -> list[DyadicCube]:
    out = []
    for line in stream:
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        vals = [int(v) for v in parts]
        out.append(DyadicCube(vals[0], tuple(vals[1:])))
    return out


# -- witness family ----------------------------------------------------------

def log_refined_field(spec: GridSpec, eps: float) -> Field:
    """Truncation |x|^{-N/2} |ln|x||^{-1/2} on the cube (eps, 1/2)^N.

    Its L2 norm grows like (ln ln(1/eps))^{1/2} as eps shrinks while its
    X_{p,q} norm stays bounded.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    coords = spec.coords()
    inside = np.ones(spec.shape, dtype=bool)
    for x in coords:
        inside = inside & (x > eps) & (x < 0.5)
    r = np.sqrt(spec.radius_sq())[inside]
    vals = np.zeros(spec.shape)
    vals[inside] = r ** (-spec.dim / 2) / np.sqrt(np.abs(np.log(r)))
    return Field(spec, vals)
