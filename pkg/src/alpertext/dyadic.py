"""Dyadic squares, translated and dilated grids, separated triples and frequency lattices.

All geometry is exact: grid offsets and dilation centers are stored as
``fractions.Fraction`` and squares as (scale, i, j), so containment and
distance predicates never suffer floating-point ties.  Float views are
provided for numerics; for dyadic offsets they are exact as well.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidParameter, InvalidScale


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    return Fraction(float(v))


def _pow2(k: int) -> Fraction:
    return Fraction(2) ** k


@dataclass(frozen=True)
class Grid:
    """Standard dyadic mesh translated by ``origin_offset``.

    Squares at scale s have side 2^-s and lower-left corners
    ``origin_offset + 2^-s (i, j)``.  Equality ignores the label.
    """

    origin_offset: tuple[Fraction, Fraction] = (Fraction(0), Fraction(0))
    label: str = field(default="G", compare=False)

    def __post_init__(self):
        ox, oy = self.origin_offset
        object.__setattr__(self, "origin_offset", (_frac(ox), _frac(oy)))

    def square(self, s: int, i: int, j: int) -> "DyadicSquare":
        return DyadicSquare(self, int(s), int(i), int(j))

    def containing(self, s: int, point) -> "DyadicSquare":
        """Scale-s square containing ``point`` (half-open convention)."""
        side = _pow2(-s)
        px, py = _frac(point[0]), _frac(point[1])
        i = math.floor((px - self.origin_offset[0]) / side)
        j = math.floor((py - self.origin_offset[1]) / side)
        return DyadicSquare(self, s, i, j)


STANDARD_GRID = Grid()


@dataclass(frozen=True)
class DyadicSquare:
    """Half-open square ``corner + [0, 2^-s)^2`` of a grid."""

    grid: Grid
    scale: int
    i: int
    j: int

    @property
    def side_exact(self) -> Fraction:
        return _pow2(-self.scale)

    @property
    def corner_exact(self) -> tuple[Fraction, Fraction]:
        h = self.side_exact
        ox, oy = self.grid.origin_offset
        return (ox + h * self.i, oy + h * self.j)

    @property
    def center_exact(self) -> tuple[Fraction, Fraction]:
        h = self.side_exact
        cx, cy = self.corner_exact
        return (cx + h / 2, cy + h / 2)

    @property
    def side(self) -> float:
        return float(self.side_exact)

    @property
    def corner(self) -> tuple[float, float]:
        cx, cy = self.corner_exact
        return (float(cx), float(cy))

    @property
    def center(self) -> tuple[float, float]:
        cx, cy = self.center_exact
        return (float(cx), float(cy))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x0, x1, y0, y1) as floats."""
        x0, y0 = self.corner
        h = self.side
        return (x0, x0 + h, y0, y0 + h)

    @property
    def area_exact(self) -> Fraction:
        return self.side_exact ** 2

    def children(self) -> list["DyadicSquare"]:
        s = self.scale + 1
        return [DyadicSquare(self.grid, s, 2 * self.i + cx, 2 * self.j + cy)
                for cy in (0, 1) for cx in (0, 1)]

    def parent(self) -> "DyadicSquare":
        return DyadicSquare(self.grid, self.scale - 1, self.i // 2, self.j // 2)

    def contains_square(self, other: "DyadicSquare") -> bool:
        """Set containment, exact; works across grids."""
        ax, ay = self.corner_exact
        bx, by = other.corner_exact
        ha, hb = self.side_exact, other.side_exact
        return ax <= bx and ay <= by and bx + hb <= ax + ha and by + hb <= ay + ha

    def contains(self, x, y):
        x0, x1, y0, y1 = self.bounds
        return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)

    def sort_key(self):
        return (self.scale, self.i, self.j)

    def to_json(self) -> dict:
        return {"grid": self.grid.label, "s": self.scale, "i": self.i, "j": self.j}

    def __repr__(self):
        return f"Sq({self.grid.label}, s={self.scale}, i={self.i}, j={self.j})"


UNIT_SQUARE = DyadicSquare(STANDARD_GRID, 0, 0, 0)


def centered_grid(side_scale: int = 1) -> Grid:
    """Grid in which [-2^-(s+1), 2^-(s+1))^2 is the scale-s square (0, 0)."""
    h = _pow2(-side_scale - 1)
    return Grid((-h, -h), label="C")


def default_root() -> DyadicSquare:
    """U = [-1/4, 1/4)^2, a scale-1 square inside B(0, 1/2)."""
    return centered_grid(1).square(1, 0, 0)


def squares_at_scale(grid: Grid, s: int, U: DyadicSquare) -> list[DyadicSquare]:
    """All scale-s squares of ``grid`` contained in ``U``, lexicographic in (i, j)."""
    if U.grid != grid:
        raise InvalidParameter("U does not belong to the given grid")
    if s < U.scale:
        raise InvalidScale(f"scale {s} is coarser than scale(U) = {U.scale}")
    k = 1 << (s - U.scale)
    return [DyadicSquare(grid, s, U.i * k + a, U.j * k + b)
            for a in range(k) for b in range(k)]


_DIL = re.compile(r"^(.*)\*2\^(-?\d+)$")


def _dilated_label(label: str, m: int) -> str:
    base, k = label, 0
    hit = _DIL.match(label)
    if hit:
        base, k = hit.group(1), int(hit.group(2))
    k += m
    return base if k == 0 else f"{base}*2^{k}"


def dilate_grid(grid: Grid, m: int, center=(0, 0)) -> Grid:
    """Grid whose squares are {2^m I : I in grid}, dilated about ``center``."""
    if m == 0:
        return grid
    c = (_frac(center[0]), _frac(center[1]))
    f = _pow2(m)
    ox, oy = grid.origin_offset
    return Grid((c[0] + f * (ox - c[0]), c[1] + f * (oy - c[1])), _dilated_label(grid.label, m))


def dilate_square(I: DyadicSquare, m: int, center=(0, 0)) -> DyadicSquare:
    """The square 2^m I in the dilated grid (same indices, scale shifted by m)."""
    return DyadicSquare(dilate_grid(I.grid, m, center), I.scale - m, I.i, I.j)


def gap_distance_sq(a: DyadicSquare, b: DyadicSquare) -> Fraction:
    """Squared Euclidean gap between the closed squares (0 when they touch)."""
    ax, ay = a.corner_exact
    bx, by = b.corner_exact
    ha, hb = a.side_exact, b.side_exact
    dx = max(Fraction(0), max(ax, bx) - min(ax + ha, bx + hb))
    dy = max(Fraction(0), max(ay, by) - min(ay + ha, by + hb))
    return dx * dx + dy * dy


def center_distance_sq(a: DyadicSquare, b: DyadicSquare) -> Fraction:
    (ax, ay), (bx, by) = a.center_exact, b.center_exact
    return (ax - bx) ** 2 + (ay - by) ** 2


@dataclass(frozen=True)
class SquareTriple:
    squares: tuple[DyadicSquare, DyadicSquare, DyadicSquare]
    nu: float

    def __iter__(self):
        return iter(self.squares)


def is_nu_disjoint(t: SquareTriple) -> bool:
    """Comparable sides (nu/2 <= side <= 2 nu) and pairwise gaps of at least nu."""
    nu = _frac(t.nu)
    if nu <= 0:
        raise InvalidParameter("nu must be positive")
    grids = {sq.grid for sq in t.squares}
    if len(grids) != 1:
        raise InvalidParameter("triple mixes grids")
    if any(not (nu / 2 <= sq.side_exact <= 2 * nu) for sq in t.squares):
        return False
    return all(gap_distance_sq(a, b) >= nu * nu
               for a, b in itertools.combinations(t.squares, 2))


def separated_triples(squares: Sequence[DyadicSquare], sep) -> list[tuple[int, int, int]]:
    """Index triples (p < q < r) whose pairwise center distances exceed ``sep``.

    Indices refer to ``squares`` sorted lexicographically; the output is in
    lexicographic order of the index triples.
    """
    if len(squares) < 3:
        return []
    scales = {sq.scale for sq in squares}
    if len(scales) != 1:
        raise InvalidScale("separated_triples expects squares at one scale")
    sep2 = _frac(sep) ** 2
    n = len(squares)
    far = [[center_distance_sq(squares[p], squares[q]) > sep2 for q in range(n)] for p in range(n)]
    out = []
    for p in range(n):
        for q in range(p + 1, n):
            if not far[p][q]:
                continue
            for r in range(q + 1, n):
                if far[p][r] and far[q][r]:
                    out.append((p, q, r))
    return out


def nu_disjoint_triples(squares: Sequence[DyadicSquare], nu) -> list[SquareTriple]:
    """All nu-disjoint triples drawn from ``squares`` (lexicographic order)."""
    out = []
    for a, b, c in itertools.combinations(squares, 3):
        t = SquareTriple((a, b, c), float(nu))
        if is_nu_disjoint(t):
            out.append(t)
    return out


@dataclass(frozen=True)
class FreqLattice:
    """Points of 2^lam Z^3 inside the closed ball of radius R."""

    lam: int
    R: float
    n: np.ndarray  # integer triples, lexicographic

    @property
    def spacing(self) -> float:
        return math.ldexp(1.0, self.lam)

    @property
    def points(self) -> np.ndarray:
        return self.n.astype(float) * self.spacing

    def __len__(self):
        return len(self.n)

    def to_json(self) -> dict:
        return {"lambda": self.lam, "R": self.R, "points": self.n.tolist()}


def freq_lattice(lam: int, R: float) -> FreqLattice:
    if R <= 0:
        raise InvalidParameter("R must be positive")
    bound = (_frac(R) / _pow2(lam)) ** 2
    nmax = math.isqrt(math.floor(bound))
    rng = np.arange(-nmax, nmax + 1, dtype=np.int64)
    a, b, c = np.meshgrid(rng, rng, rng, indexing="ij")
    n = np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)
    keep = (n * n).sum(axis=1) <= math.floor(bound)
    return FreqLattice(int(lam), float(R), n[keep])


def square_from_json(d: dict, grids: Iterable[Grid]) -> DyadicSquare:
    by_label = {g.label: g for g in grids}
    return DyadicSquare(by_label[d["grid"]], d["s"], d["i"], d["j"])
