"""Orthonormal piecewise-polynomial (Alpert) wavelets on a dyadic square.

The wavelets on the unit square span the functions that are polynomials of
total degree <= kappa-1 on each of the four children and are orthogonal to
all polynomials of degree <= kappa-1 on the whole square.  Everything up to
the final normalisation is done in exact rationals.

Construction: the child-monomial space splits into four parity sectors
under the reflections u1 -> -u1 and u2 -> -u2 about the square's center.
The moment conditions respect this splitting, so each sector is handled on
its own (exact RREF nullspace, then exact Gram-Schmidt).  For kappa = 1 the
three sectors that survive are exactly the horizontal, vertical and diagonal
Haar functions.

Coefficient convention: each child polynomial is stored in the child's own
centered coordinates v = (x - child_center) / child_side, v in [-1/2, 1/2)^2.
Children are ordered c = cx + 2 cy with cx, cy in {0, 1} (cx = 0 is the left
half).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

from .dyadic import UNIT_SQUARE, DyadicSquare
from .errors import InvalidParameter

HALF = Fraction(1, 2)


def monomials(kappa: int) -> list[tuple[int, int]]:
    """Multi-indices of total degree <= kappa-1 in graded order."""
    return [(d - k, k) for d in range(kappa) for k in range(d + 1)]


def n_monomials(kappa: int) -> int:
    return kappa * (kappa + 1) // 2


def _int_interval(k: int, lo: Fraction, hi: Fraction) -> Fraction:
    return (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)


def _int_centered(k: int) -> Fraction:
    """Integral of v^k over [-1/2, 1/2]."""
    return Fraction(0) if k % 2 else 2 * HALF ** (k + 1) / (k + 1)


# child c: sign pattern (s1, s2) of its center relative to the square center
CHILD_SIGNS = [(-1, -1), (1, -1), (-1, 1), (1, 1)]


def _child_range(sign: int) -> tuple[Fraction, Fraction]:
    # square-centered coordinate u in [-1/2, 1/2); left child is [-1/2, 0)
    return (-HALF, Fraction(0)) if sign < 0 else (Fraction(0), HALF)


def _child_moment(c: int, alpha: tuple[int, int]) -> Fraction:
    """Integral of u^alpha over child c, u centered on the unit square."""
    s1, s2 = CHILD_SIGNS[c]
    return _int_interval(alpha[0], *_child_range(s1)) * _int_interval(alpha[1], *_child_range(s2))


def moment_matrix(kappa: int) -> list[list[Fraction]]:
    """Rows beta (|beta| <= kappa-1), columns generators (c, alpha) in order c*m + k.

    Entries are exact integrals of u^alpha u^beta over child c, with u the
    square-centered coordinate.
    """
    mons = monomials(kappa)
    return [[_child_moment(c, (a[0] + b[0], a[1] + b[1])) for c in range(4) for a in mons]
            for b in mons]


def _rref_nullspace(rows: list[list[Fraction]], ncols: int) -> list[list[Fraction]]:
    A = [list(r) for r in rows]
    pivots = []
    r = 0
    for col in range(ncols):
        piv = next((k for k in range(r, len(A)) if A[k][col] != 0), None)
        if piv is None:
            continue
        A[r], A[piv] = A[piv], A[r]
        p = A[r][col]
        A[r] = [v / p for v in A[r]]
        for k in range(len(A)):
            if k != r and A[k][col] != 0:
                f = A[k][col]
                A[k] = [a - f * b for a, b in zip(A[k], A[r])]
        pivots.append(col)
        r += 1
        if r == len(A):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fcol in free:
        v = [Fraction(0)] * ncols
        v[fcol] = Fraction(1)
        for row, pcol in enumerate(pivots):
            v[pcol] = -A[row][fcol]
        basis.append(v)
    lead = lambda v: next(i for i, x in enumerate(v) if x != 0)  # noqa: E731
    basis.sort(key=lambda v: (lead(v), v.index(Fraction(1))))
    return basis


def _sector_generators(kappa: int, parity: tuple[int, int]):
    """Sign patterns p(alpha) so that sign^p * u^alpha has the given parity."""
    return [((a[0] + parity[0]) % 2, (a[1] + parity[1]) % 2) for a in monomials(kappa)]


def _gen_child_coeffs(kappa: int, parity, vec: Sequence[Fraction]) -> list[list[Fraction]]:
    """Convert a sector combination into per-child coefficients in square-centered u."""
    mons = monomials(kappa)
    pats = _sector_generators(kappa, parity)
    out = []
    for c in range(4):
        s1, s2 = CHILD_SIGNS[c]
        out.append([vec[k] * (s1 ** pats[k][0]) * (s2 ** pats[k][1]) for k in range(len(mons))])
    return out


def _to_child_local(kappa: int, coeffs_u: list[list[Fraction]]) -> list[list[Fraction]]:
    """Re-expand child polynomials from u (square-centered) to v (child-centered).

    On child c, u = sign/4 + v/2 per axis.
    """
    mons = monomials(kappa)
    index = {a: k for k, a in enumerate(mons)}
    out = []
    for c in range(4):
        s1, s2 = CHILD_SIGNS[c]
        o1, o2 = Fraction(s1, 4), Fraction(s2, 4)
        new = [Fraction(0)] * len(mons)
        for k, (a1, a2) in enumerate(mons):
            coef = coeffs_u[c][k]
            if coef == 0:
                continue
            for g1 in range(a1 + 1):
                t1 = math.comb(a1, g1) * o1 ** (a1 - g1) * HALF ** g1
                for g2 in range(a2 + 1):
                    t2 = math.comb(a2, g2) * o2 ** (a2 - g2) * HALF ** g2
                    new[index[(g1, g2)]] += coef * t1 * t2
        out.append(new)
    return out


def _inner_local(kappa: int, p: list[list[Fraction]], q: list[list[Fraction]]) -> Fraction:
    """L2 inner product on the unit square of two child-local representations."""
    mons = monomials(kappa)
    tot = Fraction(0)
    for c in range(4):
        for a, ca in zip(mons, p[c]):
            if ca == 0:
                continue
            for b, cb in zip(mons, q[c]):
                if cb == 0:
                    continue
                tot += ca * cb * _int_centered(a[0] + b[0]) * _int_centered(a[1] + b[1])
    return tot / 4  # child area


@dataclass(frozen=True)
class ChildPiecewisePoly:
    """Per-child polynomial coefficients (4 x m) in child-centered coordinates.

    ``exact`` holds rational coefficients and ``norm2`` a rational such that
    the float coefficients equal exact / sqrt(norm2).  Values refer to the
    unit square; placing the function on a square Q multiplies by 1/side(Q).
    """

    kappa: int
    exact: tuple[tuple[Fraction, ...], ...]
    norm2: Fraction = Fraction(1)
    coef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        scale = 1.0 / math.sqrt(self.norm2) if self.norm2 != 1 else 1.0
        arr = np.array([[float(v) for v in row] for row in self.exact]) * scale
        arr.setflags(write=False)
        object.__setattr__(self, "coef", arr)

    @property
    def m(self) -> int:
        return n_monomials(self.kappa)

    @classmethod
    def constant(cls, kappa: int, value=1) -> "ChildPiecewisePoly":
        m = n_monomials(kappa)
        row = tuple([Fraction(value)] + [Fraction(0)] * (m - 1))
        return cls(kappa, (row,) * 4)


class PiecewisePolyFunction:
    """A child-piecewise polynomial placed on a dyadic square Q.

    f(x) = side(Q)^-1 * p_c(v) for x in child c of Q, zero outside Q.
    """

    def __init__(self, rep: ChildPiecewisePoly, square: DyadicSquare = UNIT_SQUARE):
        self.rep = rep
        self.square = square

    @property
    def kappa(self) -> int:
        return self.rep.kappa

    @property
    def amplitude(self) -> float:
        return 1.0 / self.square.side

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        x0, _, y0, _ = self.square.bounds
        h = self.square.side / 2
        fx = (x - x0) / h
        fy = (y - y0) / h
        cx = np.floor(fx)
        cy = np.floor(fy)
        inside = (cx >= 0) & (cx <= 1) & (cy >= 0) & (cy <= 1)
        c = np.where(inside, cx + 2 * cy, 0).astype(int)
        v1 = fx - cx - 0.5
        v2 = fy - cy - 0.5
        out = np.zeros(np.broadcast(x, y).shape)
        for k, (a1, a2) in enumerate(monomials(self.kappa)):
            out += self.rep.coef[c, k] * v1 ** a1 * v2 ** a2
        return np.where(inside, out * self.amplitude, 0.0)

    def evaluate(self, point) -> float:
        return float(self(np.array(point[0]), np.array(point[1])))

    def features(self):
        """Discontinuity lines (position, smoothing radius) per axis."""
        x0, x1, y0, y1 = self.square.bounds
        xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        return ([(x0, 0.0), (xm, 0.0), (x1, 0.0)], [(y0, 0.0), (ym, 0.0), (y1, 0.0)])

    def support(self):
        return self.square.bounds

    def moment(self, beta) -> float:
        return moment(self, beta)


class AlpertWavelet(PiecewisePolyFunction):
    """Wavelet h^a_{Q;kappa}; ``a`` runs over 0..3m-1."""

    def __init__(self, a: int, rep: ChildPiecewisePoly, square: DyadicSquare = UNIT_SQUARE):
        super().__init__(rep, square)
        self.a = a

    def __repr__(self):
        return f"AlpertWavelet(a={self.a}, kappa={self.kappa}, square={self.square})"


# sector order puts the kappa=1 Haar functions at a = 0 (x-odd), 1 (y-odd), 2 (both)
SECTORS = [(1, 0), (0, 1), (1, 1), (0, 0)]


@lru_cache(maxsize=None)
def _unit_reps(kappa: int) -> tuple[ChildPiecewisePoly, ...]:
    mons = monomials(kappa)
    m = len(mons)
    reps = []
    for parity in SECTORS:
        pats = _sector_generators(kappa, parity)
        # constraints: beta with the sector's parity
        rows = []
        for b in mons:
            if (b[0] % 2, b[1] % 2) != parity:
                continue
            row = []
            for k, a in enumerate(mons):
                tot = Fraction(0)
                for c in range(4):
                    s1, s2 = CHILD_SIGNS[c]
                    sign = (s1 ** pats[k][0]) * (s2 ** pats[k][1])
                    tot += sign * _child_moment(c, (a[0] + b[0], a[1] + b[1]))
                row.append(tot)
            rows.append(row)
        null = _rref_nullspace(rows, m) if rows else [
            [Fraction(int(i == k)) for i in range(m)] for k in range(m)]
        locals_ = [_to_child_local(kappa, _gen_child_coeffs(kappa, parity, v)) for v in null]
        ortho: list[tuple[list[list[Fraction]], Fraction]] = []
        for vec in locals_:
            w = [row[:] for row in vec]
            for q, qn in ortho:
                f = _inner_local(kappa, vec, q) / qn
                w = [[a - f * b for a, b in zip(wr, qr)] for wr, qr in zip(w, q)]
            ortho.append((w, _inner_local(kappa, w, w)))
        for w, n2 in ortho:
            reps.append(ChildPiecewisePoly(kappa, tuple(tuple(r) for r in w), n2))
    return tuple(reps)


def build_unit_alpert_basis(kappa: int) -> list[AlpertWavelet]:
    """The 3m orthonormal wavelets on [0, 1)^2, m = kappa(kappa+1)/2."""
    if not isinstance(kappa, (int, np.integer)) or kappa < 1:
        raise InvalidParameter(f"build_unit_alpert_basis requires kappa >= 1, got {kappa!r}")
    return [AlpertWavelet(a, rep) for a, rep in enumerate(_unit_reps(int(kappa)))]


@lru_cache(maxsize=None)
def _poly_reps(kappa: int) -> tuple[ChildPiecewisePoly, ...]:
    """Orthonormal polynomials of degree <= kappa-1 on [0,1)^2, graded Gram-Schmidt."""
    mons = monomials(kappa)
    gens = []
    for a in mons:
        coeffs_u = [[Fraction(int(b == a)) for b in mons] for _ in range(4)]
        gens.append(_to_child_local(kappa, coeffs_u))
    ortho = []
    for vec in gens:
        w = [row[:] for row in vec]
        for q, qn in ortho:
            f = _inner_local(kappa, vec, q) / qn
            w = [[a - f * b for a, b in zip(wr, qr)] for wr, qr in zip(w, q)]
        ortho.append((w, _inner_local(kappa, w, w)))
    return tuple(ChildPiecewisePoly(kappa, tuple(tuple(r) for r in w), n2) for w, n2 in ortho)


def polynomial_basis(kappa: int, Q: DyadicSquare = UNIT_SQUARE) -> list[PiecewisePolyFunction]:
    """Orthonormal basis of polynomials of degree <= kappa-1 restricted to Q."""
    if kappa < 1:
        raise InvalidParameter("kappa must be >= 1")
    return [PiecewisePolyFunction(rep, Q) for rep in _poly_reps(kappa)]


def poly_square_coeffs(kappa: int, k: int) -> np.ndarray:
    """Coefficients of the k-th orthonormal polynomial in square-centered coordinates.

    Used where the coarse block is represented on a single cell rather than
    on four children.
    """
    mons = monomials(kappa)
    # reconstruct from child 3 (upper right): v = 2u - 1/2 per axis
    rep = _poly_reps(kappa)[k]
    index = {a: i for i, a in enumerate(mons)}
    out = [Fraction(0)] * len(mons)
    for i, (a1, a2) in enumerate(mons):
        cf = rep.exact[3][i]
        if cf == 0:
            continue
        for g1 in range(a1 + 1):
            t1 = math.comb(a1, g1) * 2 ** g1 * (-HALF) ** (a1 - g1)
            for g2 in range(a2 + 1):
                t2 = math.comb(a2, g2) * 2 ** g2 * (-HALF) ** (a2 - g2)
                out[index[(g1, g2)]] += cf * t1 * t2
    return np.array([float(v) for v in out]) / math.sqrt(rep.norm2)


def rescale_wavelet(w: PiecewisePolyFunction, Q: DyadicSquare):
    """Translate/dilate a unit-square function onto Q, preserving the L2 norm."""
    if isinstance(w, AlpertWavelet):
        return AlpertWavelet(w.a, w.rep, Q)
    return PiecewisePolyFunction(w.rep, Q)


def moment(w: PiecewisePolyFunction, beta) -> float:
    """Integral of w(x) x^beta over its square, by exact per-child monomial integration."""
    b1, b2 = int(beta[0]), int(beta[1])
    Q = w.square
    half = Q.side_exact / 2
    mons = monomials(w.kappa)
    tot = Fraction(0)
    for c, child in enumerate(Q.children()):
        cx, cy = child.center_exact
        # (cx + half v1)^b1 (cy + half v2)^b2 expanded in v
        px = [math.comb(b1, k) * cx ** (b1 - k) * half ** k for k in range(b1 + 1)]
        py = [math.comb(b2, k) * cy ** (b2 - k) * half ** k for k in range(b2 + 1)]
        for (a1, a2), cf in zip(mons, w.rep.exact[c]):
            if cf == 0:
                continue
            s = Fraction(0)
            for k1, t1 in enumerate(px):
                i1 = _int_centered(a1 + k1)
                if i1 == 0:
                    continue
                for k2, t2 in enumerate(py):
                    s += t1 * t2 * i1 * _int_centered(a2 + k2)
            tot += cf * s
    # dx = half^2 dv on each child, amplitude 1/side
    tot *= half * half / Q.side_exact
    return float(tot) / math.sqrt(w.rep.norm2)


def evaluate(w: PiecewisePolyFunction, x) -> float:
    return w.evaluate(x)


def basis_to_json(kappa: int) -> str:
    """Export: per-child coefficient matrices with kappa, m, d recorded."""
    basis = build_unit_alpert_basis(kappa)
    payload = {
        "kappa": kappa,
        "m": n_monomials(kappa),
        "d": len(basis),
        "monomials": monomials(kappa),
        "coordinates": "child-centered v in [-1/2,1/2)^2; children c = cx + 2 cy",
        "wavelets": [{"a": w.a, "coef": w.rep.coef.tolist()} for w in basis],
    }
    return json.dumps(payload, indent=1)
