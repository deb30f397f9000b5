"""Radial mollifier with vanishing positive-order moments, plus clipped moment tables.

phi(x) = sum_j c_j |x|^(2j) * bump(|x|), bump(r) = exp(-1/(1-r^2)) on r < 1.
Odd moments vanish by radial symmetry, so only the even radial moments of
degree 2..kappa-1 need to be cancelled.

The clipped tables F_gamma(t1, t2) = int_{-1}^{t1} int_{-1}^{t2} phi(t) t^gamma dt
turn the convolution of a cell-supported monomial with phi_eps into a short
sum of rectangle moments (see smoothing.py).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import InvalidParameter

TABLE_CELLS = 400
TABLE_GL = 8


def bump(r):
    r = np.asarray(r, float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _radial_rule(n_sub: int = 200, order: int = 20):
    g, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, n_sub + 1)
    h = np.diff(edges)
    nodes = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1)).ravel()
    wts = (0.5 * h[:, None] * w[None, :]).ravel()
    return nodes, wts


def radial_moment(n: int) -> float:
    """int_0^1 r^n bump(r) dr."""
    r, w = _radial_rule()
    return float(np.sum(w * r ** n * bump(r)))


@dataclass(frozen=True)
class MollifierSpec:
    kappa: int
    coeffs: tuple[float, ...]

    @property
    def J(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x, y):
        r2 = np.asarray(x, float) ** 2 + np.asarray(y, float) ** 2
        poly = np.zeros_like(r2)
        for j, c in enumerate(self.coeffs):
            poly = poly + c * r2 ** j
        return poly * bump(np.sqrt(r2))

    def scaled(self, eps: float):
        """phi_eps(x) = eps^-2 phi(x / eps)."""
        return lambda x, y: self(np.asarray(x) / eps, np.asarray(y) / eps) / eps ** 2

    def radial(self, r):
        r = np.asarray(r, float)
        return sum(c * r ** (2 * j) for j, c in enumerate(self.coeffs)) * bump(r)

    def moment(self, gamma) -> float:
        """int phi(t) t^gamma dt by polar quadrature (angular part in closed form)."""
        g1, g2 = int(gamma[0]), int(gamma[1])
        if g1 % 2 or g2 % 2:
            return 0.0
        # int_0^{2pi} cos^g1 sin^g2 = 2 B((g1+1)/2, (g2+1)/2)
        ang = 2 * math.gamma((g1 + 1) / 2) * math.gamma((g2 + 1) / 2) / math.gamma((g1 + g2 + 2) / 2)
        rad = sum(c * radial_moment(2 * j + g1 + g2 + 1) for j, c in enumerate(self.coeffs))
        return ang * rad


def n_even_degrees(kappa: int) -> int:
    return len([d for d in range(2, kappa) if d % 2 == 0])


@lru_cache(maxsize=None)
def build_mollifier(kappa: int) -> MollifierSpec:
    if not isinstance(kappa, (int, np.integer)) or kappa < 1:
        raise InvalidParameter(f"build_mollifier requires kappa >= 1, got {kappa!r}")
    J = n_even_degrees(int(kappa))
    A = np.array([[2 * np.pi * radial_moment(2 * j + 2 * k + 1) for j in range(J + 1)]
                  for k in range(J + 1)])
    rhs = np.zeros(J + 1)
    rhs[0] = 1.0
    assert abs(np.linalg.det(A / np.abs(A).max())) > 1e-300
    c = np.linalg.solve(A, rhs)
    return MollifierSpec(int(kappa), tuple(float(v) for v in c))


def moment_indices(kappa: int) -> list[tuple[int, int]]:
    return [(d - k, k) for d in range(kappa) for k in range(d + 1)]


@dataclass
class ClippedMoments:
    """Spline tables of the clipped moments F_gamma on [-1, 1]^2."""

    moll: MollifierSpec
    splines: dict = field(repr=False)

    def rect(self, gamma, a1, b1, a2, b2):
        """int over [a1,b1]x[a2,b2] of phi t^gamma; bounds clipped to [-1, 1]."""
        sp = self.splines[gamma]
        a1, b1, a2, b2 = (np.clip(v, -1.0, 1.0) for v in (a1, b1, a2, b2))
        return sp.ev(b1, b2) - sp.ev(a1, b2) - sp.ev(b1, a2) + sp.ev(a1, a2)


def _table_values(moll: MollifierSpec, gammas, n=TABLE_CELLS, ng=TABLE_GL):
    g, w = np.polynomial.legendre.leggauss(ng)
    edges = np.linspace(-1.0, 1.0, n + 1)
    h = 2.0 / n
    nodes = (edges[:-1, None] + h / 2 * (g[None, :] + 1)).ravel()
    wts = np.tile(w * h / 2, n)
    X, Y = np.meshgrid(nodes, nodes, indexing="ij")
    P = moll(X, Y) * wts[:, None] * wts[None, :]
    tables = {}
    for gam in gammas:
        cell = (P * X ** gam[0] * Y ** gam[1]).reshape(n, ng, n, ng).sum(axis=(1, 3))
        F = np.zeros((n + 1, n + 1))
        F[1:, 1:] = cell.cumsum(0).cumsum(1)
        tables[gam] = F
    return edges, tables


def _cache_key(moll: MollifierSpec) -> str:
    payload = repr((moll.kappa, moll.coeffs, TABLE_CELLS, TABLE_GL)).encode()
    return hashlib.sha1(payload).hexdigest()[:12]


_TABLES: dict = {}
_RAW: dict = {}


def clipped_moments(kappa: int, cache_dir: str | Path | None = None) -> ClippedMoments:
    """Tables for every gamma with |gamma| <= kappa-1, memoized and optionally cached on disk."""
    if kappa in _TABLES:
        cm = _TABLES[kappa]
        if cache_dir is not None:
            _save_tables(table_path(kappa, cache_dir), *_RAW[kappa])
        return cm
    moll = build_mollifier(kappa)
    gammas = moment_indices(kappa)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"moments_k{kappa}_{_cache_key(moll)}.npz"
    if path is not None and path.exists():
        data = np.load(path)
        edges = data["edges"]
        tables = {g: data[f"F_{g[0]}_{g[1]}"] for g in gammas}
    else:
        edges, tables = _table_values(moll, gammas)
        if path is not None:
            _save_tables(path, edges, tables)
    splines = {g: RectBivariateSpline(edges, edges, t, kx=5, ky=5, s=0) for g, t in tables.items()}
    cm = ClippedMoments(moll, splines)
    _TABLES[kappa] = cm
    _RAW[kappa] = (edges, tables)
    return cm


def _save_tables(path: Path, edges, tables) -> None:
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, edges=edges, **{f"F_{g[0]}_{g[1]}": t for g, t in tables.items()})


def table_path(kappa: int, cache_dir) -> Path:
    return Path(cache_dir) / f"moments_k{kappa}_{_cache_key(build_mollifier(kappa))}.npz"
