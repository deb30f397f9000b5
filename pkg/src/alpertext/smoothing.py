"""Semi-analytic evaluation of mollified cell-piecewise polynomials.

A ``CellLevel`` is a uniform block of square cells (side h) carrying, per
cell, a polynomial in the cell-centered coordinate v = (x - center) / h.
Convolving the cell-restricted monomial v^alpha with phi_eps gives

    S(x) = sum_{gamma <= alpha} C(alpha, gamma) v^(alpha-gamma) (-r)^|gamma| M_gamma(rect)

with r = eps / h, v = v(x), and M_gamma the moment of phi over the
rectangle t in [(v - 1/2) / r, (v + 1/2) / r] clipped to the unit disk's
bounding box.  When the eps-disk sits inside the cell the vanishing moments
of phi make S(x) = v^alpha exactly, so only points within eps of a cell line
touch the spline tables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .alpert import AlpertWavelet, monomials
from .errors import InvalidParameter
from .mollifier import clipped_moments
from .quadrature import Field2D, sample, tensor_rule


@dataclass(frozen=True)
class CellLevel:
    """nx x ny cells of side h with lower-left corner (x0, y0); smoothing radius eps."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int
    eps: float
    kappa: int
    tag: str = ""

    @property
    def m(self) -> int:
        return self.kappa * (self.kappa + 1) // 2

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def ncols(self) -> int:
        return self.ncells * self.m

    @property
    def r(self) -> float:
        return self.eps / self.h

    def bounds(self, smooth: bool = True):
        e = self.eps if smooth else 0.0
        return (self.x0 - e, self.x0 + self.nx * self.h + e,
                self.y0 - e, self.y0 + self.ny * self.h + e)

    def features(self, smooth: bool = True, lines: bool = True):
        """Per-axis (line, eps) pairs.

        Unsmoothed lines enter with eps 0; a purely smoothed function has no
        break at the line itself, so ``lines=False`` keeps only the strips.
        """
        xs = [self.x0 + k * self.h for k in range(self.nx + 1)]
        ys = [self.y0 + k * self.h for k in range(self.ny + 1)]
        keep = lines or not (smooth and self.eps > 0)
        fx = [(p, 0.0) for p in xs] if keep else []
        fy = [(p, 0.0) for p in ys] if keep else []
        if smooth and self.eps > 0:
            fx += [(p, self.eps) for p in xs]
            fy += [(p, self.eps) for p in ys]
        return fx, fy

    def cell_of(self, i, j):
        return np.asarray(i) * self.ny + np.asarray(j)

    def dilated(self, m: int) -> "CellLevel":
        f = math.ldexp(1.0, m)
        return CellLevel(self.x0 * f, self.y0 * f, self.h * f, self.nx, self.ny, self.eps * f,
                         self.kappa, self.tag)


def _powers(v, deg):
    out = [np.ones_like(v)]
    for _ in range(deg):
        out.append(out[-1] * v)
    return out


def _tensor_axes(X, Y):
    """Return (xs, ys) when X, Y form an 'ij' meshgrid, else None."""
    X = np.asarray(X)
    Y = np.asarray(Y)
    if X.ndim != 2 or X.shape != Y.shape or X.size == 0:
        return None
    xs, ys = X[:, 0], Y[0, :]
    if np.array_equal(X, np.broadcast_to(xs[:, None], X.shape)) and \
            np.array_equal(Y, np.broadcast_to(ys[None, :], Y.shape)):
        return xs, ys
    return None


def eval_matrix(level: CellLevel, X, Y, smooth: bool = True) -> sparse.csr_matrix:
    """Sparse (npts x ncells*m) matrix; row p holds the basis values at point p.

    Points are taken in ravel order of X; meshgrid inputs use a faster
    tensor-product path that gives the same values.
    """
    axes = _tensor_axes(X, Y)
    if axes is not None:
        return eval_matrix_grid(level, *axes, smooth=smooth)
    x = np.asarray(X, float).ravel()
    y = np.asarray(Y, float).ravel()
    npts = x.size
    mons = monomials(level.kappa)
    m = len(mons)
    deg = level.kappa - 1
    px = (x - level.x0) / level.h
    py = (y - level.y0) / level.h
    i0 = np.floor(px).astype(np.int64)
    j0 = np.floor(py).astype(np.int64)
    vx = px - i0 - 0.5
    vy = py - j0 - 0.5
    rows, cols, vals = [], [], []

    def emit(idx, ci, cj, block):
        for k in range(m):
            rows.append(idx)
            cols.append(level.cell_of(ci, cj) * m + k)
            vals.append(block[k])

    if not smooth or level.eps <= 0:
        ok = (i0 >= 0) & (i0 < level.nx) & (j0 >= 0) & (j0 < level.ny)
        idx = np.nonzero(ok)[0]
        p1, p2 = _powers(vx[idx], deg), _powers(vy[idx], deg)
        emit(idx, i0[idx], j0[idx], [p1[a] * p2[b] for a, b in mons])
        return _assemble(rows, cols, vals, npts, level.ncols)

    r = level.r
    K = max(1, math.ceil(r))
    cm = clipped_moments(level.kappa)
    for di in range(-K, K + 1):
        for dj in range(-K, K + 1):
            ci, cj = i0 + di, j0 + dj
            wx, wy = vx - di, vy - dj
            lo1, hi1 = (wx - 0.5) / r, (wx + 0.5) / r
            lo2, hi2 = (wy - 0.5) / r, (wy + 0.5) / r
            ok = ((ci >= 0) & (ci < level.nx) & (cj >= 0) & (cj < level.ny)
                  & (lo1 < 1) & (hi1 > -1) & (lo2 < 1) & (hi2 > -1))
            if not ok.any():
                continue
            inner = ok & (lo1 <= -1) & (hi1 >= 1) & (lo2 <= -1) & (hi2 >= 1)
            edge = ok & ~inner
            idx = np.nonzero(inner)[0]
            if idx.size:
                p1, p2 = _powers(wx[idx], deg), _powers(wy[idx], deg)
                emit(idx, ci[idx], cj[idx], [p1[a] * p2[b] for a, b in mons])
            idx = np.nonzero(edge)[0]
            if idx.size:
                a1, b1, a2, b2 = lo1[idx], hi1[idx], lo2[idx], hi2[idx]
                mom = {g: cm.rect(g, a1, b1, a2, b2) for g in mons}
                p1, p2 = _powers(wx[idx], deg), _powers(wy[idx], deg)
                block = []
                for al1, al2 in mons:
                    acc = np.zeros(idx.size)
                    for g1 in range(al1 + 1):
                        for g2 in range(al2 + 1):
                            c = math.comb(al1, g1) * math.comb(al2, g2) * (-r) ** (g1 + g2)
                            acc += c * p1[al1 - g1] * p2[al2 - g2] * mom[(g1, g2)]
                    block.append(acc)
                emit(idx, ci[idx], cj[idx], block)
    return _assemble(rows, cols, vals, npts, level.ncols)


def _axis_offsets(level: CellLevel, t, origin, n, smooth):
    """Per-axis data for each cell offset: (node ids, cell ids, local v, lo, hi, inner)."""
    p = (np.asarray(t, float) - origin) / level.h
    i0 = np.floor(p).astype(np.int64)
    v = p - i0 - 0.5
    out = []
    if not smooth or level.eps <= 0:
        ok = np.nonzero((i0 >= 0) & (i0 < n))[0]
        out.append((ok, i0[ok], v[ok], None, None, np.ones(ok.size, bool)))
        return out
    r = level.r
    K = max(1, math.ceil(r))
    for d in range(-K, K + 1):
        c = i0 + d
        w = v - d
        lo, hi = (w - 0.5) / r, (w + 0.5) / r
        ok = np.nonzero((c >= 0) & (c < n) & (lo < 1) & (hi > -1))[0]
        if ok.size:
            out.append((ok, c[ok], w[ok], np.clip(lo[ok], -1, 1), np.clip(hi[ok], -1, 1),
                        (lo[ok] <= -1) & (hi[ok] >= 1)))
    return out


def _grid_ev(F, a, b):
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    return F(ua, ub, grid=True)[np.ix_(ia, ib)]


def eval_matrix_grid(level: CellLevel, xs, ys, smooth: bool = True) -> sparse.csr_matrix:
    """eval_matrix for the 'ij' meshgrid of xs and ys, rows in ravel order."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    nyp = ys.size
    npts = xs.size * nyp
    mons = monomials(level.kappa)
    m = len(mons)
    deg = level.kappa - 1
    ax = _axis_offsets(level, xs, level.x0, level.nx, smooth)
    ay = _axis_offsets(level, ys, level.y0, level.ny, smooth)
    smoothing = smooth and level.eps > 0
    cm = clipped_moments(level.kappa) if smoothing else None
    r = level.r
    rows, cols, vals = [], [], []
    for ix, cx, wx, lo1, hi1, in1 in ax:
        p1 = _powers(wx, deg)
        for iy, cy, wy, lo2, hi2, in2 in ay:
            p2 = _powers(wy, deg)
            row = (ix[:, None] * nyp + iy[None, :]).ravel()
            cell = (cx[:, None] * level.ny + cy[None, :]).ravel()
            inner = np.outer(in1, in2)
            edge = smoothing and not inner.all()
            if edge:
                mom = {}
                for g in mons:
                    F = cm.splines[g]
                    mom[g] = (_grid_ev(F, hi1, hi2) - _grid_ev(F, lo1, hi2)
                              - _grid_ev(F, hi1, lo2) + _grid_ev(F, lo1, lo2))
            for k, (al1, al2) in enumerate(mons):
                val = np.outer(p1[al1], p2[al2])
                if edge:
                    acc = np.zeros_like(val)
                    for g1 in range(al1 + 1):
                        for g2 in range(al2 + 1):
                            c = math.comb(al1, g1) * math.comb(al2, g2) * (-r) ** (g1 + g2)
                            acc += c * np.outer(p1[al1 - g1], p2[al2 - g2]) * mom[(g1, g2)]
                    val = np.where(inner, val, acc)
                rows.append(row)
                cols.append(cell * m + k)
                vals.append(val.ravel())
    return _assemble(rows, cols, vals, npts, level.ncols)


def _assemble(rows, cols, vals, npts, ncols):
    if not rows:
        return sparse.csr_matrix((npts, ncols))
    M = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(npts, ncols))
    return M.tocsr()


@dataclass
class LevelExpansion:
    """Cell coefficients (ncells x m, lex order (i, j)) on one CellLevel."""

    level: CellLevel
    coef: np.ndarray

    def __post_init__(self):
        self.coef = np.asarray(self.coef).reshape(self.level.ncells, self.level.m)

    def __call__(self, X, Y, smooth: bool = True):
        X = np.asarray(X, float)
        vals = eval_matrix(self.level, X, Y, smooth) @ self.coef.ravel()
        return vals.reshape(X.shape)


@dataclass
class Expansion:
    """Sum of level expansions, evaluated smoothed (default) or unsmoothed."""

    parts: list = field(default_factory=list)
    smooth: bool = True

    def __call__(self, X, Y):
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        dtype = complex if any(np.iscomplexobj(p.coef) for p in self.parts) else float
        out = np.zeros(X.shape, dtype=dtype)
        for p in self.parts:
            if np.any(p.coef):
                out = out + p(X, Y, self.smooth)
        return out

    def features(self):
        fx, fy = [], []
        for p in self.parts:
            a, b = p.level.features(self.smooth, lines=not self.smooth)
            fx += a
            fy += b
        return fx, fy

    def bounds(self):
        if not self.parts:
            return (0.0, 0.0, 0.0, 0.0)
        bs = np.array([p.level.bounds(self.smooth) for p in self.parts])
        return (bs[:, 0].min(), bs[:, 1].max(), bs[:, 2].min(), bs[:, 3].max())

    def scaled(self, t) -> "Expansion":
        return Expansion([LevelExpansion(p.level, t * p.coef) for p in self.parts], self.smooth)

    def unsmoothed(self) -> "Expansion":
        return Expansion(self.parts, smooth=False)

    def to_field(self, xi_max: float = 0.0, domain=None, extra_features=((), ()),
                 label: str = "", refine: int = 1, strip_order: int | None = None) -> Field2D:
        if domain is None and not self.parts:
            domain = (0.0, 1.0, 0.0, 1.0)    # the zero function: any nondegenerate box works
        fx, fy = self.features()
        fx = fx + list(extra_features[0])
        fy = fy + list(extra_features[1])
        return sample(self, domain or self.bounds(), fx, fy, xi_max=xi_max, label=label,
                      refine=refine, strip_order=strip_order)


def wavelet_level(w: AlpertWavelet, eta: float) -> LevelExpansion:
    """The wavelet on Q as a 2 x 2 cell level, smoothing radius eta * side(Q)."""
    Q = w.square
    x0, _, y0, _ = Q.bounds
    h = Q.side / 2
    lvl = CellLevel(x0, y0, h, 2, 2, eta * Q.side, w.kappa, tag="wavelet")
    coef = np.zeros((4, w.rep.m))
    for c in range(4):
        cx, cy = c % 2, c // 2
        coef[lvl.cell_of(cx, cy)] = w.rep.coef[c] / Q.side
    return LevelExpansion(lvl, coef)


class SmoothWavelet:
    """h^{a,eta} = h^a_Q * phi_{eta side(Q)}, evaluated semi-analytically."""

    def __init__(self, base: AlpertWavelet, eta: float):
        if not eta > 0:
            raise InvalidParameter(f"eta must be positive, got {eta!r}")
        self.base = base
        self.eta = float(eta)
        self.part = wavelet_level(base, self.eta)
        self.expansion = Expansion([self.part])
        self._fields = {}

    @property
    def eps(self) -> float:
        return self.part.level.eps

    def __call__(self, X, Y):
        return self.part(X, Y, smooth=True)

    def support(self):
        return self.part.level.bounds(smooth=True)

    def field(self, xi_max: float = 0.0, refine: int = 1) -> Field2D:
        key = (xi_max, refine)
        if key not in self._fields:
            self._fields[key] = self.expansion.to_field(xi_max=xi_max, refine=refine)
        return self._fields[key]

    def moment(self, beta, refine: int = 1) -> float:
        """int h^{a,eta} x^beta by strip-adapted quadrature."""
        f = self.field(refine=refine)
        return float(f.rule.integrate(f.values * np.outer(f.rule.x.nodes ** beta[0],
                                                           f.rule.y.nodes ** beta[1])))


def smooth_wavelet(w: AlpertWavelet, eta: float) -> SmoothWavelet:
    return SmoothWavelet(w, eta)


def l2_distance(a: Expansion, b: Expansion, refine: int = 1) -> float:
    """L2 distance of two expansions on a rule resolving both feature sets."""
    fa, fb = a.features(), b.features()
    ba, bb = a.bounds(), b.bounds()
    dom = (min(ba[0], bb[0]), max(ba[1], bb[1]), min(ba[2], bb[2]), max(ba[3], bb[3]))
    r = tensor_rule(dom, fa[0] + fb[0], fa[1] + fb[1], refine=refine)
    X, Y = r.mesh()
    d = a(X, Y) - b(X, Y)
    return float(np.sqrt(r.integrate(np.abs(d) ** 2)))
