"""Truncated smooth Alpert frame: frame matrix, pseudoprojections, reconstruction.

Basis order: the m coarse polynomials on U, then for each scale s from
scale(U) to S_max the squares of G_s[U] in lexicographic (i, j) order, each
carrying a = 0..3m-1.

With B the unsmoothed basis and B_eta the smoothed basis sampled on one
quadrature rule over U (weights W), the frame matrix is M = B^T W B_eta and
the analysis of f is A(f) = B^T W f.  Coefficients are c = M^{-1} A(f), so any
f in the smoothed span is recovered exactly up to the linear solve.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .alpert import build_unit_alpert_basis, n_monomials, poly_square_coeffs
from .dyadic import DyadicSquare, dilate_square, squares_at_scale
from .errors import ConfigurationError, FrameDegenerate, InvalidParameter, OutOfRange
from .quadrature import TensorRule, tensor_rule
from .smoothing import CellLevel, Expansion, LevelExpansion, eval_matrix

COND_LIMIT = 1e6
DEFAULT_ETA = 2.0 ** -6


@dataclass(frozen=True)
class TruncationSpec:
    U: DyadicSquare
    S_max: int
    kappa: int

    def __post_init__(self):
        if self.kappa < 1:
            raise InvalidParameter("kappa must be >= 1")

    @property
    def m(self) -> int:
        return n_monomials(self.kappa)

    @property
    def scales(self) -> range:
        return range(self.U.scale, self.S_max + 1)

    def squares(self, s: int) -> list[DyadicSquare]:
        return squares_at_scale(self.U.grid, s, self.U)

    @property
    def size(self) -> int:
        return self.m + sum(3 * self.m * 4 ** (s - self.U.scale) for s in self.scales)

    def offset(self, s: int) -> int:
        return self.m + sum(3 * self.m * 4 ** (t - self.U.scale) for t in range(self.U.scale, s))

    def index(self, Q: DyadicSquare, a: int) -> int:
        if Q.grid != self.U.grid or Q.scale not in self.scales or not self.U.contains_square(Q):
            raise OutOfRange(f"{Q} is outside the truncation")
        k = 1 << (Q.scale - self.U.scale)
        qi, qj = Q.i - self.U.i * k, Q.j - self.U.j * k
        return self.offset(Q.scale) + (qi * k + qj) * 3 * self.m + a

    def scale_slice(self, s: int) -> slice:
        if s not in self.scales:
            raise OutOfRange(f"scale {s} outside {self.U.scale}..{self.S_max}")
        a = self.offset(s)
        return slice(a, a + 3 * self.m * 4 ** (s - self.U.scale))

    def labels(self) -> list[tuple]:
        out = [("c", k) for k in range(self.m)]
        for s in self.scales:
            for Q in self.squares(s):
                out += [(Q, a) for a in range(3 * self.m)]
        return out

    def levels(self, eta: float) -> list[CellLevel]:
        """Coarse cell (U itself) followed by one cell level per wavelet scale."""
        x0, _, y0, _ = self.U.bounds
        L = self.U.side
        out = [CellLevel(x0, y0, L, 1, 1, eta * L, self.kappa, "coarse")]
        for s in self.scales:
            n = 1 << (s + 1 - self.U.scale)
            side = math.ldexp(1.0, -s)
            out.append(CellLevel(x0, y0, side / 2, n, n, eta * side, self.kappa, f"s{s}"))
        return out

    def dilated(self, m: int, center=(0, 0)) -> "TruncationSpec":
        return TruncationSpec(dilate_square(self.U, m, center), self.S_max - m, self.kappa)

    def key(self) -> str:
        ox, oy = self.U.grid.origin_offset
        return f"k{self.kappa}_U{self.U.scale}_{self.U.i}_{self.U.j}_{ox}_{oy}_S{self.S_max}"


def coefficient_maps(trunc: TruncationSpec) -> list[sparse.csr_matrix]:
    """Per level, the sparse map from basis coefficients to cell coefficients."""
    m = trunc.m
    n = trunc.size
    maps = []
    # coarse block: orthonormal polynomials on U in U-centered coordinates
    rows, cols, vals = [], [], []
    for k in range(m):
        pc = poly_square_coeffs(trunc.kappa, k) / trunc.U.side
        for t in range(m):
            if pc[t] != 0:
                rows.append(t), cols.append(k), vals.append(pc[t])
    maps.append(sparse.csr_matrix((vals, (rows, cols)), shape=(m, n)))
    basis = build_unit_alpert_basis(trunc.kappa)
    for s in trunc.scales:
        k = 1 << (s - trunc.U.scale)
        ncell = 2 * k
        rows, cols, vals = [], [], []
        amp = 1.0 / math.ldexp(1.0, -s)
        for qi in range(k):
            for qj in range(k):
                base = trunc.offset(s) + (qi * k + qj) * 3 * m
                for a, w in enumerate(basis):
                    for c in range(4):
                        cell = (2 * qi + c % 2) * ncell + (2 * qj + c // 2)
                        for t in range(m):
                            v = w.rep.coef[c, t]
                            if v != 0:
                                rows.append(cell * m + t), cols.append(base + a)
                                vals.append(v * amp)
        maps.append(sparse.csr_matrix((vals, (rows, cols)), shape=(ncell * ncell * m, n)))
    return maps


def frame_rule(trunc: TruncationSpec, eta: float) -> TensorRule:
    fx, fy = [], []
    for lvl in trunc.levels(eta):
        a, b = lvl.features(smooth=True)
        fx += a
        fy += b
    return tensor_rule(trunc.U.bounds, fx, fy)


def basis_matrix(trunc, eta, X, Y, smooth=True, maps=None) -> sparse.csr_matrix:
    """Values of all basis functions (smoothed or not) at the points (X, Y)."""
    maps = maps or coefficient_maps(trunc)
    out = None
    for lvl, C in zip(trunc.levels(eta), maps):
        part = eval_matrix(lvl, X, Y, smooth=smooth) @ C
        out = part if out is None else out + part
    return out.tocsr()


@dataclass
class CoeffVector:
    trunc: TruncationSpec
    values: np.ndarray

    def __getitem__(self, key):
        Q, a = key
        if Q == "c":
            return self.values[a]
        return self.values[self.trunc.index(Q, a)]

    @property
    def coarse(self) -> np.ndarray:
        return self.values[: self.trunc.m]

    def square(self, Q: DyadicSquare) -> np.ndarray:
        i = self.trunc.index(Q, 0)
        return self.values[i: i + 3 * self.trunc.m]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "i", "j", "a", "re", "im"])
        for lab, v in zip(self.trunc.labels(), self.values):
            v = complex(v)
            if lab[0] == "c":
                w.writerow(["", "", "", f"c{lab[1]}", f"{v.real:.17g}", f"{v.imag:.17g}"])
            else:
                Q, a = lab
                w.writerow([Q.scale, Q.i, Q.j, a, f"{v.real:.17g}", f"{v.imag:.17g}"])
        return buf.getvalue()


class FrameMatrix:
    """M_{ji} = <b_j, b_i^eta> on a truncation, with factored inverse."""

    def __init__(self, trunc: TruncationSpec, eta: float, cache_dir=None):
        if eta < 0:
            raise InvalidParameter(f"eta must be >= 0, got {eta}")
        self.trunc = trunc
        self.kappa = trunc.kappa
        self.eta = float(eta)
        self.levels = trunc.levels(self.eta)
        self.maps = coefficient_maps(trunc)
        self.rule = frame_rule(trunc, self.eta)
        X, Y = self.rule.mesh()
        self.B = basis_matrix(trunc, self.eta, X, Y, smooth=False, maps=self.maps)
        self.cache_hit = False
        path = self.cache_path(cache_dir) if cache_dir else None
        if path is not None and path.exists():
            self.M = np.load(path)["M"]
            self.cache_hit = True
        elif self.eta == 0:
            # S is the identity on an orthonormal basis
            self.M = np.eye(trunc.size)
        else:
            Bs = basis_matrix(trunc, self.eta, X, Y, smooth=True, maps=self.maps)
            w = self.rule.weights.ravel()
            self.M = (self.B.T @ sparse.diags(w) @ Bs).toarray()
        if cache_dir and not self.cache_hit:
            self.save(cache_dir)
        self._factor()

    def cache_path(self, cache_dir) -> Path:
        return frame_cache_path(self.trunc, self.eta, cache_dir, self.rule)

    def save(self, cache_dir) -> Path:
        """Write M to the cache unless it is already there."""
        path = self.cache_path(cache_dir)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                np.savez(fh, M=self.M)
        return path

    def _factor(self):
        n = self.M.shape[0]
        self.deviation = float(np.linalg.norm(self.M - np.eye(n), 2)) if n else 0.0
        self.cond = float(np.linalg.cond(self.M)) if n else 1.0
        if not np.isfinite(self.cond) or self.cond > COND_LIMIT:
            raise FrameDegenerate(f"frame matrix condition number {self.cond:.3g} exceeds "
                                  f"{COND_LIMIT:g}; eta={self.eta} is too large")
        self.lu = sla.lu_factor(self.M)

    def perturbed(self, i: int, j: int, delta: float) -> "FrameMatrix":
        """Copy with one matrix entry changed (fault injection)."""
        other = object.__new__(FrameMatrix)
        other.__dict__.update(self.__dict__)
        other.M = self.M.copy()
        other.M[i, j] += delta
        other._factor()
        return other

    @property
    def size(self) -> int:
        return self.trunc.size

    def sample(self, f) -> np.ndarray:
        if callable(f):
            X, Y = self.rule.mesh()
            return np.asarray(f(X, Y)).ravel()
        v = np.asarray(f)
        if v.size != self.rule.size:
            raise InvalidParameter("sample array does not match the frame quadrature rule")
        return v.ravel()

    def analysis(self, f) -> np.ndarray:
        """<f, b_j> for every basis element, by the frame quadrature rule on U."""
        v = self.sample(f)
        return self.B.T @ (self.rule.weights.ravel() * v)

    def solve(self, rhs, method: str = "direct", tol: float = 1e-12, max_iter: int = 10000):
        rhs = np.asarray(rhs)
        if method == "direct":
            if np.iscomplexobj(rhs):
                return sla.lu_solve(self.lu, rhs.real) + 1j * sla.lu_solve(self.lu, rhs.imag)
            return sla.lu_solve(self.lu, rhs)
        if method == "neumann":
            # M^{-1} = sum_k (I - M)^k
            term = rhs.copy()
            out = rhs.copy()
            scale = max(np.abs(rhs).max(), 1e-300)
            for _ in range(max_iter):
                term = term - self.M @ term
                out = out + term
                if np.abs(term).max() <= tol * scale:
                    return out
            raise FrameDegenerate("Neumann series did not converge; ||I - M|| too large")
        raise InvalidParameter(f"unknown solve method {method!r}")

    def coefficients(self, f, method: str = "direct", tol: float = 1e-12) -> CoeffVector:
        return CoeffVector(self.trunc, self.solve(self.analysis(f), method, tol))

    def expansion(self, coeffs, smooth: bool = True, mask=None) -> Expansion:
        c = coeffs.values if isinstance(coeffs, CoeffVector) else np.asarray(coeffs)
        if mask is not None:
            c = np.where(mask, c, 0)
        parts = []
        for lvl, C in zip(self.levels, self.maps):
            cell = C @ c
            if np.any(cell):
                parts.append(LevelExpansion(lvl, cell))
        return Expansion(parts, smooth)

    def element(self, i: int, smooth: bool = True) -> Expansion:
        e = np.zeros(self.size)
        e[i] = 1.0
        return self.expansion(e, smooth)

    def scale_mask(self, s: int) -> np.ndarray:
        mask = np.zeros(self.size, bool)
        mask[self.trunc.scale_slice(s)] = True
        return mask

    def square_mask(self, Q: DyadicSquare) -> np.ndarray:
        i = self.trunc.index(Q, 0)
        mask = np.zeros(self.size, bool)
        mask[i: i + 3 * self.trunc.m] = True
        return mask


def frame_cache_path(trunc: TruncationSpec, eta: float, cache_dir, rule=None) -> Path:
    rule = rule or frame_rule(trunc, float(eta))
    key = hashlib.sha1(f"{trunc.key()}_eta{float(eta)!r}_rule{rule.shape}".encode())
    return Path(cache_dir) / f"frame_{key.hexdigest()[:16]}.npz"


_FRAMES: dict = {}


def frame_matrix(trunc: TruncationSpec, eta: float = DEFAULT_ETA, kappa: int | None = None,
                 cache_dir=None) -> FrameMatrix:
    """Memoized FrameMatrix; ``kappa`` must agree with the truncation when given."""
    if kappa is not None and kappa != trunc.kappa:
        raise ConfigurationError("kappa does not match the truncation")
    key = (trunc, float(eta))
    if key not in _FRAMES:
        _FRAMES[key] = FrameMatrix(trunc, eta, cache_dir)
    elif cache_dir:
        # a memo hit still leaves the on-disk cache populated
        _FRAMES[key].save(cache_dir)
    return _FRAMES[key]


def pseudoproject(f, I: DyadicSquare, fm: FrameMatrix, coeffs: CoeffVector | None = None) -> Expansion:
    """sum_a fhat_a(I) h^{a,eta}_I."""
    mask = fm.square_mask(I)
    c = coeffs if coeffs is not None else fm.coefficients(f)
    return fm.expansion(c, mask=mask)


def project_scale(f, s: int, U: DyadicSquare, fm: FrameMatrix,
                  coeffs: CoeffVector | None = None) -> Expansion:
    """Q_{s,U} f: pseudoprojections summed over the scale-s squares of U."""
    if s not in fm.trunc.scales:
        raise OutOfRange(f"scale {s} outside the truncation")
    c = coeffs if coeffs is not None else fm.coefficients(f)
    mask = np.zeros(fm.size, bool)
    for Q in squares_at_scale(U.grid, s, U):
        mask |= fm.square_mask(Q)
    return fm.expansion(c, mask=mask)


def fine_points(expansion_or_bounds, features=((), ()), n: int = 257):
    """Uniform grid over the bounds together with strip-adapted quadrature nodes."""
    if isinstance(expansion_or_bounds, Expansion):
        bounds = expansion_or_bounds.bounds()
        features = expansion_or_bounds.features()
    else:
        bounds = expansion_or_bounds
    x0, x1, y0, y1 = bounds
    gx, gy = np.linspace(x0, x1, n), np.linspace(y0, y1, n)
    r = tensor_rule(bounds, *features)
    xs = np.concatenate([gx, r.x.nodes])
    ys = np.concatenate([gy, r.y.nodes])
    return np.meshgrid(np.unique(xs), np.unique(ys), indexing="ij")


def sup_norm(fn, bounds, features=((), ()), n: int = 257) -> float:
    X, Y = fine_points(bounds, features, n)
    return float(np.abs(fn(X, Y)).max())


def reconstruct(f, fm: FrameMatrix, method: str = "direct", tol: float = 1e-12,
                points=None):
    """(smoothed expansion of f, sup-norm residual on a fine grid over the support)."""
    c = fm.coefficients(f, method, tol)
    rec = fm.expansion(c)
    if points is None:
        points = fine_points(rec if rec.parts else fm.trunc.U.bounds)
    X, Y = points
    fv = f(X, Y) if callable(f) else None
    if fv is None:
        raise InvalidParameter("reconstruct residual needs a callable f")
    res = float(np.abs(rec(X, Y) - fv).max()) if X.size else 0.0
    return rec, res


def span_reconstruction(fm: FrameMatrix, coeffs, method: str = "direct", tol: float = 1e-12,
                        n: int = 257) -> np.ndarray:
    """Sup residuals of reconstruct for many smoothed span elements at once.

    Column k of ``coeffs`` defines f_k = sum_i coeffs[i, k] b_i^eta; the basis matrices are
    evaluated once, so each extra function costs a few matrix products.
    """
    C0 = np.atleast_2d(np.asarray(coeffs, float).T).T
    X, Y = fm.rule.mesh()
    F = basis_matrix(fm.trunc, fm.eta, X, Y, smooth=True, maps=fm.maps) @ C0
    A = fm.B.T @ (fm.rule.weights.ravel()[:, None] * F)
    C = np.column_stack([fm.solve(A[:, k], method, tol) for k in range(A.shape[1])])
    probe = fm.expansion(np.ones(fm.size))
    Xf, Yf = fine_points(probe, n=n)
    Bf = basis_matrix(fm.trunc, fm.eta, Xf.ravel(), Yf.ravel(), smooth=True, maps=fm.maps)
    return np.abs(Bf @ C - Bf @ C0).max(axis=0)


def _square_level_matrices(fm: FrameMatrix, X, Y) -> list:
    """Per wavelet level: (scale, point-by-parent-square evaluation map) pieces."""
    out = []
    m = fm.trunc.m
    for li, (lvl, C) in enumerate(zip(fm.levels, fm.maps)):
        if li == 0:
            continue
        s = fm.trunc.U.scale + li - 1
        n = lvl.nx
        cols = np.arange(lvl.ncols)
        cidx = cols // m
        ci, cj = cidx // n, cidx % n
        parent = (ci // 2) * (n // 2) + (cj // 2)
        out.append((s, C, eval_matrix(lvl, X, Y, smooth=True), cols, parent, (n // 2) ** 2,
                    lvl.ncols))
    return out


def _square_values(fm: FrameMatrix, v: np.ndarray, X, Y, levels, coarse=None) -> np.ndarray:
    m = fm.trunc.m
    if coarse is None:
        coarse = fm.expansion(np.where(np.arange(fm.size) < m, v, 0))(X, Y).ravel()
    total = np.abs(coarse) ** 2
    for s, C, S, cols, parent, nsq, ncols in levels:
        cell = C @ np.where(fm.scale_mask(s), v, 0)
        # group cell columns by parent square
        G = sparse.csr_matrix((cell, (cols, parent)), shape=(ncols, nsq))
        per_sq = S @ G
        total += np.asarray(abs(per_sq).power(2).sum(axis=1)).ravel()
    return np.sqrt(total)


def square_function_values(f, fm: FrameMatrix, X, Y, coeffs: CoeffVector | None = None):
    """(sum over squares of |pseudoprojection|^2, including the coarse term)^(1/2) at (X, Y)."""
    c = coeffs if coeffs is not None else fm.coefficients(f)
    vals = _square_values(fm, c.values, X, Y, _square_level_matrices(fm, X, Y))
    return vals.reshape(np.shape(X))


def span_square_ratios(fm: FrameMatrix, coeffs, p: float = 2.0) -> np.ndarray:
    """||square function||_p / ||f||_p for many smoothed span elements (columns of coeffs).

    Same rule and quantities as square_function, with the evaluation matrices built once.
    """
    C0 = np.atleast_2d(np.asarray(coeffs, float).T).T
    probe = fm.expansion(np.ones(fm.size))
    r = tensor_rule(probe.bounds(), *probe.features())
    X, Y = r.mesh()
    Bs = basis_matrix(fm.trunc, fm.eta, X, Y, smooth=True, maps=fm.maps)
    F = Bs @ C0
    A = fm.B.T @ (fm.rule.weights.ravel()[:, None] * (
        basis_matrix(fm.trunc, fm.eta, *fm.rule.mesh(), smooth=True, maps=fm.maps) @ C0))
    levels = _square_level_matrices(fm, X, Y)
    coarse_mask = (np.arange(fm.size) < fm.trunc.m)[:, None]
    out = np.zeros(C0.shape[1])
    for k in range(C0.shape[1]):
        v = fm.solve(A[:, k])
        sf = _square_values(fm, v, X, Y, levels, Bs @ np.where(coarse_mask[:, 0], v, 0))
        fv = F[:, k]
        if p == math.inf:
            a, b = np.abs(sf).max(), np.abs(fv).max()
        else:
            a = r.integrate(np.abs(sf) ** p) ** (1 / p)
            b = r.integrate(np.abs(fv) ** p) ** (1 / p)
        out[k] = a / b if b > 0 else 0.0
    return out


@dataclass
class SquareFunctionResult:
    X: np.ndarray
    Y: np.ndarray
    values: np.ndarray
    ratios: dict


def square_function(f, fm: FrameMatrix, ps=(2,), coeffs=None) -> SquareFunctionResult:
    """Square function on a strip-adapted rule, with ||SF||_p / ||f||_p ratios."""
    c = coeffs if coeffs is not None else fm.coefficients(f)
    rec = fm.expansion(c)
    bounds = rec.bounds() if rec.parts else fm.trunc.U.bounds
    fx, fy = rec.features() if rec.parts else ((), ())
    r = tensor_rule(bounds, fx, fy)
    X, Y = r.mesh()
    sf = square_function_values(f, fm, X, Y, c)
    fv = np.asarray(f(X, Y)) if callable(f) else rec(X, Y)
    ratios = {}
    for p in ps:
        if p == math.inf:
            a, b = np.abs(sf).max(), np.abs(fv).max()
        else:
            a = r.integrate(np.abs(sf) ** p) ** (1 / p)
            b = r.integrate(np.abs(fv) ** p) ** (1 / p)
        ratios[p] = float(a / b) if b > 0 else 0.0
    return SquareFunctionResult(X, Y, sf, ratios)


def dilate_Lp(f, m: int, p: float):
    """delta_{m,p} f(x) = 2^{-2m/p} f(x / 2^m); exact level dilation for expansions."""
    if not (p > 1):
        raise InvalidParameter("p must lie in (1, inf]")
    amp = 1.0 if p == math.inf else 2.0 ** (-2 * m / p)
    if m == 0:
        return f
    if isinstance(f, Expansion):
        parts = [LevelExpansion(pt.level.dilated(m), amp * pt.coef) for pt in f.parts]
        return Expansion(parts, f.smooth)
    s = math.ldexp(1.0, -m)
    return lambda X, Y: amp * f(np.asarray(X) * s, np.asarray(Y) * s)


def verify_dilation_commutation(I: DyadicSquare, m: int, p: float, f, fm: FrameMatrix,
                                fm_dilated: FrameMatrix | None = None, center=(0, 0)) -> float:
    """Sup residual of delta(pseudoproject_G(f, I)) - pseudoproject_{2^mG}(delta f, 2^m I)."""
    target = fm.trunc.dilated(m, center)
    if fm_dilated is None:
        fm_dilated = frame_matrix(target, fm.eta)
    if fm_dilated.trunc != target or fm_dilated.eta != fm.eta:
        raise ConfigurationError("dilated truncation does not match 2^m of the base truncation")
    lhs = dilate_Lp(pseudoproject(f, I, fm), m, p)
    rhs = pseudoproject(dilate_Lp(f, m, p), dilate_square(I, m, center), fm_dilated)
    X, Y = fine_points(lhs if lhs.parts else rhs)
    return float(np.abs(lhs(X, Y) - rhs(X, Y)).max())


def sup_norm_penalty_check(f, s: int, r: float, fm: FrameMatrix, coeffs=None) -> float:
    """||Q_{s,U} f||_inf / 2^{2s/r}."""
    q = project_scale(f, s, fm.trunc.U, fm, coeffs)
    if not q.parts:
        return 0.0
    X, Y = fine_points(q)
    return float(np.abs(q(X, Y)).max()) / 2.0 ** (2 * s / r)


def span_function(fm: FrameMatrix, rng: np.random.Generator, smooth: bool = True) -> Expansion:
    """Random element of the (smoothed) truncated span, standard normal coefficients."""
    return fm.expansion(rng.standard_normal(fm.size), smooth)
