"""Fourier extension operator on the paraboloid patch Phi(x) = (x1, x2, |x|^2).

E f(xi) = int e^{-i Phi(x).xi} f(x) dx, evaluated by the tensor quadrature of a
Field2D.  For axis-aligned lattices each xi3 slice is a separable transform:
with G the weighted sample matrix and D3 = e^{-i xi3 x^2},

    E f(., ., xi3) = (E1 D3x) G (E2 D3y)^T,

and G is replaced by its numerically exact low-rank SVD factors, so a slice
costs O((n1 + n2) n r + n1 n2 r) instead of O(n1 n2 nx ny).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .dyadic import DyadicSquare
from .errors import InvalidParameter, ResolutionError
from .quadrature import Field2D

XI_CAP = 2.0 ** 12
MAX_SPACING = 0.25
SVD_TOL = 1e-14
NORM_RANK_TOL = 1e-10
EXT_STRIP_ORDER = 8
MATERIALIZE_LIMIT = 20_000_000


def phi_map(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.stack([x, y, x * x + y * y], axis=-1)


def phase(x, xi) -> float:
    """xi . Phi(x)."""
    x1, x2 = x
    return xi[0] * x1 + xi[1] * x2 + xi[2] * (x1 * x1 + x2 * x2)


def _check_resolution(f: Field2D, radius: float, cap: float):
    if radius > cap * (1 + 1e-12):
        raise ResolutionError(f"|xi| = {radius:.6g} exceeds the configured cap {cap:.6g}")
    if radius > f.xi_max * (1 + 1e-12):
        raise ResolutionError(f"|xi| = {radius:.6g} exceeds the field's resolved "
                              f"frequency {f.xi_max:.6g}; resample with a larger xi_max")


def _direct(f: Field2D, xi: np.ndarray, sign: int = -1, chunk: int = 2048) -> np.ndarray:
    xi = np.atleast_2d(np.asarray(xi, float))
    xs, ys = f.rule.x.nodes, f.rule.y.nodes
    G = f.weighted()
    out = np.empty(len(xi), complex)
    for a in range(0, len(xi), chunk):
        z = xi[a: a + chunk]
        ax = np.exp(sign * 1j * (np.outer(z[:, 0], xs) + np.outer(z[:, 2], xs * xs)))
        ay = np.exp(sign * 1j * (np.outer(z[:, 1], ys) + np.outer(z[:, 2], ys * ys)))
        out[a: a + chunk] = np.einsum("nk,nk->n", ax, ay @ G.T)
    return out


def extend(f: Field2D, xi, cap: float = XI_CAP) -> complex | np.ndarray:
    """E f at one frequency (or an (N, 3) array of them)."""
    arr = np.asarray(xi, float)
    pts = np.atleast_2d(arr)
    if pts.size:
        _check_resolution(f, float(np.linalg.norm(pts, axis=1).max()), cap)
    vals = _direct(f, pts)
    return complex(vals[0]) if arr.ndim == 1 else vals


def extend_localized(f: Field2D, I: DyadicSquare, xi, cap: float = XI_CAP):
    """T_I f(xi) = e^{-i Phi(c_I).xi} int_I e^{+i xi.Phi(y)} f(y) dy."""
    arr = np.asarray(xi, float)
    pts = np.atleast_2d(arr)
    if pts.size:
        _check_resolution(f, float(np.linalg.norm(pts, axis=1).max()), cap)
    g = restrict(f, I)
    vals = _direct(g, pts, sign=+1)
    c = I.center
    pre = np.exp(-1j * (pts[:, 0] * c[0] + pts[:, 1] * c[1] + pts[:, 2] * (c[0] ** 2 + c[1] ** 2)))
    out = pre * vals
    return complex(out[0]) if arr.ndim == 1 else out


def restrict(f: Field2D, I: DyadicSquare) -> Field2D:
    """1_I f on the same rule (exact when I's sides are rule breakpoints)."""
    x0, x1, y0, y1 = I.bounds
    xs, ys = f.rule.x.nodes, f.rule.y.nodes
    mx = (xs >= x0) & (xs < x1)
    my = (ys >= y0) & (ys < y1)
    return f.with_values(f.values * np.outer(mx, my), label=f"{f.label}|{I}")


def modulate(f: Field2D, z) -> Field2D:
    """(M_z f)(x) = e^{i <z, Phi(x)>} f(x); E(M_z f)(xi) = E f(xi - z).

    The returned field resolves |xi - z| <= f.xi_max, so its xi_max is
    reduced by |z| to stay conservative for absolute frequencies.
    """
    z = np.asarray(z, float)
    X, Y = f.rule.mesh()
    mult = np.exp(1j * (z[0] * X + z[1] * Y + z[2] * (X * X + Y * Y)))
    src = None
    if f.source is not None:
        s0 = f.source
        src = lambda A, B: np.exp(1j * (z[0] * A + z[1] * B + z[2] * (A * A + B * B))) * s0(A, B)  # noqa: E731
    return Field2D(f.rule, f.values * mult, max(0.0, f.xi_max - float(np.linalg.norm(z))),
                   src, f.features, f.label + "~mod", f.strip_order)


# ---------------------------------------------------------------- lattices


@dataclass(frozen=True)
class FreqGrid:
    """Lattice h Z^3 restricted to a region.

    kind: 'ball' (|xi| <= R), 'shell' (R_in < |xi| <= R), or 'points'
    (explicit list, used for spot checks).
    """

    kind: str
    h: float
    R: float = 0.0
    R_in: float = 0.0
    explicit: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("ball", "shell", "points"):
            raise InvalidParameter(f"unknown region {self.kind!r}")
        if self.kind != "points" and self.h > MAX_SPACING:
            raise ResolutionError(f"lattice spacing {self.h} exceeds {MAX_SPACING}")

    @classmethod
    def ball(cls, R: float, h: float = MAX_SPACING) -> "FreqGrid":
        return cls("ball", h, R)

    @classmethod
    def local_ball(cls, s: int, delta: float, h: float = MAX_SPACING) -> "FreqGrid":
        """B_delta(0, 2^s): the ball of radius 2^{s/(1-delta)}."""
        return cls("ball", h, local_radius(s, delta))

    @classmethod
    def shell(cls, R_in: float, R_out: float, h: float = MAX_SPACING) -> "FreqGrid":
        if not R_out > R_in:
            raise InvalidParameter("shell needs R_out > R_in")
        return cls("shell", h, R_out, R_in)

    @classmethod
    def points(cls, pts) -> "FreqGrid":
        pts = np.atleast_2d(np.asarray(pts, float))
        return cls("points", 0.0, float(np.linalg.norm(pts, axis=1).max()) if pts.size else 0.0,
                   0.0, pts)

    @property
    def max_radius(self) -> float:
        return self.R

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @property
    def N(self) -> int:
        return int(math.floor(self.R / self.h + 1e-9))

    def _keep(self, r2):
        R2 = self.R * self.R * (1 + 1e-14)
        if self.kind == "ball":
            return r2 <= R2
        return (r2 <= R2) & (r2 > self.R_in * self.R_in * (1 + 1e-14))

    def slices(self) -> Iterator[tuple[float, np.ndarray, np.ndarray, np.ndarray]]:
        """(xi3, n1 range, n2 range, mask) per xi3 slice, xi3 ascending."""
        N, h = self.N, self.h
        for n3 in range(-N, N + 1):
            x3 = n3 * h
            rho2 = self.R * self.R - x3 * x3
            if rho2 < 0:
                continue
            M = int(math.floor(math.sqrt(rho2) / h + 1e-9))
            n = np.arange(-M, M + 1)
            r2 = (n[:, None] ** 2 + n[None, :] ** 2) * h * h + x3 * x3
            mask = self._keep(r2)
            if mask.any():
                yield x3, n, n, mask

    def count(self) -> int:
        if self.kind == "points":
            return len(self.explicit)
        return int(sum(m.sum() for *_, m in self.slices()))

    def points_array(self) -> np.ndarray:
        if self.kind == "points":
            return self.explicit
        out = []
        for x3, n1, n2, mask in self.slices():
            i, j = np.nonzero(mask)
            out.append(np.stack([n1[i] * self.h, n2[j] * self.h, np.full(i.size, x3)], axis=1))
        return np.concatenate(out) if out else np.zeros((0, 3))

    def describe(self) -> dict:
        return {"region": self.kind, "h_xi": self.h, "R": self.R, "R_in": self.R_in}


def local_radius(s: float, delta: float) -> float:
    if not 0 <= delta < 1:
        raise InvalidParameter("delta must lie in [0, 1)")
    return 2.0 ** (s / (1.0 - delta))


def _support(W: np.ndarray, axis: int) -> tuple[int, int]:
    nz = np.flatnonzero(np.any(W != 0, axis=axis))
    return (int(nz[0]), int(nz[-1]) + 1) if nz.size else (0, 1)


class SliceEngine:
    """Low-rank separable transform for fields sharing one tensor rule.

    sign = -1 gives E; sign = +1 the conjugate-phase integral used by T_I.
    ``shift`` = (cx, cy) replaces x^2 by x^2 + cx x in the xi3 phase.
    Each field is factored on the node window where its samples are nonzero,
    so fields localized to a sub-square only pay for their own nodes.
    """

    def __init__(self, fields: Sequence[Field2D], h: float, sign: int = -1, shift=(0.0, 0.0),
                 precision: str = "double", rank_tol: float = SVD_TOL):
        if not fields:
            raise InvalidParameter("no fields")
        rule = fields[0].rule
        for f in fields[1:]:
            if f.rule.shape != rule.shape or not (
                    np.array_equal(f.rule.x.nodes, rule.x.nodes)
                    and np.array_equal(f.rule.y.nodes, rule.y.nodes)):
                raise InvalidParameter("batched fields must share one quadrature rule")
        self.rule = rule
        self.h = h
        self.sign = sign
        self.ctype = np.complex64 if precision == "single" else np.complex128
        self.xs = rule.x.nodes
        self.ys = rule.y.nodes
        self.qx = self.xs ** 2 + shift[0] * self.xs
        self.qy = self.ys ** 2 + shift[1] * self.ys
        self.real = all(not np.iscomplexobj(f.values) or not np.any(f.values.imag) for f in fields)
        self.factors = []
        for f in fields:
            W = f.weighted()
            rx, ry = _support(W, 1), _support(W, 0)
            U, S, Vh = np.linalg.svd(W[rx[0]:rx[1], ry[0]:ry[1]].astype(complex),
                                     full_matrices=False)
            k = int(np.sum(S > rank_tol * S[0])) if S.size and S[0] > 0 else 0
            k = max(k, 1)
            self.factors.append((rx, ry, (U[:, :k] * S[:k]).astype(self.ctype),
                                 Vh[:k].T.astype(self.ctype)))
        self.ranks = [u.shape[1] for _, _, u, _ in self.factors]

    def _axis(self, n, t, q, x3, off):
        ph = self.h * np.outer(n, t) + (x3 * q + off * t)[None, :]
        return np.exp(self.sign * 1j * ph).astype(self.ctype)

    def blocks(self, x3: float, n1: np.ndarray, n2: np.ndarray, offset=(0.0, 0.0)) -> list[np.ndarray]:
        """Values at (offset1 + h n1, offset2 + h n2, x3), one (len n1, len n2) block per field."""
        Ax = self._axis(n1, self.xs, self.qx, x3, offset[0])
        Ay = self._axis(n2, self.ys, self.qy, x3, offset[1])
        out = []
        for rx, ry, US, V in self.factors:
            A = Ax[:, rx[0]:rx[1]] @ US
            B = Ay[:, ry[0]:ry[1]] @ V
            out.append(A @ B.T)
        return out


class ExtensionField:
    """Values of E f (or of a batch of fields) on a FreqGrid, computed slice by slice."""

    def __init__(self, fields, grid: FreqGrid, sign: int = -1, precision: str = "double",
                 cap: float = XI_CAP, provenance: dict | None = None,
                 rank_tol: float = SVD_TOL):
        self.rank_tol = rank_tol
        self.single = isinstance(fields, Field2D)
        self.fields = [fields] if self.single else list(fields)
        self.grid = grid
        self.sign = sign
        self.precision = precision
        self.provenance = provenance or {}
        for f in self.fields:
            _check_resolution(f, grid.max_radius, cap)
        self._values = None

    def engine(self) -> SliceEngine:
        return SliceEngine(self.fields, self.grid.h, self.sign, precision=self.precision,
                           rank_tol=self.rank_tol)

    def iter_slices(self):
        """Yields (xi3, n1, n2, mask, [block per field])."""
        if self.grid.kind == "points":
            pts = self.grid.explicit
            yield None, None, None, None, [_direct(f, pts, self.sign) for f in self.fields]
            return
        eng = self.engine()
        for x3, n1, n2, mask in self.grid.slices():
            yield x3, n1, n2, mask, eng.blocks(x3, n1, n2)

    def weighted_slices(self):
        """Like iter_slices but yields (multiplicity, mask, blocks).

        When every field is real, |value(-xi)| = |value(xi)| and the grid is
        symmetric, so only xi3 >= 0 is computed and xi3 > 0 counts twice.
        """
        if self.grid.kind == "points":
            for *_, mask, blocks in self.iter_slices():
                yield 1, mask, blocks
            return
        eng = self.engine()
        for x3, n1, n2, mask in self.grid.slices():
            if eng.real and x3 < 0:
                continue
            mult = 2 if eng.real and x3 > 0 else 1
            yield mult, mask, eng.blocks(x3, n1, n2)

    def values_list(self) -> list[np.ndarray]:
        if self._values is None:
            if self.grid.kind != "points" and self.grid.count() * len(self.fields) > MATERIALIZE_LIMIT:
                raise ResolutionError("grid too large to materialize; use iter_slices")
            acc = [[] for _ in self.fields]
            for *_, mask, blocks in self.iter_slices():
                for a, b in zip(acc, blocks):
                    a.append(b if mask is None else b[mask])
            self._values = [np.concatenate(a) if a else np.zeros(0, complex) for a in acc]
        return self._values

    @property
    def values(self) -> np.ndarray:
        v = self.values_list()
        return v[0] if self.single else np.stack(v)

    @property
    def points(self) -> np.ndarray:
        return self.grid.points_array()

    def power_sums(self, q: float) -> np.ndarray:
        """sum |value|^q over the grid, per field, streaming."""
        tot = np.zeros(len(self.fields))
        for mult, mask, blocks in self.weighted_slices():
            for k, b in enumerate(blocks):
                tot[k] += mult * abs_power_sum(b if mask is None else b[mask], q)
        return tot

    def to_csv(self, path, index: int = 0):
        pts = self.points
        vals = self.values_list()[index]
        with open(path, "w") as fh:
            fh.write("xi1,xi2,xi3,re,im\n")
            for p, v in zip(pts, vals):
                fh.write(f"{p[0]:.17g},{p[1]:.17g},{p[2]:.17g},{v.real:.17g},{v.imag:.17g}\n")

    def to_binary(self, path, index: int = 0):
        pts = self.points
        vals = self.values_list()[index]
        rec = np.empty(len(pts), dtype=[("xi", "<f8", 3), ("val", "<c16")])
        rec["xi"] = pts
        rec["val"] = vals
        rec.tofile(path)


def abs_power_sum(v: np.ndarray, q: float) -> float:
    """sum |v|^q, using squared moduli for even integer q."""
    a2 = v.real.astype(float) ** 2 + v.imag.astype(float) ** 2
    if q == 4:
        return float(np.sum(a2 * a2))
    if q == 2:
        return float(np.sum(a2))
    return float(np.sum(a2 ** (q / 2)))


def extend_grid(f, grid: FreqGrid, precision: str = "double", cap: float = XI_CAP) -> ExtensionField:
    return ExtensionField(f, grid, -1, precision, cap, {"op": "E"})


def refinement_check(f: Field2D, xis, factor: int = 2) -> float:
    """max |E f - E f_refined| / ||f||_1 over the given frequencies."""
    g = f.refined(factor)
    a = _direct(f, xis)
    b = _direct(g, xis)
    scale = max(g.l1(), 1e-300)
    return float(np.abs(a - b).max() / scale)
