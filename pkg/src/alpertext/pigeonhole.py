"""Single-scale pigeonholing over lattice balls: bump kernels, weights and case analysis.

The localized transforms T_I f(xi) = e^{-i Phi(c_I).xi} int_I e^{i xi.Phi(y)} f(y) dy
have frequency content inside B(0, 2^-lam) when side(I) = 2^-lam, so they are
reproduced by convolution with rho_lam, whose transform is 1 on that ball.
Weights w_I^a average |T_I f| against zeta_lam around lattice points a of
spacing 2^lam; each lattice point is then classified by whether three
well-separated squares carry near-maximal weight.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .dyadic import (DyadicSquare, center_distance_sq, freq_lattice, separated_triples,
                     squares_at_scale)
from .errors import InvalidExponent, InvalidParameter, PreconditionError, ResolutionError
from .extension import SliceEngine, _direct, extend_localized, restrict
from .parallel import pmap
from .quadrature import Field2D, gauss_legendre, sample

WEIGHT_RADIUS = 8          # weight integrals truncated at |z - a| <= 8 * 2^lam
WEIGHT_STEP = 4            # weight lattice spacing 2^lam / 4
REPRO_RADIUS = 24          # reproducing convolution truncated at |z| <= 24 * 2^lam
REPRO_STEP = 2             # reproducing lattice spacing 2^lam / 2
PROFILE_RMAX = 64.0
PROFILE_STEP = 1.0 / 64
TIE_DIGITS = 12           # weight ratios equal to 12 decimals count as ties


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, float)
    g = lambda u: np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)  # noqa: E731
    a, b = g(t), g(1.0 - t)
    return a / (a + b)


def _k_rule(kmax: float, panels: int = 400, order: int = 16):
    g, w = gauss_legendre(order)
    edges = np.linspace(0.0, kmax, panels + 1)
    h = np.diff(edges)
    k = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1)).ravel()
    wk = (0.5 * h[:, None] * w[None, :]).ravel()
    return k, wk


@dataclass
class BumpKernel:
    """Radial rho with rho_hat = 1 on B(0, flat), decaying smoothly to 0 at flat + width."""

    flat: float
    width: float
    r: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)
    decay_C8: float = 0.0

    def __post_init__(self):
        self._spline = CubicSpline(self.r, self.profile)

    @property
    def cutoff(self) -> float:
        return self.flat + self.width

    def rho_hat(self, k):
        return 1.0 - smooth_step((np.asarray(k, float) - self.flat) / self.width)

    def __call__(self, r):
        r = np.abs(np.asarray(r, float))
        out = np.zeros_like(r)
        inside = r <= self.r[-1]
        out[inside] = self._spline(r[inside])
        return out

    def scaled(self, lam: int, z):
        """rho_lam(z) = 2^{-3 lam} rho(z / 2^lam) for an array of 3-vectors."""
        s = 2.0 ** lam
        return self(np.linalg.norm(np.asarray(z, float), axis=-1) / s) / s ** 3

    def forward(self, k) -> np.ndarray:
        """rho_hat recomputed from the sampled profile: (4 pi / k) int r rho(r) sin(k r) dr."""
        k = np.atleast_1d(np.asarray(k, float))
        g, w = gauss_legendre(16)
        edges = np.linspace(0.0, self.r[-1], 2049)
        h = np.diff(edges)
        rr = (edges[:-1, None] + 0.5 * h[:, None] * (g[None, :] + 1)).ravel()
        wr = (0.5 * h[:, None] * w[None, :]).ravel()
        vals = self(rr) * rr * wr
        out = np.empty_like(k)
        for i, kk in enumerate(k):
            if kk == 0:
                out[i] = 4 * np.pi * np.sum(vals * rr)
            else:
                out[i] = 4 * np.pi / kk * np.sum(vals * np.sin(kk * rr))
        return out

    def integral(self) -> float:
        return float(self.forward([0.0])[0])


@lru_cache(maxsize=None)
def build_bump(flat: float = 1.0, width: float = 1.0, r_max: float = PROFILE_RMAX,
               dr: float = PROFILE_STEP) -> BumpKernel:
    """rho(r) = (1 / (2 pi^2 r)) int_0^inf k rho_hat(k) sin(k r) dk on a radial grid."""
    if flat <= 0 or width <= 0:
        raise InvalidParameter("flat radius and transition width must be positive")
    k, wk = _k_rule(flat + width)
    tmp = BumpKernel.__new__(BumpKernel)
    tmp.flat, tmp.width = flat, width
    rh = tmp.rho_hat(k) * wk
    r = np.arange(0.0, r_max + dr / 2, dr)
    prof = np.empty_like(r)
    prof[0] = np.sum(k * k * rh) / (2 * np.pi ** 2)
    for a in range(1, len(r), 256):
        rr = r[a: a + 256]
        prof[a: a + 256] = (np.sin(np.outer(rr, k)) @ (k * rh)) / (2 * np.pi ** 2 * rr)
    C8 = float(np.max(np.abs(prof) * (1 + r) ** 8))
    return BumpKernel(flat, width, r, prof, C8)


@dataclass
class ZetaKernel:
    """zeta(w) = sup_{|w' - w| <= 1} |rho(w')|, made non-increasing beyond radius 1."""

    bump: BumpKernel
    r: np.ndarray = field(repr=False)
    profile: np.ndarray = field(repr=False)

    def __call__(self, r):
        r = np.abs(np.asarray(r, float))
        return np.interp(r, self.r, self.profile, right=0.0)

    def scaled(self, lam: int, w):
        s = 2.0 ** lam
        return self(np.linalg.norm(np.asarray(w, float), axis=-1) / s) / s ** 3

    def integral(self, lam: int = 0) -> float:
        """int zeta_lam over R^3 by radial quadrature on the scaled profile grid."""
        s = 2.0 ** lam
        rr = self.r * s
        vals = 4 * np.pi * rr ** 2 * self.profile / s ** 3
        return float(trapezoid(vals, rr))


def build_zeta(bump: BumpKernel) -> ZetaKernel:
    r = bump.r
    a = np.abs(bump.profile)
    n = int(round(1.0 / (r[1] - r[0])))
    pad = np.concatenate([np.full(n, a[0]), a, np.zeros(n)])
    win = np.lib.stride_tricks.sliding_window_view(pad, 2 * n + 1).max(axis=1)
    beyond = r >= 1.0
    tail = np.maximum.accumulate(win[beyond][::-1])[::-1]
    prof = win.copy()
    prof[beyond] = tail
    return ZetaKernel(bump, r, prof)


def lattice_overlap(zeta: ZetaKernel, lam: int, zs) -> np.ndarray:
    """2^{3 lam} sum_{a in 2^lam Z^3} zeta_lam(z - a) at the given points."""
    s = 2.0 ** lam
    K = int(math.ceil(zeta.r[-1])) + 2
    g = np.arange(-K, K + 1)
    A = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3) * s
    out = []
    for z in np.atleast_2d(zs):
        out.append(np.sum(zeta.scaled(lam, z[None, :] - A)) * s ** 3)
    return np.array(out)


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class PigeonholeParams:
    q: float
    alpha: float
    lam: int
    sep_const: float
    nu: float
    c: float
    mode: str
    s_min: int
    R: float | None = None

    @property
    def sep(self) -> float:
        return self.sep_const * 2.0 ** -self.lam

    @property
    def threshold(self) -> float:
        return 2.0 ** (-self.alpha * self.lam)

    def with_radius(self, s: float, delta: float) -> "PigeonholeParams":
        from .extension import local_radius
        return PigeonholeParams(self.q, self.alpha, self.lam, self.sep_const, self.nu, self.c,
                                self.mode, self.s_min, local_radius(s, delta))


def params_from_q(q: float, c: float = 1.0, mode: str = "desk", sep_const: float = 4.0,
                  lam: int = 3, alpha: float = 2.0) -> PigeonholeParams:
    """Separation parameters; 'paper-strict' derives lam from q, 'desk' uses the given lam."""
    if not q > 3:
        raise InvalidExponent(f"exponent q must exceed 3, got {q}")
    if math.isinf(q):
        a, b = 3.0, (c + 1) / 2
    else:
        a, b = 3 * q / (q - 3), (c + 1) * q / (2 * (q - 3))
    s_min = int(math.floor(b)) + 1
    if mode == "paper-strict":
        L = int(math.floor(max(a, b))) + 1
        return PigeonholeParams(q, 2.0, L, 2.0 ** 10, 2.0 ** (10 - L), c, mode, s_min)
    if mode != "desk":
        raise InvalidParameter(f"unknown mode {mode!r}")
    return PigeonholeParams(q, alpha, int(lam), float(sep_const), sep_const * 2.0 ** -lam, c,
                            mode, s_min)


# ---------------------------------------------------------------- transforms


def localized_field(f, U: DyadicSquare, lam: int, xi_max: float, strip_order: int = 8) -> Field2D:
    """Sample f on U with breakpoints on every scale-lam line, so restrictions to G_lam[U] are exact.

    ``f`` is an Expansion-like object (with features()) or a plain callable.
    """
    x0, x1, y0, y1 = U.bounds
    n = int(round((x1 - x0) * 2 ** lam))
    lx = [(x0 + k * (x1 - x0) / n, 0.0) for k in range(n + 1)]
    ly = [(y0 + k * (y1 - y0) / n, 0.0) for k in range(n + 1)]
    fx, fy = f.features() if hasattr(f, "features") else ([], [])
    return sample(f, U.bounds, list(fx) + lx, list(fy) + ly, xi_max=xi_max,
                  strip_order=strip_order)


def _require(f: Field2D, radius: float):
    if radius > f.xi_max * (1 + 1e-12):
        raise ResolutionError(f"frequencies up to {radius:.6g} needed but the field resolves "
                              f"only {f.xi_max:.6g}")


def _engine(f: Field2D, squares, h):
    return SliceEngine([restrict(f, I) for I in squares], h, sign=+1)


def abs_T_cube(f: Field2D, I: DyadicSquare, h: float, N: int, radius: float) -> np.ndarray:
    """|T_I f| on the cube h * {-N..N}^3, set to 0 outside the ball of the given radius."""
    _require(f, radius)
    eng = _engine(f, [I], h)
    n = np.arange(-N, N + 1)
    r2 = (n[:, None] ** 2 + n[None, :] ** 2) * h * h
    out = np.zeros((2 * N + 1,) * 3)
    R2 = radius * radius * (1 + 1e-12)
    for k, n3 in enumerate(n):
        keep = r2 + (n3 * h) ** 2 <= R2
        if keep.any():
            out[:, :, k] = np.where(keep, np.abs(eng.blocks(n3 * h, n, n)[0]), 0.0)
    return out


def _zeta_kernel_grid(zeta: ZetaKernel, lam: int, d: float, K: int) -> np.ndarray:
    g = np.arange(-K, K + 1) * d
    Z = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1)
    ker = zeta.scaled(lam, Z) * d ** 3
    ker[np.linalg.norm(Z, axis=-1) > WEIGHT_RADIUS * 2.0 ** lam * (1 + 1e-12)] = 0.0
    return ker


def _conv_same(A: np.ndarray, K: np.ndarray) -> np.ndarray:
    shape = [a + k - 1 for a, k in zip(A.shape, K.shape)]
    fshape = [sfft.next_fast_len(n, real=True) for n in shape]
    C = sfft.irfftn(sfft.rfftn(A, fshape) * sfft.rfftn(K, fshape), fshape)
    k = K.shape[0] // 2
    return C[k:k + A.shape[0], k:k + A.shape[1], k:k + A.shape[2]]


@dataclass
class WeightTable:
    lam: int
    R: float
    squares: list
    a_index: np.ndarray                  # integer lattice triples, a = 2^lam * n
    W: np.ndarray                        # (len(a), len(squares))
    label: str = ""
    comparability: tuple = (math.nan, math.nan)

    @property
    def a_points(self) -> np.ndarray:
        return self.a_index.astype(float) * 2.0 ** self.lam

    @property
    def wstar(self) -> np.ndarray:
        return self.W.max(axis=1) if self.W.size else np.zeros(len(self.a_index))

    @property
    def argmax(self) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lexicographically smallest square
        return self.W.argmax(axis=1)

    def scaled(self, t: float) -> "WeightTable":
        return WeightTable(self.lam, self.R, self.squares, self.a_index, t * self.W, self.label,
                           self.comparability)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a1", "a2", "a3", "s", "i", "j", "weight"])
        for ai, row in zip(self.a_index, self.W):
            for sq, v in zip(self.squares, row):
                w.writerow([*(int(x) for x in ai), sq.scale, sq.i, sq.j, f"{v:.17g}"])
        return buf.getvalue()


def weight_table(f: Field2D, U: DyadicSquare, lam: int, R: float, zeta: ZetaKernel | None = None,
                 jobs: int = 1, comparability_samples: int = 0) -> WeightTable:
    """w_I^a(f) for every a in Gamma_lam(R) and I in G_lam[U].

    |T_I f| is sampled on the lattice of spacing 2^lam / 4 covering B(0, R + 8 2^lam)
    and convolved with zeta_lam (truncated at 8 2^lam) by FFT.
    """
    zeta = zeta or build_zeta(build_bump())
    squares = squares_at_scale(U.grid, lam, U)
    lat = freq_lattice(lam, R)
    d = 2.0 ** lam / WEIGHT_STEP
    K = WEIGHT_RADIUS * WEIGHT_STEP
    N = int(math.ceil(R / d)) + K
    ker = _zeta_kernel_grid(zeta, lam, d, K)
    idx = lat.n * WEIGHT_STEP + N

    def one(I):
        A = abs_T_cube(f, I, d, N, R + WEIGHT_RADIUS * 2.0 ** lam)
        C = _conv_same(A, ker)
        w = C[idx[:, 0], idx[:, 1], idx[:, 2]]
        comp = (math.inf, 0.0)
        if comparability_samples:
            rng = np.random.default_rng(abs(hash((I.scale, I.i, I.j))) % 2 ** 32)
            lo, hi = math.inf, 0.0
            offs = np.arange(-WEIGHT_STEP, WEIGHT_STEP + 1)
            O = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), -1).reshape(-1, 3)
            O = O[(O * O).sum(1) <= WEIGHT_STEP ** 2]
            pick = rng.choice(len(idx), size=min(comparability_samples, len(idx)), replace=False)
            for p in pick:
                if w[p] <= 0:
                    continue
                pts = idx[p] + O
                r = C[pts[:, 0], pts[:, 1], pts[:, 2]] / w[p]
                lo, hi = min(lo, r.min()), max(hi, r.max())
            comp = (lo, hi)
        return np.maximum(w, 0.0), comp

    res = pmap(one, squares, jobs)
    W = np.stack([r[0] for r in res], axis=1) if res else np.zeros((len(lat), 0))
    comp = (min(r[1][0] for r in res), max(r[1][1] for r in res)) if res else (math.nan, math.nan)
    return WeightTable(lam, R, squares, lat.n, W, getattr(f, "label", ""), comp)


def weight(f: Field2D, I: DyadicSquare, a, lam: int, zeta: ZetaKernel | None = None) -> float:
    """w_I^a(f) = int |T_I f(z)| zeta_lam(z - a) dz by direct lattice summation around a."""
    zeta = zeta or build_zeta(build_bump())
    a = np.asarray(a, float)
    d = 2.0 ** lam / WEIGHT_STEP
    K = WEIGHT_RADIUS * WEIGHT_STEP
    ker = _zeta_kernel_grid(zeta, lam, d, K)
    _require(f, float(np.linalg.norm(a)) + WEIGHT_RADIUS * 2.0 ** lam)
    eng = _engine(f, [I], d)
    n = np.arange(-K, K + 1)
    tot = 0.0
    for k, n3 in enumerate(n):
        blk = eng.blocks(a[2] + n3 * d, n, n, offset=(a[0], a[1]))[0]
        tot += float(np.sum(np.abs(blk) * ker[:, :, k]))
    return max(tot, 0.0)


def reproducing_check(f: Field2D, I: DyadicSquare, lam: int, xis, bump: BumpKernel | None = None,
                      radius: float = REPRO_RADIUS) -> float:
    """max |T_I f - T_I f * rho_lam| / max |T_I f| over the given frequencies."""
    bump = bump or build_bump()
    xis = np.atleast_2d(np.asarray(xis, float))
    ref = extend_localized(f, I, xis)
    scale = float(np.abs(ref).max())
    if scale == 0.0:
        return 0.0
    d = 2.0 ** lam / REPRO_STEP
    K = int(radius * REPRO_STEP)
    g = np.arange(-K, K + 1)
    Z = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1) * d
    ker = bump.scaled(lam, Z) * d ** 3
    ker[np.linalg.norm(Z, axis=-1) > radius * 2.0 ** lam] = 0.0
    _require(f, float(np.linalg.norm(xis, axis=1).max()) + radius * 2.0 ** lam)
    eng = _engine(f, [I], d)
    c = I.center
    dev = 0.0
    for xi, t in zip(xis, ref):
        acc = 0.0 + 0.0j
        for k, n3 in enumerate(g):
            # T_I f(xi - z) on the slice z3 = n3 d, including the centering factor
            x3 = xi[2] - n3 * d
            blk = eng.blocks(x3, -g, -g, offset=(xi[0], xi[1]))[0]
            e1 = np.exp(-1j * (xi[0] + g * d) * c[0])
            e2 = np.exp(-1j * (xi[1] + g * d) * c[1])
            pre = np.exp(-1j * x3 * (c[0] ** 2 + c[1] ** 2)) * np.outer(e1[::-1], e2[::-1])
            acc += np.sum(pre * blk * ker[:, :, k])
        dev = max(dev, abs(acc - t))
    return dev / scale


# ---------------------------------------------------------------- classification


@dataclass
class CaseEntry:
    a: tuple
    case: int
    witness: tuple | None             # Case 1: (I0, J0, K0) as square indices
    pair: tuple | None                # Case 2: (I1, I2) with I2 possibly None
    wstar: float
    threshold: float
    small_away: bool = True


@dataclass
class CaseReport:
    entries: list
    params: PigeonholeParams
    squares: list

    @property
    def counts(self) -> dict:
        c1 = sum(e.case == 1 for e in self.entries)
        return {"case1": c1, "case2": len(self.entries) - c1, "total": len(self.entries)}

    def signature(self) -> list:
        return [(e.a, e.case, e.witness, e.pair) for e in self.entries]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a1", "a2", "a3", "case", "witness", "pair", "wstar"])
        lab = lambda k: "" if k is None else f"{self.squares[k].i}:{self.squares[k].j}"  # noqa: E731
        for e in self.entries:
            wit = "" if e.witness is None else "|".join(lab(k) for k in e.witness)
            pair = "" if e.pair is None else "|".join(lab(k) for k in e.pair)
            w.writerow([*e.a, e.case, wit, pair, f"{e.wstar:.17g}"])
        return buf.getvalue()


def _dist2(squares, p, q):
    return center_distance_sq(squares[p], squares[q])


def _relative(row: np.ndarray) -> np.ndarray:
    """Weights over their maximum, rounded so that rescaling f cannot reorder near-ties."""
    top = row.max() if row.size else 0.0
    if top <= 0:
        return np.zeros_like(row)
    return np.round(row / top, TIE_DIGITS)


def classify(k: int, table: WeightTable, params: PigeonholeParams) -> CaseEntry:
    """Case 1 iff three pairwise separated squares all carry weight > 2^{-alpha lam} w_*."""
    row = table.W[k]
    a = tuple(int(x) for x in table.a_index[k])
    wstar = float(row.max()) if row.size else 0.0
    thr = params.threshold * wstar
    rel = _relative(row)
    near = [i for i in range(len(row)) if rel[i] > params.threshold]
    sep = params.sep_const * 2.0 ** -params.lam
    triples = separated_triples([table.squares[i] for i in near], sep) if len(near) >= 3 else []
    if triples:
        t = tuple(near[i] for i in triples[0])
        return CaseEntry(a, 1, t, None, wstar, thr)
    # first maximum, i.e. the lexicographically smallest square among ties
    I1 = int(np.argmax(rel)) if row.size else 0
    sep2 = sep * sep
    far = [i for i in near if _dist2(table.squares, I1, i) > sep2]
    I2 = None
    if far:
        I2 = max(far, key=lambda i: (_dist2(table.squares, I1, i), -i))
    anchors = [I1] if I2 is None else [I1, I2]
    ok = all(rel[i] <= params.threshold for i in range(len(row))
             if all(_dist2(table.squares, j, i) > sep2 for j in anchors))
    return CaseEntry(a, 2, None, (I1, I2), wstar, thr, ok)


def classify_all(table: WeightTable, params: PigeonholeParams) -> CaseReport:
    return CaseReport([classify(k, table, params) for k in range(len(table.a_index))],
                      params, table.squares)


def census(report: CaseReport) -> dict:
    return report.counts


@dataclass
class ChainReport:
    ratios: np.ndarray                # (n_xi, 4): link ratios r1..r4
    sides: np.ndarray                 # (n_xi, 5): the five quantities of the chain
    bounds: tuple = (1.0, 1.0 + 1e-2, 1.0, 1.0)

    @property
    def max_ratios(self) -> np.ndarray:
        return np.nanmax(self.ratios, axis=0) if len(self.ratios) else np.zeros(4)

    @property
    def holds(self) -> bool:
        return bool(np.all(self.max_ratios <= np.array(self.bounds)))


def case1_chain_check(xis, k: int, f: Field2D, U: DyadicSquare, table: WeightTable,
                      params: PigeonholeParams, entry: CaseEntry | None = None) -> ChainReport:
    """Evaluate the Case-1 chain at frequencies xi in B(a, 2^lam).

    |T f| <= sum_L |T_L f| <= sum_L w_L^a <= 2^{2 lam} w_* <= 2^{(2+alpha) lam} (w_I0 w_J0 w_K0)^{1/3}
    """
    entry = entry or classify(k, table, params)
    if entry.case != 1:
        raise PreconditionError("chain check requires a Case-1 lattice point")
    xis = np.atleast_2d(np.asarray(xis, float))
    a = table.a_points[k]
    if np.any(np.linalg.norm(xis - a, axis=1) > 2.0 ** params.lam * (1 + 1e-12)):
        raise PreconditionError("chain frequencies must lie in B(a, 2^lam)")
    lam = params.lam
    row = table.W[k]
    total_T = np.abs(extend_localized(f, U, xis))
    parts = np.zeros(len(xis))
    for I in table.squares:
        parts += np.abs(extend_localized(f, I, xis))
    wsum = float(row.sum())
    wstar = float(row.max())
    gm = float(np.prod([row[i] for i in entry.witness]) ** (1.0 / 3.0))
    s3 = 2.0 ** (2 * lam) * wstar
    s4 = 2.0 ** ((2 + params.alpha) * lam) * gm
    sides = np.column_stack([total_T, parts, np.full(len(xis), wsum), np.full(len(xis), s3),
                             np.full(len(xis), s4)])
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.column_stack([
            np.where(parts > 0, total_T / parts, 0.0),
            np.where(wsum > 0, parts / wsum, 0.0),
            np.full(len(xis), wsum / s3 if s3 > 0 else 0.0),
            np.full(len(xis), s3 / s4 if s4 > 0 else 0.0)])
    return ChainReport(ratios, sides)


def weight_bound_constant(table: WeightTable, sup_f: float = 1.0) -> float:
    """max_{a, I} w_I^a 2^{2 lam} / ||f||_inf."""
    if table.W.size == 0 or sup_f == 0:
        return 0.0
    return float(table.W.max() * 4.0 ** table.lam / sup_f)
