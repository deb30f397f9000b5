"""Local L^q norms of extensions of smooth Alpert projections, and sup-constant estimators.

Every estimator is a lower bound for a supremum: it is the maximum over an
explicit, seeded family of bounded test functions, and the maximizing member
is stored so the value can be recomputed.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import (DyadicSquare, Grid, default_root, nu_disjoint_triples,
                     squares_at_scale)
from .errors import (GeometryError, InvalidExponent, InvalidParameter, ResolutionError)
from .extension import (EXT_STRIP_ORDER, MAX_SPACING, NORM_RANK_TOL, XI_CAP, ExtensionField,
                        FreqGrid, SliceEngine, abs_power_sum, local_radius)
from .frame import (FrameMatrix, TruncationSpec, dilate_Lp, fine_points, frame_matrix,
                    project_scale)
from .parallel import pmap
from .quadrature import Field2D, sample

KINDS = ("cell-signs", "cell-phases", "knapp", "hill-climb", "explicit")
BATCH = 8


# ---------------------------------------------------------------- queries


@dataclass(frozen=True)
class NormQuery:
    """Region and exponent of an L^q norm on the frequency side.

    region: 'ball' is B_delta(0, 2^s) (radius 2^{s/(1-delta)}); 'annulus' is
    2^{r-1} < |xi| <= 2^r; 'complement' is radius(ball) < |xi| <= cap_radius.
    """

    q: float
    s: int
    delta: float
    region: str = "ball"
    h_xi: float = MAX_SPACING
    r: int | None = None
    cap_radius: float | None = None

    def __post_init__(self):
        if not self.q > 3:
            raise InvalidExponent(f"q must lie in (3, inf), got {self.q}")
        if not 0 < self.delta < 1:
            raise InvalidParameter("delta must lie in (0, 1)")
        if self.h_xi > MAX_SPACING:
            raise ResolutionError(f"lattice spacing {self.h_xi} exceeds {MAX_SPACING}")
        if self.region not in ("ball", "annulus", "complement"):
            raise InvalidParameter(f"unknown region {self.region!r}")
        if self.region == "annulus" and self.r is None:
            raise InvalidParameter("annulus queries need r")
        if self.region == "complement" and not (self.cap_radius and self.cap_radius > self.radius):
            raise InvalidParameter("complement queries need cap_radius > 2^{s/(1-delta)}")

    @property
    def radius(self) -> float:
        return local_radius(self.s, self.delta)

    @property
    def outer(self) -> float:
        if self.region == "ball":
            return self.radius
        if self.region == "annulus":
            return 2.0 ** self.r
        return float(self.cap_radius)

    def grid(self, h: float | None = None) -> FreqGrid:
        h = self.h_xi if h is None else h
        if self.region == "ball":
            return FreqGrid.ball(self.radius, h)
        if self.region == "annulus":
            return FreqGrid.shell(2.0 ** (self.r - 1), 2.0 ** self.r, h)
        return FreqGrid.shell(self.radius, float(self.cap_radius), h)

    def check_cap(self, cap: float = XI_CAP):
        if self.outer > cap * (1 + 1e-12):
            raise ResolutionError(f"region radius {self.outer:.6g} exceeds the cap {cap:.6g}")


def local_norm(field: ExtensionField, q: float) -> float | np.ndarray:
    """(sum_xi |value|^q h^3)^{1/q}; one number per field."""
    if field.grid.kind == "points":
        raise InvalidParameter("local_norm needs a lattice region, not an explicit point list")
    if field.grid.h > MAX_SPACING:
        raise ResolutionError(f"lattice spacing {field.grid.h} exceeds {MAX_SPACING}")
    v = (field.power_sums(q) * field.grid.cell_volume) ** (1.0 / q)
    return float(v[0]) if field.single else v


def richardson_check(fields, query: NormQuery, precision: str = "double") -> float:
    """Largest relative change of the norms when the lattice spacing is halved."""
    fields = [fields] if isinstance(fields, Field2D) else list(fields)
    a = np.atleast_1d(local_norm(ExtensionField(fields, query.grid()), query.q))
    b = np.atleast_1d(local_norm(ExtensionField(fields, query.grid(query.h_xi / 2)), query.q))
    scale = np.maximum(np.abs(b), 1e-300)
    return float(np.max(np.abs(a - b) / scale))


# ---------------------------------------------------------------- test functions


def _unit_rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


@dataclass
class TestFunction:
    """A bounded function on U; cell-based kinds are constant on the cells of one scale."""

    kind: str
    seed: int
    index: int
    U: DyadicSquare
    cell_scale: int | None = None
    cells: np.ndarray | None = field(default=None, repr=False)
    cap: DyadicSquare | None = None
    fn: Callable | None = field(default=None, repr=False)
    note: str = ""

    __test__ = False  # not a pytest class

    def __call__(self, X, Y):
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        x0, x1, y0, y1 = self.U.bounds
        inside = (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)
        if self.fn is not None:
            return np.where(inside, self.fn(X, Y), 0)
        if self.cap is not None:
            a0, a1, b0, b1 = self.cap.bounds
            return ((X >= a0) & (X < a1) & (Y >= b0) & (Y < b1)).astype(float)
        n = self.cells.shape[0]
        L = x1 - x0
        i = np.clip(np.floor((X - x0) / L * n).astype(int), 0, n - 1)
        j = np.clip(np.floor((Y - y0) / L * n).astype(int), 0, n - 1)
        return np.where(inside, self.cells[i, j], 0)

    @property
    def sup(self) -> float:
        if self.cells is not None:
            return float(np.abs(self.cells).max()) if self.cells.size else 0.0
        if self.cap is not None:
            return 1.0
        X, Y = fine_points(self.U.bounds)
        return float(np.abs(self(X, Y)).max())

    @property
    def is_real(self) -> bool:
        return self.cells is None or not np.iscomplexobj(self.cells)

    def with_cells(self, cells, kind: str | None = None, note: str = "") -> "TestFunction":
        return TestFunction(kind or self.kind, self.seed, self.index, self.U, self.cell_scale,
                            np.asarray(cells), None, None, note)

    def scaled(self, t: float) -> "TestFunction":
        if self.cells is not None:
            return self.with_cells(t * self.cells, self.kind, self.note)
        base = self
        return TestFunction(self.kind, self.seed, self.index, self.U, fn=lambda X, Y: t * base(X, Y),
                            note=self.note)

    def record(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "index": self.index}
        if self.cap is not None:
            d["cap"] = self.cap.to_json()
        if self.cell_scale is not None:
            d["cell_scale"] = self.cell_scale
        if self.note:
            d["note"] = self.note
        return d


def _cell_count(U: DyadicSquare, cell_scale: int) -> int:
    if cell_scale < U.scale:
        raise InvalidParameter("cell scale must not be coarser than U")
    return 1 << (cell_scale - U.scale)


def cell_signs(U, cell_scale, seed, index) -> TestFunction:
    n = _cell_count(U, cell_scale)
    cells = _unit_rng(seed, 1, index).choice([-1.0, 1.0], size=(n, n))
    return TestFunction("cell-signs", seed, index, U, cell_scale, cells)


def cell_phases(U, cell_scale, seed, index) -> TestFunction:
    n = _cell_count(U, cell_scale)
    theta = _unit_rng(seed, 2, index).uniform(0.0, 2 * np.pi, size=(n, n))
    return TestFunction("cell-phases", seed, index, U, cell_scale, np.exp(1j * theta))


def knapp_cap_scale(U: DyadicSquare, s: int, delta: float) -> int:
    """Cap side about R^{-1/2} with R = 2^{s/(1-delta)}, kept between side(U) and 2^{-(s+1)}."""
    c = math.ceil(s / (2 * (1 - delta)))
    return int(min(max(c, U.scale), s + 1))


def knapp(U, s, delta, seed, index) -> TestFunction:
    """Indicator of one dyadic cap; its extension concentrates on a tube through the origin."""
    c = knapp_cap_scale(U, s, delta)
    caps = squares_at_scale(U.grid, c, U)
    rng = _unit_rng(seed, 3)
    order = rng.permutation(len(caps))
    cap = caps[int(order[index % len(caps)])]
    return TestFunction("knapp", seed, index, U, cap=cap)


def explicit(U, fn: Callable, index: int = 0, note: str = "") -> TestFunction:
    return TestFunction("explicit", 0, index, U, fn=fn, note=note)


@dataclass(frozen=True)
class FamilySpec:
    signs: int = 64
    phases: int = 64
    knapp: int = 4
    hill_climb: int = 200
    seed: int = 0
    cell_scale: int | None = None      # default: s + 1

    def generate(self, U: DyadicSquare, s: int, delta: float, extra=()) -> list[TestFunction]:
        cs = self.cell_scale if self.cell_scale is not None else s + 1
        out = [cell_signs(U, cs, self.seed, k) for k in range(self.signs)]
        out += [cell_phases(U, cs, self.seed, k) for k in range(self.phases)]
        out += [knapp(U, s, delta, self.seed, k) for k in range(self.knapp)]
        out += list(extra)
        return out

    @property
    def size(self) -> int:
        return self.signs + self.phases + self.knapp


# ---------------------------------------------------------------- projections


@dataclass
class Projector:
    """Q_{s,U} through a frame, producing fields on one shared quadrature rule."""

    fm: FrameMatrix
    U: DyadicSquare
    s: int
    xi_max: float
    strip_order: int = EXT_STRIP_ORDER

    def coefficients(self, f):
        return self.fm.coefficients(f)

    def expansion(self, f, within: DyadicSquare | None = None, coeffs=None):
        c = coeffs if coeffs is not None else self.fm.coefficients(f)
        if within is None:
            return project_scale(f, self.s, self.U, self.fm, c)
        mask = np.zeros(self.fm.size, bool)
        for Q in squares_at_scale(self.U.grid, self.s, within):
            mask |= self.fm.square_mask(Q)
        return self.fm.expansion(c, mask=mask)

    def field(self, f, within: DyadicSquare | None = None, coeffs=None) -> Field2D:
        e = self.expansion(f, within, coeffs)
        if not e.parts:
            # keep the quadrature rule of nonzero projections so zero fields batch with them
            e = self.fm.element(self.fm.trunc.scale_slice(self.s).start).scaled(0.0)
        return e.to_field(xi_max=self.xi_max,
                                                          strip_order=self.strip_order)


def projector(fm: FrameMatrix, U: DyadicSquare, s: int, xi_max: float) -> Projector:
    if s not in fm.trunc.scales:
        raise InvalidParameter(f"scale {s} outside the frame truncation")
    return Projector(fm, U, s, xi_max)


def power_sums(fields: Sequence[Field2D], grid: FreqGrid, q: float, precision="double",
               rank_tol=NORM_RANK_TOL, jobs: int = 1) -> np.ndarray:
    """sum |E f|^q over the grid for each field, in fixed batches (so results ignore jobs)."""
    fields = list(fields)
    batches = [fields[i:i + BATCH] for i in range(0, len(fields), BATCH)]

    def run(b):
        return ExtensionField(b, grid, precision=precision, rank_tol=rank_tol).power_sums(q)

    res = pmap(run, batches, jobs)
    return np.concatenate(res) if res else np.zeros(0)


# ---------------------------------------------------------------- estimates


@dataclass
class NormEstimate:
    estimator: str
    value: float
    witness: dict
    values: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))
    sampling_error: float = 0.0
    runtime_ms: float = 0.0
    extra: dict = field(default_factory=dict)


def _half_bootstrap(values: np.ndarray, seed: int) -> float:
    """Relative drop of the maximum when only a seeded half of the family is used."""
    if len(values) < 2 or values.max() <= 0:
        return 0.0
    rng = np.random.default_rng([seed, 99])
    half = rng.choice(len(values), size=len(values) // 2, replace=False)
    return float((values.max() - values[half].max()) / values.max())


def _norms(proj: Projector, fns, query: NormQuery, precision, rank_tol, jobs):
    fields = [proj.field(f) for f in fns]
    ps = power_sums(fields, query.grid(), query.q, precision, rank_tol, jobs)
    return (ps * query.h_xi ** 3) ** (1.0 / query.q) / np.maximum([f.sup for f in fns], 1e-300)


def hill_climb(start: TestFunction, objective: Callable, budget: int, seed: int,
               batch: int = BATCH) -> tuple[TestFunction, float, list]:
    """Greedy cell-phase search: propose single-cell phase changes, keep the best improvement."""
    if start.cells is None:
        raise InvalidParameter("hill climbing needs a cell-based starting function")
    rng = np.random.default_rng([seed, 4])
    best = start.with_cells(start.cells.astype(complex), "hill-climb", note=f"start={start.kind}#{start.index}")
    best_val = float(objective([best])[0])
    trace = [best_val]
    used = 0
    n = best.cells.shape[0]
    while used < budget:
        k = min(batch, budget - used)
        cands = []
        for _ in range(k):
            c = best.cells.copy()
            i, j = rng.integers(n), rng.integers(n)
            c[i, j] = np.exp(1j * rng.uniform(0, 2 * np.pi))
            cands.append(best.with_cells(c, "hill-climb", best.note))
        vals = np.asarray(objective(cands))
        used += k
        m = int(np.argmax(vals))
        if vals[m] > best_val:
            best, best_val = cands[m], float(vals[m])
        trace.append(best_val)
    return best, best_val, trace


def estimate_P(query: NormQuery, fm: FrameMatrix, U: DyadicSquare, family: Sequence[TestFunction],
               hill_climb_budget: int = 0, seed: int = 0, precision: str = "double",
               rank_tol: float = NORM_RANK_TOL, jobs: int = 1, cap: float = XI_CAP) -> NormEstimate:
    """max over the family of ||E Q_{s,U} f||_{L^q(region)} / ||f||_inf."""
    t0 = time.perf_counter()
    query.check_cap(cap)
    family = list(family)
    if not family:
        return NormEstimate("P", 0.0, {}, np.zeros(0))
    proj = projector(fm, U, query.s, query.outer)
    vals = _norms(proj, family, query, precision, rank_tol, jobs)
    k = int(np.argmax(vals))
    value, wit = float(vals[k]), family[k].record()
    extra = {}
    if hill_climb_budget > 0:
        cell_based = [i for i, f in enumerate(family) if f.cells is not None]
        if cell_based:
            start = family[max(cell_based, key=lambda i: (vals[i], -i))]
            obj = lambda fs: _norms(proj, fs, query, precision, rank_tol, jobs)  # noqa: E731
            hc, hv, trace = hill_climb(start, obj, hill_climb_budget, seed)
            extra["hill_climb_trace"] = trace
            if hv > value * (1 + 1e-12):
                value, wit = hv, hc.record()
                extra["witness_cells"] = hc.cells
    return NormEstimate("P", value, wit, vals, _half_bootstrap(vals, seed),
                        1e3 * (time.perf_counter() - t0), extra)


def translated_root(offset) -> DyadicSquare:
    """The root square [-1/4, 1/4)^2 + offset, as the scale-1 square (0, 0) of a shifted grid."""
    ox, oy = (Fraction(v) for v in offset)
    if math.hypot(abs(ox) + Fraction(1, 4), abs(oy) + Fraction(1, 4)) >= 0.5:
        raise InvalidParameter(f"translated root {offset} leaves B(0, 1/2)")
    return Grid((ox - Fraction(1, 4), oy - Fraction(1, 4)), label="T").square(1, 0, 0)


@dataclass
class GridSensitivity:
    offsets: list
    values: np.ndarray                   # P on the untranslated root first, then per translate

    @property
    def spread(self) -> float:
        """(max - min) / max over the sampled grids."""
        top = float(self.values.max()) if len(self.values) else 0.0
        return float((top - self.values.min()) / top) if top > 0 else 0.0


def grid_sensitivity(query: NormQuery, family: FamilySpec, kappa: int, eta: float,
                     n_translates: int, seed: int = 0, S_max: int | None = None,
                     precision: str = "double", cap: float = XI_CAP,
                     max_offset: float = 3 / 32) -> GridSensitivity:
    """estimate_P on the default root and on seeded dyadic translates of its grid.

    Offsets are multiples of 2^-10 in [-max_offset, max_offset]^2 so every translated
    root stays inside B(0, 1/2).  The frame is rebuilt on each translated grid.
    """
    S = S_max if S_max is not None else query.s
    rng = np.random.default_rng([seed, 11])
    k = int(max_offset * 1024)
    offsets = [(0, 0)] + [tuple(Fraction(int(v), 1024) for v in rng.integers(-k, k + 1, 2))
                          for _ in range(n_translates)]
    vals = []
    for off in offsets:
        U = translated_root(off) if off != (0, 0) else default_root()
        fm = frame_matrix(TruncationSpec(U, S, kappa), eta)
        fam = family.generate(U, query.s, query.delta)
        vals.append(estimate_P(query, fm, U, fam, family.hill_climb, family.seed, precision,
                               cap=cap).value)
    return GridSensitivity([(float(a), float(b)) for a, b in offsets], np.array(vals))


@dataclass
class TrilinearEstimate(NormEstimate):
    holder_ok: bool = True
    holder_margin: float = 0.0           # min over combos of product/value (>= 1 when Hoelder holds)


def family_triple_groups(n: int) -> list[list[tuple[int, int, int]]]:
    """Per member j: (j, j, j) and the rotations of (j-2, j-1, j).

    Groups depend only on j, so the triples of a prefix of the family are a
    subset of the triples of the whole family and the estimate is monotone.
    """
    groups = []
    for j in range(n):
        g = [(j, j, j)]
        if j >= 2:
            g += [(j - 2, j - 1, j), (j - 1, j, j - 2), (j, j - 2, j - 1)]
        groups.append(g)
    return groups


def working_triples(U: DyadicSquare, nu: float, s: int, limit: int | None = None,
                    seed: int = 0) -> list:
    scale = -math.log2(nu)
    if abs(scale - round(scale)) > 1e-12:
        raise GeometryError(f"nu = {nu} is not a power of two")
    scale = int(round(scale))
    if scale > s:
        raise GeometryError(f"nu-squares (scale {scale}) are finer than the working scale {s}")
    if scale < U.scale:
        raise GeometryError("nu exceeds the side of U")
    triples = nu_disjoint_triples(squares_at_scale(U.grid, scale, U), nu)
    if not triples:
        raise GeometryError(f"no nu-disjoint triple of side-{nu} squares in {U}")
    if limit is not None and len(triples) > limit:
        keep = np.sort(np.random.default_rng([seed, 5]).choice(len(triples), limit, replace=False))
        triples = [triples[i] for i in keep]
    return triples


def estimate_trilinear(query: NormQuery, nu: float, fm: FrameMatrix, U: DyadicSquare,
                       family: Sequence[TestFunction], max_square_triples: int | None = None,
                       seed: int = 0, precision: str = "double", rank_tol: float = NORM_RANK_TOL,
                       cap: float = XI_CAP) -> TrilinearEstimate:
    """max over family triples and nu-disjoint (U1,U2,U3) of
    ||prod_k E Q_{s,U_k} f_k||_{L^{q/3}} / prod_k ||f_k||_inf."""
    t0 = time.perf_counter()
    query.check_cap(cap)
    triples = working_triples(U, nu, query.s, max_square_triples, seed)
    family = list(family)
    groups = family_triple_groups(len(family))
    ftrip = [ft for g in groups for ft in g]
    starts = np.cumsum([0] + [len(g) for g in groups[:-1]])
    proj = projector(fm, U, query.s, query.outer)
    q = query.q
    h3 = query.h_xi ** 3
    vals = np.zeros(len(ftrip))
    best = (-1.0, None)
    holder_ok, margin = True, math.inf
    coeffs = {}
    for c0, block in zip(starts, groups):
        # one group touches at most three members
        keys = sorted({(ft[k], sq.squares[k].sort_key()) for ft in block for sq in triples
                       for k in range(3)})
        sq_by_key = {Q.sort_key(): Q for t in triples for Q in t.squares}
        idx = {key: n for n, key in enumerate(keys)}
        fields = []
        for j, sk in keys:
            if j not in coeffs:
                coeffs[j] = proj.coefficients(family[j])
            fields.append(proj.field(family[j], sq_by_key[sk], coeffs[j]))
        combos = [(b, t, [idx[(ft[k], sq.squares[k].sort_key())] for k in range(3)])
                  for b, ft in enumerate(block) for t, sq in enumerate(triples)]
        lin = np.zeros(len(fields))
        tri = np.zeros(len(combos))
        ef = ExtensionField(fields, query.grid(), precision=precision, rank_tol=rank_tol)
        cidx = np.array([ix for _, _, ix in combos])
        for mult, mask, blocks in ef.weighted_slices():
            # |v1 v2 v3|^{q/3} = prod_k (|v_k|^2)^{q/6}: one fractional power per field
            a2 = np.stack([b.real[mask].astype(float) ** 2 + b.imag[mask].astype(float) ** 2
                           for b in blocks])
            lin += mult * np.sum(a2 ** (q / 2), axis=1)
            p = a2 ** (q / 6)
            tri += mult * np.einsum("np,np,np->n", p[cidx[:, 0]], p[cidx[:, 1]], p[cidx[:, 2]])
        lin_n = (lin * h3) ** (1 / q)
        for n, (b, t, ix) in enumerate(combos):
            ft = block[b]
            sup = float(np.prod([family[j].sup for j in ft]))
            v = (tri[n] * h3) ** (3 / q) / max(sup, 1e-300)
            prod = float(np.prod(lin_n[ix])) / max(sup, 1e-300)
            if v > 0:
                margin = min(margin, prod / v)
            if v > prod * (1 + 1e-9):
                holder_ok = False
            vals[c0 + b] = max(vals[c0 + b], v)
            if v > best[0]:
                best = (v, {"functions": [family[j].record() for j in ft],
                            "squares": [Q.to_json() for Q in triples[t].squares],
                            "linear_norms": [float(x) for x in lin_n[ix]]})
    value = max(best[0], 0.0)
    return TrilinearEstimate("trilinear", value, best[1] or {}, vals, _half_bootstrap(vals, seed),
                             1e3 * (time.perf_counter() - t0),
                             {"square_triples": len(triples)}, holder_ok,
                             margin if math.isfinite(margin) else 0.0)


@dataclass
class TailEstimate:
    value: float
    inner: float
    ratio: float
    decay_ratio: float
    cap_radius: float
    extrapolated: float
    shells: list


def estimate_tail(query: NormQuery, f, fm: FrameMatrix, U: DyadicSquare, cap_radius: float,
                  precision: str = "double", rank_tol: float = NORM_RANK_TOL,
                  cap: float = XI_CAP) -> TailEstimate:
    """||E Q_{s,U} f|| over radius < |xi| <= cap_radius, split into doubling shells.

    decay_ratio is the norm of the outermost shell over the inner-ball norm; the
    extrapolated value adds a geometric continuation of the last two shells.
    """
    q = query.q
    R = query.radius
    if not cap_radius > R:
        raise InvalidParameter("cap_radius must exceed the ball radius 2^{s/(1-delta)}")
    if cap_radius > cap * (1 + 1e-12):
        raise ResolutionError(f"cap_radius {cap_radius:.6g} exceeds the cap {cap:.6g}")
    proj = projector(fm, U, query.s, cap_radius)
    fld = proj.field(f)
    h3 = query.h_xi ** 3
    inner = float(power_sums([fld], FreqGrid.ball(R, query.h_xi), q, precision, rank_tol)[0])
    edges = [R]
    while edges[-1] * 2 < cap_radius * (1 - 1e-12):
        edges.append(edges[-1] * 2)
    edges.append(cap_radius)
    shells = [float(power_sums([fld], FreqGrid.shell(a, b, query.h_xi), q, precision, rank_tol)[0])
              for a, b in zip(edges[:-1], edges[1:])]
    tail = sum(shells)
    rem = math.inf
    if len(shells) >= 2 and shells[-2] > 0 and shells[-1] < shells[-2]:
        r = shells[-1] / shells[-2]
        rem = shells[-1] * r / (1 - r)
    elif tail == 0:
        rem = 0.0
    inner_n = (inner * h3) ** (1 / q)
    tail_n = (tail * h3) ** (1 / q)
    last_n = (shells[-1] * h3) ** (1 / q)
    return TailEstimate(tail_n, inner_n, tail_n / inner_n if inner_n > 0 else 0.0,
                        last_n / inner_n if inner_n > 0 else 0.0, cap_radius,
                        ((tail + rem) * h3) ** (1 / q) if math.isfinite(rem) else math.inf,
                        [(a, b, (p * h3) ** (1 / q)) for a, b, p in zip(edges[:-1], edges[1:], shells)])


# ---------------------------------------------------------------- rescaling


def delta_prime(delta: float, m: int, s: int) -> float:
    if not s > m:
        raise InvalidParameter("rescaling needs s > m")
    return delta / (1.0 - (m / s) * (1.0 - delta))


@dataclass
class RescaleReport:
    m: int
    rho: float
    delta: float
    delta_prime: float
    q: float
    lhs: float
    rhs: float
    rel_error: float


def disk_window(t):
    """exp(1 - 1/(1 - t^2)) on |t| < 1: smooth, equal to 1 at the centre."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
    return out


def rescale_input(seed: int, ybar, rho: float, modes: int = 3) -> Callable:
    """Bounded test function supported in |y - ybar| < rho with a random smooth phase."""
    rng = np.random.default_rng([seed, 6])
    amp = rng.uniform(0.5, 2.0, modes)
    freq = rng.normal(0.0, 3.0, (modes, 2))
    ph = rng.uniform(0, 2 * np.pi, modes)
    yb = np.asarray(ybar, float)

    def f(X, Y):
        U1 = (np.asarray(X) - yb[0]) / rho
        U2 = (np.asarray(Y) - yb[1]) / rho
        theta = sum(a * np.cos(w[0] * U1 + w[1] * U2 + p) for a, w, p in zip(amp, freq, ph))
        return disk_window(np.hypot(U1, U2)) * np.exp(1j * theta)
    return f


def rescale_check(f: Callable, m: int, s: int, delta: float, q: float, ybar=(0.1, -0.05),
                  h: float = MAX_SPACING, refine: int = 1, precision: str = "double",
                  rank_tol: float = NORM_RANK_TOL) -> RescaleReport:
    """Both sides of the parabolic change of variables for f supported in |y - ybar| < rho.

    lhs = ||Int_rho||_{L^q(B_R)} with Int_rho(xi) = int e^{i xi.Phi(y)} f(y) dy.
    rhs = rho^{2 - 4/q} (int over the image of B_R under (xi', xi3) -> (rho xi', rho^2 xi3)
          of |J(eta)|^q d eta)^{1/q}, J(eta) = int_{|u|<1} e^{i[(eta' + 2 ybar eta3 / rho).u
          + eta3 |u|^2]} f(ybar + rho u) du, computed on its own quadrature rule in u.
    """
    if not s > m:
        raise InvalidParameter("rescaling needs s > m")
    if not q > 3:
        raise InvalidExponent("q must exceed 3")
    rho = 2.0 ** -m
    R = local_radius(s, delta)
    dp = delta_prime(delta, m, s) if m > 0 else delta
    yb = np.asarray(ybar, float)
    box = (yb[0] - rho, yb[0] + rho, yb[1] - rho, yb[1] + rho)
    F = sample(f, box, xi_max=R, refine=refine)
    g = lambda U1, U2: f(yb[0] + rho * np.asarray(U1), yb[1] + rho * np.asarray(U2))  # noqa: E731
    lin = rho * R * (1 + 2 * float(np.linalg.norm(yb)) / rho) + rho * rho * R
    G = sample(g, (-1.0, 1.0, -1.0, 1.0), xi_max=lin, refine=refine)
    grid = FreqGrid.ball(R, h)
    eng_l = SliceEngine([F], h, sign=+1, precision=precision, rank_tol=rank_tol)
    eng_r = SliceEngine([G], rho * h, sign=+1, shift=(2 * yb[0] / rho, 2 * yb[1] / rho),
                        precision=precision, rank_tol=rank_tol)
    sl = sr = 0.0
    for x3, n1, n2, mask in grid.slices():
        sl += abs_power_sum(eng_l.blocks(x3, n1, n2)[0][mask], q)
        sr += abs_power_sum(eng_r.blocks(rho * rho * x3, n1, n2)[0][mask], q)
    lhs = (sl * h ** 3) ** (1 / q)
    rhs = rho ** (2 - 4 / q) * (sr * rho ** 4 * h ** 3) ** (1 / q)
    err = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return RescaleReport(m, rho, delta, dp, q, lhs, rhs, err)


# ---------------------------------------------------------------- dilation


def dilated_family_check(m: int, s: int, f, fm: FrameMatrix, fm_dilated: FrameMatrix | None = None,
                         n: int = 129) -> float:
    """Sup residual of delta_{m,inf} Q^G_{s,U} f - Q^{2^m G}_{s-m, 2^m U} delta_{m,inf} f."""
    if m == 0:
        return 0.0
    if not s > m:
        raise InvalidParameter("dilation check needs s > m")
    target = fm.trunc.dilated(m)
    if fm_dilated is None:
        fm_dilated = frame_matrix(target, fm.eta)
    if fm_dilated.trunc != target:
        from .errors import ConfigurationError
        raise ConfigurationError("dilated truncation does not match 2^m of the base truncation")
    lhs = dilate_Lp(project_scale(f, s, fm.trunc.U, fm), m, math.inf)
    rhs = project_scale(dilate_Lp(f, m, math.inf), s - m, target.U, fm_dilated)
    X, Y = fine_points(lhs if lhs.parts else rhs, n=n)
    return float(np.abs(lhs(X, Y) - rhs(X, Y)).max())


# ---------------------------------------------------------------- growth


def fit_growth(s_vals, values, delta: float) -> float:
    """Least-squares slope of log2(value) against log2 R = s / (1 - delta)."""
    x = np.asarray(s_vals, float) / (1 - delta)
    y = np.log2(np.maximum(np.asarray(values, float), 1e-300))
    if len(x) < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def bootstrap_growth(s_vals, member_values: Sequence[np.ndarray], delta: float, n_boot: int = 1000,
                     seed: int = 0, level: float = 0.95) -> tuple[float, float, float]:
    """Exponent of the family maxima with a percentile interval from resampled families."""
    est = fit_growth(s_vals, [v.max() for v in member_values], delta)
    if len(s_vals) < 2 or any(len(v) == 0 for v in member_values):
        return est, math.nan, math.nan
    rng = np.random.default_rng([seed, 7])
    boots = []
    for _ in range(n_boot):
        mx = [v[rng.integers(0, len(v), len(v))].max() for v in member_values]
        boots.append(fit_growth(s_vals, mx, delta))
    lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    return est, float(lo), float(hi)
