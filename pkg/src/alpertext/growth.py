"""Per-scale growth table: linear, trilinear and tail estimates plus the pigeonhole census."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dyadic import DyadicSquare, default_root
from .errors import GeometryError
from .extension import XI_CAP
from .frame import FrameMatrix, TruncationSpec, frame_matrix
from .norms import (FamilySpec, NormQuery, TestFunction, bootstrap_growth, estimate_P,
                    estimate_tail, estimate_trilinear, grid_sensitivity, projector,
                    working_triples)
from .pigeonhole import classify_all, localized_field, params_from_q, weight_table, WEIGHT_RADIUS

COLUMNS = ("q", "s", "delta", "kappa", "eta", "estimator", "value", "witness_seed", "h_xi",
           "config_hash")


@dataclass
class GrowthRow:
    q: float
    s: int
    delta: float
    kappa: int
    eta: float
    estimator: str
    value: float | str
    witness_seed: str
    h_xi: float

    def cells(self, config_hash: str = "") -> list[str]:
        v = self.value if isinstance(self.value, str) else f"{self.value:.12e}"
        return [f"{self.q:g}", str(self.s), f"{self.delta:g}", str(self.kappa), f"{self.eta:.12g}",
                self.estimator, v, self.witness_seed, f"{self.h_xi:g}", config_hash]


@dataclass
class GrowthReport:
    rows: list
    exponents: dict                        # estimator -> (estimate, lo, hi)
    witnesses: dict                        # (s, estimator) -> witness record
    censuses: dict                         # s -> CaseReport
    runtime_ms: dict = field(default_factory=dict)

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.cells(config_hash))
        return buf.getvalue()

    def exponents_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "exponent", "ci_low", "ci_high", "config_hash"])
        for k in sorted(self.exponents):
            w.writerow([k, *(f"{x:.12e}" for x in self.exponents[k]), config_hash])
        return buf.getvalue()

    def value(self, s: int, estimator: str):
        for r in self.rows:
            if r.s == s and r.estimator == estimator:
                return r.value
        raise KeyError((s, estimator))


def witness_label(rec: dict) -> str:
    if not rec:
        return ""
    if "functions" in rec:
        return "+".join(witness_label(f) for f in rec["functions"])
    return f"{rec['kind']}:{rec['seed']}:{rec['index']}"


def _witness_function(est, family: Sequence[TestFunction]) -> TestFunction | None:
    if "witness_cells" in est.extra:
        k = est.witness
        base = next(f for f in family if f.kind != "knapp" and f.cells is not None)
        return base.with_cells(est.extra["witness_cells"], "hill-climb", k.get("note", ""))
    if len(est.values) == 0:
        return None
    return family[int(np.argmax(est.values))]


def growth_report(q: float = 4.0, delta: float = 0.5, kappa: int = 2, eta: float = 2.0 ** -6,
                  s_range: Sequence[int] = (2, 3, 4), family: FamilySpec = FamilySpec(),
                  U: DyadicSquare | None = None, nu: float = 0.125, lam: int = 3,
                  sep_const: float = 4.0, alpha: float = 2.0, c: float = 1.0, mode: str = "desk",
                  h_xi: float = 0.25, xi_cap: float = XI_CAP, tail_factor: float = 2.0,
                  trilinear_family: int = 0, max_square_triples: int | None = None,
                  trilinear_max_s: int | None = None, census_max_s: int | None = None,
                  grid_translates: int = 0, precision: str = "double", jobs: int = 1,
                  n_boot: int = 1000,
                  fm: FrameMatrix | None = None) -> GrowthReport:
    """One block of rows per s (sorted): P, trilinear, tail, census counts; then fitted exponents.

    Every s gets the same estimator rows.  With grid_translates > 0, P is also computed on
    that many seeded translates of the grid (frame truncated at s) and the maximum and
    relative spread are reported.  A value is 'n/a' when no nu-disjoint triple
    exists at scale s, when s exceeds trilinear_max_s / census_max_s, or when the tail
    cap does not exceed the ball radius.
    """
    s_range = sorted(set(int(s) for s in s_range))
    U = U or default_root()
    rows, wit, cens, rt = [], {}, {}, {}
    member_vals = []
    if not s_range:
        return GrowthReport(rows, {}, wit, cens, rt)
    if fm is None:
        fm = frame_matrix(TruncationSpec(U, max(s_range), kappa), eta)
    params = params_from_q(q, c, mode, sep_const, lam, alpha)
    for s in s_range:
        row = lambda est, v, w="": GrowthRow(q, s, delta, kappa, eta, est, v, w, h_xi)  # noqa: E731
        query = NormQuery(q, s, delta, h_xi=h_xi)
        fam = family.generate(U, s, delta)
        t0 = time.perf_counter()
        lin = estimate_P(query, fm, U, fam, family.hill_climb, family.seed, precision, jobs=jobs,
                         cap=xi_cap)
        rt[f"s={s}:P"] = lin.runtime_ms
        member_vals.append(lin.values)
        rows.append(row("P", lin.value, witness_label(lin.witness)))
        wit[(s, "P")] = lin.witness
        if grid_translates:
            t1 = time.perf_counter()
            sens = grid_sensitivity(query, family, kappa, eta, grid_translates, family.seed,
                                    precision=precision, cap=xi_cap)
            rt[f"s={s}:grids"] = 1e3 * (time.perf_counter() - t1)
            rows.append(row("P_grid_max", float(sens.values.max())))
            rows.append(row("P_grid_spread", sens.spread))

        try:
            working_triples(U, nu, s)
            geometry_ok = True
        except GeometryError:
            geometry_ok = False
        if geometry_ok and (trilinear_max_s is None or s <= trilinear_max_s):
            tfam = fam[:trilinear_family] if trilinear_family else fam
            tri = estimate_trilinear(query, nu, fm, U, tfam, max_square_triples, family.seed,
                                     precision, cap=xi_cap)
            rt[f"s={s}:trilinear"] = tri.runtime_ms
            rows.append(row("trilinear", tri.value, witness_label(tri.witness)))
            rows.append(row("holder_margin", tri.holder_margin))
            wit[(s, "trilinear")] = tri.witness
        else:
            rows.append(row("trilinear", "n/a"))
            rows.append(row("holder_margin", "n/a"))

        f_star = _witness_function(lin, fam)
        cap_radius = min(tail_factor * query.radius, xi_cap)
        if f_star is not None and cap_radius > query.radius * (1 + 1e-12):
            t1 = time.perf_counter()
            tail = estimate_tail(query, f_star, fm, U, cap_radius, precision, cap=xi_cap)
            rt[f"s={s}:tail"] = 1e3 * (time.perf_counter() - t1)
            rows.append(row("tail", tail.value, witness_label(lin.witness)))
            rows.append(row("tail_ratio", tail.ratio, witness_label(lin.witness)))
        else:
            rows.append(row("tail", "n/a"))
            rows.append(row("tail_ratio", "n/a"))

        if f_star is not None and (census_max_s is None or s <= census_max_s):
            t1 = time.perf_counter()
            R = query.radius
            proj = projector(fm, U, s, R)
            fld = localized_field(proj.expansion(f_star), U, lam, R + WEIGHT_RADIUS * 2.0 ** lam)
            table = weight_table(fld, U, lam, R, jobs=jobs)
            rep = classify_all(table, params.with_radius(s, delta))
            cens[s] = rep
            rt[f"s={s}:census"] = 1e3 * (time.perf_counter() - t1)
            n = rep.counts
            rows.append(row("census_case1", float(n["case1"]), witness_label(lin.witness)))
            rows.append(row("census_case2", float(n["case2"]), witness_label(lin.witness)))
        else:
            rows.append(row("census_case1", "n/a"))
            rows.append(row("census_case2", "n/a"))
        rt[f"s={s}:total"] = 1e3 * (time.perf_counter() - t0)

    exps = {}
    if len(s_range) >= 2:
        exps["P"] = bootstrap_growth(s_range, member_vals, delta, n_boot, family.seed)
    return GrowthReport(rows, exps, wit, cens, rt)
