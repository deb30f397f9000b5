"""Invariant checks run by the verify command; each returns one CheckResult row."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .alpert import build_unit_alpert_basis, monomials, moment
from .config import RunConfig
from .dyadic import default_root, squares_at_scale
from .extension import extend, modulate
from .frame import (FrameMatrix, TruncationSpec, frame_matrix, span_function,
                    sup_norm_penalty_check, verify_dilation_commutation)
from .mollifier import build_mollifier, moment_indices
from .norms import (FamilySpec, NormQuery, delta_prime, dilated_family_check, estimate_P,
                    rescale_check, rescale_input)
from .pigeonhole import (classify_all, localized_field, params_from_q, reproducing_check,
                         weight_table)
from .quadrature import sample, tensor_rule
from .smoothing import smooth_wavelet


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""

    def cells(self) -> list[str]:
        return [self.name, f"{self.value:.6e}", f"{self.threshold:.6e}",
                "pass" if self.passed else "FAIL", self.note]


def results_csv(results, config_hash: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "value", "threshold", "status", "note", "config_hash"])
    for r in results:
        w.writerow(r.cells() + [config_hash])
    return buf.getvalue()


def _le(name, value, thr, note=""):
    return CheckResult(name, float(value), float(thr), bool(value <= thr), note)


def _gram_deviation(basis) -> float:
    r = tensor_rule((0.0, 1.0, 0.0, 1.0), [(0.5, 0.0)], [(0.5, 0.0)])
    X, Y = r.mesh()
    V = np.stack([w(X, Y).ravel() for w in basis])
    G = (V * r.weights.ravel()) @ V.T
    return float(np.abs(G - np.eye(len(basis))).max())


def check_alpert(cfg: RunConfig):
    k = cfg.kappa
    basis = build_unit_alpert_basis(k)
    mom = max(abs(moment(w, b)) for w in basis for b in monomials(k))
    yield _le(f"alpert_gram_k{k}", _gram_deviation(basis), 1e-12)
    yield _le(f"alpert_moments_k{k}", mom, 1e-12)
    n = 3 * k * (k + 1) // 2
    yield CheckResult(f"alpert_count_k{k}", len(basis), n, len(basis) == n)


def check_mollifier(cfg: RunConfig):
    phi = build_mollifier(cfg.kappa)
    dev = abs(phi.moment((0, 0)) - 1)
    for g in moment_indices(cfg.kappa)[1:]:
        dev = max(dev, abs(phi.moment(g)))
    yield _le(f"mollifier_moments_k{cfg.kappa}", dev, 1e-8)


def check_smooth(cfg: RunConfig):
    if cfg.eta == 0:
        return
    dev = max(abs(smooth_wavelet(w, cfg.eta).moment(b))
              for w in build_unit_alpert_basis(cfg.kappa) for b in monomials(cfg.kappa))
    yield _le(f"smooth_moments_k{cfg.kappa}", dev, 1e-6)


def check_frame(cfg: RunConfig, fm: FrameMatrix, fault: bool = False):
    rng = np.random.default_rng([cfg.seed, 11])
    used = fm.perturbed(0, 0, 1e-2) if fault else fm
    worst = agree = 0.0
    x0, x1, y0, y1 = fm.expansion(np.ones(fm.size)).bounds()
    pts = np.meshgrid(np.linspace(x0, x1, 257), np.linspace(y0, y1, 257), indexing="ij")
    for _ in range(cfg.verify_samples):
        f = span_function(fm, rng)
        rhs = used.analysis(f)
        a = used.solve(rhs)
        b = used.solve(rhs, "neumann")
        worst = max(worst, float(np.abs(used.expansion(a)(*pts) - f(*pts)).max()))
        agree = max(agree, float(np.abs(a - b).max()))
    yield _le("frame_reconstruction", worst, 1e-6, "fault injected" if fault else "")
    yield _le("frame_neumann_vs_direct", agree, 1e-8)


def check_dilation(cfg: RunConfig):
    U = default_root()
    fm = frame_matrix(TruncationSpec(U, U.scale + 1, cfg.kappa), cfg.eta)
    rng = np.random.default_rng([cfg.seed, 12])
    f = span_function(fm, rng)
    worst = 0.0
    for m in (0, 1):
        for p in (2.0, math.inf):
            for I in squares_at_scale(U.grid, U.scale + 1, U)[:2]:
                worst = max(worst, verify_dilation_commutation(I, m, p, f, fm))
    yield _le("dilation_commutation", worst, 1e-5)
    s = U.scale + 1
    yield _le("dilated_family", dilated_family_check(1, s, f, fm), 1e-5)


def check_extension(cfg: RunConfig):
    U = default_root()
    one = sample(lambda X, Y: np.ones_like(X), U.bounds, xi_max=64)
    yield _le("extension_area", abs(extend(one, [0.0, 0.0, 0.0]) - U.side ** 2), 1e-10)
    rng = np.random.default_rng([cfg.seed, 13])
    g = sample(lambda X, Y: np.cos(3 * X) * np.exp(1j * Y), U.bounds, xi_max=64)
    worst = 0.0
    for _ in range(cfg.verify_samples):
        z = rng.uniform(-8, 8, 3)
        xi = z + rng.uniform(-16, 16, 3)
        a = abs(extend(modulate(g, z), xi))
        b = abs(extend(g, xi - z))
        worst = max(worst, abs(a - b))
    yield _le("extension_modulation", worst, 1e-8)


def check_penalty(cfg: RunConfig, fm: FrameMatrix):
    s = min(3, fm.trunc.S_max)
    rng = np.random.default_rng([cfg.seed, 14])
    U = fm.trunc.U
    n = 1 << (s + 1 - U.scale)
    x0, _, y0, _ = U.bounds
    ratios = []
    for _ in range(cfg.verify_samples):
        cells = rng.choice([-1.0, 1.0], size=(n, n))

        def f(X, Y, c=cells):
            i = np.clip(np.floor((X - x0) / U.side * n).astype(int), 0, n - 1)
            j = np.clip(np.floor((Y - y0) / U.side * n).astype(int), 0, n - 1)
            return c[i, j] * (U.contains(X, Y))
        ratios.append(sup_norm_penalty_check(f, s, 4.0, fm))
    top = max(ratios)
    yield CheckResult("penalty_ratio", top, math.inf, bool(np.isfinite(top)), f"s={s}, r=4")


def check_pigeonhole(cfg: RunConfig):
    U = default_root()
    lam = 2
    R = 16.0
    f = sample(lambda X, Y: np.ones_like(X), U.bounds, xi_max=64)
    dev = reproducing_check(f, U, 1, np.array([[0.0, 0.0, 0.0]]))
    yield _le("pigeonhole_reproducing", dev, 1e-3, "lambda=1")
    fld = localized_field(lambda X, Y: np.ones_like(X), U, lam, R + 8 * 2.0 ** lam)
    table = weight_table(fld, U, lam, R)
    params = params_from_q(cfg.q, cfg.c, "desk", cfg.sep_const, lam, cfg.alpha)
    rep = classify_all(table, params)
    n = rep.counts
    yield CheckResult("pigeonhole_exhaustive", n["case1"] + n["case2"], len(table.a_index),
                      n["case1"] + n["case2"] == len(table.a_index))
    same = classify_all(table.scaled(3.0), params).signature() == rep.signature()
    yield CheckResult("pigeonhole_scaling_invariance", float(same), 1.0, same)


def check_rescale(cfg: RunConfig):
    dp = delta_prime(0.5, 1, 2)
    yield _le("rescale_delta_prime", abs(dp - 2.0 / 3.0), 1e-15)
    r = rescale_check(rescale_input(cfg.seed, (0.1, -0.05), 1.0), 0, 2, 0.5, 4.0)
    yield _le("rescale_m0", r.rel_error, 1e-10)


def check_norms(cfg: RunConfig, fm: FrameMatrix):
    U = fm.trunc.U
    s = U.scale + 1
    q = NormQuery(cfg.q, s, cfg.delta, h_xi=cfg.h_xi)
    fam = FamilySpec(2, 1, 1, 0, cfg.seed).generate(U, s, cfg.delta)
    small = estimate_P(q, fm, U, fam[:2], cap=cfg.xi_cap).value
    big = estimate_P(q, fm, U, fam, cap=cfg.xi_cap).value
    # batches of different composition may differ in the last few bits
    yield CheckResult("norm_family_monotone", small - big, 1e-12 * small,
                      big >= small * (1 - 1e-12))


def run_checks(cfg: RunConfig, fm: FrameMatrix | None, fault: bool = False,
               progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """All invariant checks; frame-dependent ones are skipped (with a warning) when the
    truncation has no wavelet scales."""
    groups = [check_alpert(cfg), check_mollifier(cfg), check_smooth(cfg), check_extension(cfg),
              check_rescale(cfg)]
    if fm is None or len(fm.trunc.scales) == 0:
        warnings.warn("empty truncation: frame, dilation, penalty, pigeonhole and norm checks "
                      "pass vacuously", stacklevel=2)
    else:
        groups += [check_frame(cfg, fm, fault), check_dilation(cfg), check_penalty(cfg, fm),
                   check_pigeonhole(cfg), check_norms(cfg, fm)]
    out = []
    for g in groups:
        for r in g:
            out.append(r)
            if progress:
                progress(r)
    return out
