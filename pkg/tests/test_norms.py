import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alpertext.alpert import build_unit_alpert_basis, rescale_wavelet
from alpertext.dyadic import default_root, squares_at_scale
from alpertext.errors import GeometryError, InvalidExponent, InvalidParameter, ResolutionError
from alpertext.extension import ExtensionField, FreqGrid
from alpertext.frame import TruncationSpec, frame_matrix, span_function
from alpertext.norms import (FamilySpec, NormQuery, bootstrap_growth, cell_phases, cell_signs,
                             delta_prime, dilated_family_check, estimate_P, estimate_tail,
                             estimate_trilinear, explicit, family_triple_groups, fit_growth, grid_sensitivity, knapp,
                             local_norm, projector, rescale_check, rescale_input,
                             richardson_check, translated_root, working_triples)
from alpertext.quadrature import sample
from alpertext.smoothing import smooth_wavelet

ETA = 2.0 ** -6
U = default_root()
S2 = U.scale + 1
S3 = U.scale + 2


@pytest.fixture(scope="module")
def fm2():
    return frame_matrix(TruncationSpec(U, S2, 2), ETA)


@pytest.fixture(scope="module")
def fm3():
    return frame_matrix(TruncationSpec(U, S3, 2), ETA)


def zero_fn():
    return explicit(U, lambda X, Y: np.zeros_like(X), note="zero")


# ---------------------------------------------------------------- local norms


def test_local_norm_zero_and_constant():
    z = sample(lambda X, Y: 0 * X, U.bounds, xi_max=8)
    grid = FreqGrid.ball(4.0, 0.25)
    assert local_norm(ExtensionField([z], grid), 4.0) == 0.0
    # a field whose extension is the constant area 1/4 on a tiny ball: |E f| ~ 1/4 near 0
    one = sample(lambda X, Y: np.ones_like(X), U.bounds, xi_max=8)
    pts = FreqGrid.ball(0.5, 0.25)
    ef = ExtensionField([one], pts)
    vol = pts.count() * pts.cell_volume
    v = local_norm(ef, 4.0)
    assert v == pytest.approx(0.25 * vol ** 0.25, rel=0.05)


def test_local_norm_rejects_point_lists():
    one = sample(lambda X, Y: np.ones_like(X), U.bounds, xi_max=8)
    with pytest.raises(InvalidParameter):
        local_norm(ExtensionField([one], FreqGrid.points([[0.0, 0.0, 0.0]])), 4.0)


def test_richardson_self_check(fm2):
    q = NormQuery(4.0, S2, 0.5)
    f = projector(fm2, U, S2, q.outer).field(cell_signs(U, S2 + 1, 0, 0))
    assert richardson_check(f, q) <= 0.01


def test_norm_query_validation():
    with pytest.raises(InvalidExponent):
        NormQuery(3.0, 2, 0.5)
    with pytest.raises(InvalidParameter):
        NormQuery(4.0, 2, 1.0)
    with pytest.raises(ResolutionError):
        NormQuery(4.0, 2, 0.5, h_xi=0.5)
    with pytest.raises(InvalidParameter):
        NormQuery(4.0, 2, 0.5, region="annulus")
    with pytest.raises(InvalidParameter):
        NormQuery(4.0, 2, 0.5, region="complement", cap_radius=8.0)
    q = NormQuery(4.0, 2, 0.5)
    assert q.radius == 16.0
    assert NormQuery(4.0, 2, 0.5, region="annulus", r=3).outer == 8.0
    with pytest.raises(ResolutionError):
        NormQuery(4.0, 6, 0.5).check_cap(2.0 ** 8)


# ---------------------------------------------------------------- families


def test_family_members_are_bounded_by_one():
    fam = FamilySpec(8, 8, 4, 0, seed=3).generate(U, S3, 0.5)
    X, Y = np.meshgrid(np.linspace(-0.3, 0.3, 97), np.linspace(-0.3, 0.3, 97))
    # unit phases exp(i theta) have modulus 1 up to rounding
    tol = 1.0 + 4 * np.finfo(float).eps
    for f in fam:
        assert f.sup <= tol
        assert np.abs(f(X, Y)).max() <= tol
    assert len(fam) == FamilySpec(8, 8, 4).size


def test_family_is_seeded():
    a = cell_phases(U, 3, 5, 2)
    b = cell_phases(U, 3, 5, 2)
    assert np.array_equal(a.cells, b.cells)
    assert not np.array_equal(a.cells, cell_phases(U, 3, 6, 2).cells)
    k = knapp(U, 3, 0.5, 1, 0)
    assert k.sup == 1.0 and k.record()["kind"] == "knapp"
    with pytest.raises(InvalidParameter):
        cell_signs(U, 0, 0, 0)


# ---------------------------------------------------------------- estimate_P


def test_estimate_P_zero_family(fm2):
    q = NormQuery(4.0, S2, 0.5)
    assert estimate_P(q, fm2, U, [zero_fn()]).value == 0.0
    assert estimate_P(q, fm2, U, []).value == 0.0


def test_estimate_P_monotone_in_family(fm2):
    q = NormQuery(4.0, S2, 0.5)
    fam = FamilySpec(4, 2, 1, 0, seed=1).generate(U, S2, 0.5)
    small = estimate_P(q, fm2, U, fam[:3]).value
    big = estimate_P(q, fm2, U, fam).value
    assert big >= small * (1 - 1e-12)
    assert small > 0


def test_estimate_P_witness_reproduces(fm2):
    q = NormQuery(4.0, S2, 0.5)
    fam = FamilySpec(3, 3, 0, 0, seed=2).generate(U, S2, 0.5)
    est = estimate_P(q, fm2, U, fam)
    k = int(np.argmax(est.values))
    assert est.witness == fam[k].record()
    again = estimate_P(q, fm2, U, [fam[k]]).value
    assert again == pytest.approx(est.value, rel=1e-12)


def test_estimate_P_linear_scaling(fm2):
    q = NormQuery(4.0, S2, 0.5)
    f = cell_signs(U, S2 + 1, 4, 0)
    base = estimate_P(q, fm2, U, [f]).value
    # the estimate divides by ||f||_inf, so a scaled input gives the same ratio
    assert estimate_P(q, fm2, U, [f.scaled(0.5)]).value == pytest.approx(base, rel=1e-10)
    proj = projector(fm2, U, S2, q.outer)
    a = local_norm(ExtensionField([proj.field(f)], q.grid()), q.q)
    b = local_norm(ExtensionField([proj.field(f.scaled(0.5))], q.grid()), q.q)
    assert b == pytest.approx(0.5 * a, rel=1e-10)


def test_hill_climb_never_decreases(fm2):
    q = NormQuery(4.0, S2, 0.5)
    fam = FamilySpec(2, 1, 0, 0, seed=5).generate(U, S2, 0.5)
    plain = estimate_P(q, fm2, U, fam).value
    est = estimate_P(q, fm2, U, fam, hill_climb_budget=8, seed=5)
    assert est.value >= plain
    assert np.all(np.diff(est.extra["hill_climb_trace"]) >= 0)


def test_estimate_P_parallel_identical(fm2):
    q = NormQuery(4.0, S2, 0.5)
    fam = FamilySpec(9, 0, 0, 0, seed=6).generate(U, S2, 0.5)
    a = estimate_P(q, fm2, U, fam, jobs=1)
    b = estimate_P(q, fm2, U, fam, jobs=2)
    assert np.array_equal(a.values, b.values)


def test_estimate_P_cap_refusal(fm2):
    q = NormQuery(4.0, S2, 0.5)
    with pytest.raises(ResolutionError):
        estimate_P(q, fm2, U, [zero_fn()], cap=8.0)


# ---------------------------------------------------------------- trilinear

TRI_DELTA = 0.25          # keeps the ball radius 2^{S3/(1-delta)} = 16 small


def test_working_triples_geometry():
    assert len(working_triples(U, 0.125, S3)) == 140
    assert len(working_triples(U, 0.125, S3, limit=5)) == 5
    with pytest.raises(GeometryError):
        working_triples(U, 0.25, S2)          # four squares cannot hold a separated triple
    with pytest.raises(GeometryError):
        working_triples(U, 0.125, S2)         # finer than the working scale
    with pytest.raises(GeometryError):
        working_triples(U, 0.3, S3)


def test_trilinear_zero_factor(fm3):
    q = NormQuery(4.0, S3, TRI_DELTA)
    fam = [zero_fn(), cell_signs(U, S3 + 1, 0, 0), cell_signs(U, S3 + 1, 0, 1)]
    est = estimate_trilinear(q, 0.125, fm3, U, fam, max_square_triples=3)
    ftrip = [ft for g in family_triple_groups(3) for ft in g]
    assert all(v == 0.0 for ft, v in zip(ftrip, est.values) if 0 in ft)
    assert est.value == max(v for ft, v in zip(ftrip, est.values) if 0 not in ft) > 0


def test_trilinear_holder_and_symmetry(fm3):
    q = NormQuery(4.0, S3, TRI_DELTA)
    fam = [cell_signs(U, S3 + 1, 1, k) for k in range(3)]
    est = estimate_trilinear(q, 0.125, fm3, U, fam, max_square_triples=4, seed=1)
    assert est.value > 0
    assert est.holder_ok and est.holder_margin >= 1 - 1e-9
    # a cyclic shift of the family yields the same set of function triples
    rot = estimate_trilinear(q, 0.125, fm3, U, fam[1:] + fam[:1], max_square_triples=4, seed=1)
    assert rot.value == pytest.approx(est.value, rel=1e-9)
    assert sorted(rot.values) == pytest.approx(sorted(est.values), rel=1e-9)


@given(st.integers(0, 40), st.integers(0, 40))
def test_family_triples_are_nested(m, n):
    m, n = sorted((m, n))
    small = {ft for g in family_triple_groups(m) for ft in g}
    big = {ft for g in family_triple_groups(n) for ft in g}
    assert small <= big
    assert all(max(ft) < max(n, 1) and len(set(g[0])) == 1 for g in family_triple_groups(n) for ft in g)


def test_trilinear_monotone_in_family(fm3):
    q = NormQuery(4.0, S3, TRI_DELTA)
    fam = [cell_signs(U, S3 + 1, 2, k) if k % 2 else cell_phases(U, S3 + 1, 2, k) for k in range(5)]
    small = estimate_trilinear(q, 0.125, fm3, U, fam[:3], max_square_triples=2)
    big = estimate_trilinear(q, 0.125, fm3, U, fam, max_square_triples=2)
    assert big.value >= small.value * (1 - 1e-12)


def test_trilinear_cubic_scaling(fm3):
    q = NormQuery(4.0, S3, TRI_DELTA)
    fam = [cell_signs(U, S3 + 1, 2, k) for k in range(3)]
    est = estimate_trilinear(q, 0.125, fm3, U, fam, max_square_triples=2)
    half = estimate_trilinear(q, 0.125, fm3, U, [f.scaled(0.5) for f in fam],
                              max_square_triples=2)
    # ratios to prod ||f_k||_inf are invariant, the raw norm scales by t^3
    assert half.value == pytest.approx(est.value, rel=1e-9)
    raw = est.witness["linear_norms"]
    raw_half = half.witness["linear_norms"]
    assert np.prod(raw_half) == pytest.approx(0.125 * np.prod(raw), rel=1e-9)


def test_trilinear_geometry_error(fm2):
    q = NormQuery(4.0, S2, 0.5)
    with pytest.raises(GeometryError):
        estimate_trilinear(q, 0.25, fm2, U, [cell_signs(U, S2 + 1, 0, k) for k in range(3)])


# ---------------------------------------------------------------- tail


def test_tail_zero_input(fm2):
    q = NormQuery(4.0, S2, 0.5)
    t = estimate_tail(q, zero_fn(), fm2, U, 32.0)
    assert t.value == 0.0 and t.ratio == 0.0 and t.extrapolated == 0.0


def test_tail_cap_radius_checks(fm2):
    q = NormQuery(4.0, S2, 0.5)
    with pytest.raises(InvalidParameter):
        estimate_tail(q, zero_fn(), fm2, U, 16.0)
    with pytest.raises(ResolutionError):
        estimate_tail(q, zero_fn(), fm2, U, 64.0, cap=32.0)


def test_tail_shells_decay(fm2):
    q = NormQuery(4.0, S2, 0.5)
    f = cell_signs(U, S2 + 1, 7, 0)
    t = estimate_tail(q, f, fm2, U, 64.0)
    assert [round(a) for a, _, _ in t.shells] == [16, 32]
    assert t.decay_ratio < t.ratio
    assert t.extrapolated >= t.value


def test_tail_ratio_decreases_with_kappa():
    # fixed input: one smoothed kappa = 2 wavelet, projected with kappa = 2 and kappa = 4 frames
    Q = squares_at_scale(U.grid, S2, U)[0]
    f = smooth_wavelet(rescale_wavelet(build_unit_alpert_basis(2)[0], Q), ETA).expansion
    q = NormQuery(4.0, S2, 0.5)
    ratios = [estimate_tail(q, f, frame_matrix(TruncationSpec(U, S2, k), ETA), U, 64.0).ratio
              for k in (2, 4)]
    assert ratios[1] < ratios[0], ratios


# ---------------------------------------------------------------- rescaling


def test_delta_prime():
    assert delta_prime(0.5, 1, 2) == pytest.approx(2 / 3, abs=1e-15)
    assert delta_prime(0.5, 0, 2) == 0.5
    with pytest.raises(InvalidParameter):
        delta_prime(0.5, 2, 2)


def test_rescale_identity_at_m0():
    r = rescale_check(rescale_input(0, (0.1, -0.05), 1.0), 0, 2, 0.5, 4.0)
    assert r.rel_error <= 1e-10


def test_rescale_requires_s_above_m():
    with pytest.raises(InvalidParameter):
        rescale_check(rescale_input(0, (0.1, -0.05), 0.5), 1, 1, 0.5, 4.0)


def test_rescale_random_input():
    r = rescale_check(rescale_input(1, (0.1, -0.05), 0.5), 1, 3, 0.5, 4.0)
    assert r.rel_error <= 1e-3
    assert r.delta_prime == pytest.approx(delta_prime(0.5, 1, 3))


# ---------------------------------------------------------------- dilation and growth


def test_dilated_family_check(fm2):
    f = span_function(fm2, np.random.default_rng(0))
    assert dilated_family_check(0, S2, f, fm2) == 0.0
    Q = squares_at_scale(U.grid, S2, U)[1]
    w = rescale_wavelet(build_unit_alpert_basis(2)[3], Q)
    assert dilated_family_check(1, S2, w, fm2) <= 1e-6
    with pytest.raises(InvalidParameter):
        dilated_family_check(S2, S2, w, fm2)


def test_fit_growth_recovers_slope():
    s = np.array([2, 3, 4])
    vals = 2.0 ** (0.3 * s / 0.5)
    assert fit_growth(s, vals, 0.5) == pytest.approx(0.3, abs=1e-12)
    assert math.isnan(fit_growth([2], [1.0], 0.5))


def test_bootstrap_interval_contains_estimate():
    rng = np.random.default_rng(0)
    s = [2, 3, 4]
    members = [2.0 ** (0.25 * k / 0.5) * rng.uniform(0.5, 1.0, 20) for k in s]
    est, lo, hi = bootstrap_growth(s, members, 0.5, n_boot=200, seed=1)
    assert lo <= est <= hi or math.isclose(est, hi, rel_tol=1e-9)
    again = bootstrap_growth(s, members, 0.5, n_boot=200, seed=1)
    assert again == (est, lo, hi)


# ---------------------------------------------------------------- grid translates


def test_translated_root_geometry():
    V = translated_root((Fraction(1, 16), Fraction(-1, 32)))
    x0, x1, y0, y1 = V.bounds
    assert (x0, x1) == (-0.1875, 0.3125) and (y0, y1) == (-0.28125, 0.21875)
    with pytest.raises(InvalidParameter):
        translated_root((Fraction(1, 8), Fraction(1, 8)))


def test_grid_sensitivity_reports_base_and_translates():
    q = NormQuery(4.0, S2, 0.5)
    fam = FamilySpec(2, 1, 1, 0, seed=0)
    g = grid_sensitivity(q, fam, 2, ETA, 2, seed=0)
    assert g.offsets[0] == (0.0, 0.0) and len(g.values) == 3
    base = estimate_P(q, frame_matrix(TruncationSpec(U, S2, 2), ETA), U,
                      fam.generate(U, S2, 0.5)).value
    assert g.values[0] == pytest.approx(base, rel=1e-12)
    assert np.all(g.values > 0) and 0 <= g.spread < 1
    again = grid_sensitivity(q, fam, 2, ETA, 2, seed=0)
    assert np.array_equal(again.values, g.values)
