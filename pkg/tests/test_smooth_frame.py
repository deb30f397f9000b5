import math

import numpy as np
import pytest

from alpertext.alpert import build_unit_alpert_basis, monomials, rescale_wavelet
from alpertext.dyadic import STANDARD_GRID, UNIT_SQUARE, default_root, squares_at_scale
from alpertext.errors import (ConfigurationError, FrameDegenerate, InvalidParameter,
                              OutOfRange)
from alpertext.frame import (TruncationSpec, dilate_Lp, fine_points, frame_matrix,
                             project_scale, pseudoproject, reconstruct, span_function,
                             span_reconstruction, span_square_ratios, square_function,
                             sup_norm_penalty_check,
                             verify_dilation_commutation)
from alpertext.mollifier import (build_mollifier, clipped_moments, moment_indices,
                                 n_even_degrees)
from alpertext.quadrature import tensor_rule
from alpertext.smoothing import l2_distance, smooth_wavelet

ETA = 2.0 ** -6
U = default_root()


@pytest.fixture(scope="module")
def fm2():
    return frame_matrix(TruncationSpec(U, U.scale + 1, 2), ETA)


@pytest.fixture(scope="module")
def fm3():
    return frame_matrix(TruncationSpec(U, U.scale + 2, 2), ETA)


# ---------------------------------------------------------------- mollifier


@pytest.mark.parametrize("kappa,J", [(1, 0), (2, 0), (3, 1), (4, 1), (5, 2), (6, 2)])
def test_mollifier_degree_count(kappa, J):
    assert n_even_degrees(kappa) == J
    assert build_mollifier(kappa).J == J


@pytest.mark.parametrize("kappa", [1, 2, 3, 4])
def test_mollifier_moments(kappa):
    phi = build_mollifier(kappa)
    assert abs(phi.moment((0, 0)) - 1) <= 1e-8
    for g in moment_indices(kappa)[1:]:
        assert abs(phi.moment(g)) <= 1e-8


def test_mollifier_k4_second_moment_by_cartesian_quadrature():
    # independent oracle: tensor Gauss-Legendre on the disk's bounding box, split at the origin
    phi = build_mollifier(4)
    r = tensor_rule((-1.0, 1.0, -1.0, 1.0), [(0.0, 0.0)], [(0.0, 0.0)], refine=16)
    X, Y = r.mesh()
    v = phi(X, Y)
    assert abs(r.integrate(v) - 1) <= 1e-8
    assert abs(r.integrate(v * X ** 2)) <= 1e-8
    assert abs(r.integrate(v * X * Y)) <= 1e-8


def test_mollifier_support_and_invalid():
    phi = build_mollifier(2)
    assert phi(np.array([1.0, 1.5]), np.array([0.0, 0.0])).tolist() == [0.0, 0.0]
    assert phi(0.0, 0.0) > 0
    with pytest.raises(InvalidParameter):
        build_mollifier(0)


def test_clipped_tables_reproduce_full_moments():
    cm = clipped_moments(3)
    for g in moment_indices(3):
        full = cm.rect(g, -1.0, 1.0, -1.0, 1.0)
        assert abs(full - build_mollifier(3).moment(g)) <= 1e-9


# ---------------------------------------------------------------- smooth wavelets


@pytest.mark.parametrize("kappa", [1, 2, 3, 4])
def test_smooth_wavelet_moments(kappa):
    for w in build_unit_alpert_basis(kappa):
        sw = smooth_wavelet(w, ETA)
        for b in monomials(kappa):
            assert abs(sw.moment(b)) <= 1e-6


def test_smooth_wavelet_first_moment_on_small_square():
    Q = STANDARD_GRID.square(3, 2, 5)
    for w in build_unit_alpert_basis(2):
        assert abs(smooth_wavelet(rescale_wavelet(w, Q), ETA).moment((1, 0))) <= 1e-6


def test_smooth_wavelet_support():
    sw = smooth_wavelet(build_unit_alpert_basis(2)[0], ETA)
    x0, x1, y0, y1 = sw.support()
    assert x0 >= -ETA - 1e-15 and x1 <= 1 + ETA + 1e-15
    assert y0 >= -ETA - 1e-15 and y1 <= 1 + ETA + 1e-15
    assert sw(np.array([-ETA - 1e-3]), np.array([0.5]))[0] == 0.0


def test_smooth_wavelet_rejects_nonpositive_eta():
    with pytest.raises(InvalidParameter):
        smooth_wavelet(build_unit_alpert_basis(1)[0], 0.0)


def _l2_gap(w, eta):
    sw = smooth_wavelet(w, eta)
    return l2_distance(sw.expansion, sw.expansion.unsmoothed())


def test_smoothing_error_shrinks_with_eta():
    w = build_unit_alpert_basis(2)[0]
    gaps = [_l2_gap(w, 2.0 ** -k) for k in range(4, 9)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_smoothing_error_at_finest_eta():
    """L2 distance between a wavelet and its mollified version at eta = 2^-8, target 0.05."""
    worst = max(_l2_gap(w, 2.0 ** -8) for w in build_unit_alpert_basis(2))
    assert worst <= 0.05


# ---------------------------------------------------------------- frame operator


def test_eta_zero_gives_identity():
    fm = frame_matrix(TruncationSpec(U, U.scale, 2), 0.0)
    assert np.array_equal(fm.M, np.eye(fm.size))


def test_diagonal_below_one_and_increasing_as_eta_shrinks():
    trunc = TruncationSpec(U, U.scale, 2)
    diags = [np.diag(frame_matrix(trunc, 2.0 ** -k).M)[trunc.m:] for k in range(4, 9)]
    for d in diags:
        assert np.all(d < 1)
    for a, b in zip(diags, diags[1:]):
        assert np.all(b > a)


def test_truncation_size_formula():
    for S in (1, 2, 3):
        t = TruncationSpec(U, S, 2)
        assert t.size == t.m + sum(3 * t.m * 4 ** (s - U.scale) for s in range(U.scale, S + 1))
        assert len(t.labels()) == t.size


def test_large_eta_is_degenerate():
    with pytest.raises(FrameDegenerate):
        frame_matrix(TruncationSpec(U, U.scale + 1, 2), 2.0)


def test_kappa_mismatch():
    with pytest.raises(ConfigurationError):
        frame_matrix(TruncationSpec(U, U.scale, 2), ETA, kappa=3)


def test_neumann_matches_direct(fm3):
    rng = np.random.default_rng(5)
    rhs = rng.standard_normal(fm3.size)
    a = fm3.solve(rhs)
    b = fm3.solve(rhs, "neumann", tol=1e-12)
    assert np.abs(a - b).max() <= 1e-8
    assert fm3.deviation < 1 and fm3.cond < 1e6


def test_column_is_analysis_of_smooth_element(fm2):
    for i in (0, 5, fm2.size - 1):
        col = fm2.analysis(fm2.element(i))
        assert np.abs(col - fm2.M[:, i]).max() <= 1e-12


def test_pseudoproject_reproduces_element(fm2):
    I = squares_at_scale(U.grid, U.scale + 1, U)[2]
    for a in (0, 4, 8):
        i = fm2.trunc.index(I, a)
        e = fm2.element(i)
        c = fm2.coefficients(e)
        unit = np.zeros(fm2.size)
        unit[i] = 1
        assert np.abs(c.values - unit).max() <= 1e-8
        p = pseudoproject(e, I, fm2)
        X, Y = fine_points(e)
        assert np.abs(p(X, Y) - e(X, Y)).max() <= 1e-8


def test_pseudoproject_zero_and_far_polynomial(fm2):
    I = squares_at_scale(U.grid, U.scale + 1, U)[0]
    assert not pseudoproject(lambda X, Y: 0 * X, I, fm2).parts
    far = lambda X, Y: np.where((X > 0.3) & (Y > 0.3), 1 + X, 0.0)  # noqa: E731
    p = pseudoproject(far, I, fm2)
    X, Y = fine_points(U.bounds)
    assert np.abs(p(X, Y)).max() <= 1e-8


def test_pseudoproject_outside_truncation(fm2):
    with pytest.raises(OutOfRange):
        pseudoproject(lambda X, Y: X, STANDARD_GRID.square(5, 0, 0), fm2)


def test_project_scale_selects_one_scale(fm2):
    s_lo, s_hi = U.scale, U.scale + 1
    i = fm2.trunc.index(squares_at_scale(U.grid, s_hi, U)[1], 3)
    e = fm2.element(i)
    X, Y = fine_points(e)
    same = project_scale(e, s_hi, U, fm2)
    assert np.abs(same(X, Y) - e(X, Y)).max() <= 1e-8
    other = project_scale(e, s_lo, U, fm2)
    assert np.abs(other(X, Y)).max() <= 1e-8
    outside = project_scale(lambda X, Y: 0 * X, s_hi, U, fm2)
    assert not outside.parts
    with pytest.raises(OutOfRange):
        project_scale(e, U.scale + 5, U, fm2)


def test_reconstruct_span(fm3):
    rng = np.random.default_rng(0)
    for _ in range(3):
        f = span_function(fm3, rng)
        _, res = reconstruct(f, fm3)
        assert res <= 1e-6
    rec, res = reconstruct(lambda X, Y: 0 * X, fm3)
    assert res == 0.0 and not rec.parts


def test_batched_span_paths_match_single_calls(fm2):
    rng = np.random.default_rng(3)
    C0 = rng.standard_normal((fm2.size, 3))
    res = span_reconstruction(fm2, C0)
    ratios = span_square_ratios(fm2, C0, p=2)
    for k in range(3):
        f = fm2.expansion(C0[:, k])
        assert res[k] <= 1e-10
        assert abs(res[k] - reconstruct(f, fm2)[1]) <= 1e-12
        assert ratios[k] == pytest.approx(square_function(f, fm2).ratios[2], rel=1e-10)


def test_reconstruct_residual_tracks_tolerance(fm2):
    f = span_function(fm2, np.random.default_rng(1))
    res = [reconstruct(f, fm2, "neumann", tol)[1] for tol in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert all(b <= a for a, b in zip(res, res[1:]))
    assert res[-1] <= 1e-8


def test_square_function_single_wavelet(fm2):
    e = fm2.element(fm2.trunc.index(squares_at_scale(U.grid, U.scale + 1, U)[3], 2))
    r = square_function(e, fm2, ps=(2, 4))
    assert r.ratios[2] == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(r.values, np.abs(e(r.X, r.Y)), atol=1e-8)
    z = square_function(lambda X, Y: 0 * X, fm2)
    assert z.ratios[2] == 0.0 and np.all(z.values == 0)


def test_square_function_ratio_bounded(fm2):
    rng = np.random.default_rng(2)
    ratios = [square_function(span_function(fm2, rng), fm2).ratios[2] for _ in range(5)]
    assert all(0.25 < r < 4 for r in ratios)


# ---------------------------------------------------------------- dilations


def test_dilate_identity_and_norms(fm2):
    f = span_function(fm2, np.random.default_rng(3))
    assert dilate_Lp(f, 0, 2.0) is f
    g = dilate_Lp(f, 1, 2.0)
    rf = tensor_rule(f.bounds(), *f.features())
    rg = tensor_rule(g.bounds(), *g.features())
    nf = math.sqrt(rf.integrate(np.abs(f(*rf.mesh())) ** 2))
    ng = math.sqrt(rg.integrate(np.abs(g(*rg.mesh())) ** 2))
    assert abs(nf - ng) <= 1e-10 * nf
    ginf = dilate_Lp(f, 1, math.inf)
    Xf, Yf = fine_points(f)
    assert np.allclose(ginf(2 * Xf, 2 * Yf), f(Xf, Yf), rtol=0, atol=1e-12)
    callable_g = dilate_Lp(lambda X, Y: X + Y, 2, math.inf)
    assert callable_g(np.array([4.0]), np.array([8.0]))[0] == 3.0
    with pytest.raises(InvalidParameter):
        dilate_Lp(f, 1, 1.0)


def test_commutation_m0_and_single_wavelet(fm2):
    I = squares_at_scale(U.grid, U.scale + 1, U)[1]
    e = fm2.element(fm2.trunc.index(I, 5))
    assert verify_dilation_commutation(I, 0, 2.0, e, fm2) == 0.0
    assert verify_dilation_commutation(I, 1, 2.0, e, fm2) <= 1e-6


def test_commutation_random_span(fm2):
    f = span_function(fm2, np.random.default_rng(4))
    I = squares_at_scale(U.grid, U.scale + 1, U)[2]
    assert verify_dilation_commutation(I, 1, 4.0, f, fm2) <= 1e-5


def test_commutation_truncation_mismatch(fm2):
    other = frame_matrix(TruncationSpec(U, U.scale, 2), ETA)
    with pytest.raises(ConfigurationError):
        verify_dilation_commutation(U, 1, 2.0, lambda X, Y: X, fm2, fm_dilated=other)


# ---------------------------------------------------------------- penalty ratio


def test_penalty_zero_and_normalizer_algebra(fm3):
    s = U.scale + 2
    assert sup_norm_penalty_check(lambda X, Y: 0 * X, s, 4.0, fm3) == 0.0
    rng = np.random.default_rng(6)
    cells = rng.choice([-1.0, 1.0], size=(8, 8))

    def f(X, Y):
        i = np.clip(np.floor((X + 0.25) * 16).astype(int), 0, 7)
        j = np.clip(np.floor((Y + 0.25) * 16).astype(int), 0, 7)
        return cells[i, j] * ((np.abs(X) < 0.25) & (np.abs(Y) < 0.25))
    r2 = sup_norm_penalty_check(f, s, 2.0, fm3)
    r8 = sup_norm_penalty_check(f, s, 8.0, fm3)
    assert r2 <= r8 * 2.0 ** (2 * s * (0.5 - 0.125)) * (1 + 1e-12)
    assert r2 == pytest.approx(r8 * 2.0 ** (2 * s / 8 - 2 * s / 2), rel=1e-12)
