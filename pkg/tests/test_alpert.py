import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from alpertext.alpert import (PiecewisePolyFunction, ChildPiecewisePoly, basis_to_json,
                              build_unit_alpert_basis, moment, monomials, n_monomials,
                              polynomial_basis, rescale_wavelet)
from alpertext.dyadic import STANDARD_GRID, UNIT_SQUARE
from alpertext.errors import InvalidParameter
from alpertext.quadrature import tensor_rule


def haar_oracle():
    """The three 2D Haar wavelets on [0,1)^2 as sign patterns over children (c = cx + 2 cy)."""
    return [np.array([-1, 1, -1, 1.0]), np.array([-1, -1, 1, 1.0]), np.array([1, -1, -1, 1.0])]


def child_values(w):
    pts = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    return np.array([w.evaluate(p) for p in pts])


def gram(basis, Q=UNIT_SQUARE):
    x0, x1, y0, y1 = Q.bounds
    r = tensor_rule(Q.bounds, [(0.5 * (x0 + x1), 0.0)], [(0.5 * (y0 + y1), 0.0)])
    X, Y = r.mesh()
    V = np.stack([w(X, Y).ravel() for w in basis])
    return (V * r.weights.ravel()) @ V.T


@pytest.mark.parametrize("kappa", [1, 2, 3, 4, 5, 6])
def test_count_is_three_m(kappa):
    assert len(build_unit_alpert_basis(kappa)) == 3 * n_monomials(kappa) == 3 * kappa * (kappa + 1) // 2


def test_kappa_two_has_nine():
    assert len(build_unit_alpert_basis(2)) == 9


@pytest.mark.parametrize("kappa", [0, -1, 1.5])
def test_invalid_kappa(kappa):
    with pytest.raises(InvalidParameter, match="build_unit_alpert_basis"):
        build_unit_alpert_basis(kappa)


def test_kappa_one_matches_haar_up_to_sign_and_order():
    vals = [child_values(w) for w in build_unit_alpert_basis(1)]
    used = set()
    for h in haar_oracle():
        hit = [i for i, v in enumerate(vals) if np.allclose(np.abs(v @ h), 4.0, atol=1e-14)]
        assert len(hit) == 1
        used.add(hit[0])
        assert np.allclose(np.abs(vals[hit[0]]), 1.0, atol=1e-14)
    assert used == {0, 1, 2}


@pytest.mark.parametrize("kappa", [1, 2, 3, 4])
def test_orthonormal(kappa):
    G = gram(build_unit_alpert_basis(kappa))
    assert np.abs(G - np.eye(len(G))).max() <= 1e-12


@pytest.mark.parametrize("kappa", [1, 2, 3, 4])
def test_vanishing_moments_exact(kappa):
    for w in build_unit_alpert_basis(kappa):
        for b in monomials(kappa):
            assert abs(moment(w, b)) <= 1e-12


def test_haar_second_moment_nonzero():
    w = build_unit_alpert_basis(1)[0]               # x-odd Haar
    # closed form: int (+-1) x^2 over halves = (1/2)(7/12 - 1/12) with the sign of the right half
    val = moment(w, (2, 0))
    right = child_values(w)[1]
    assert val == pytest.approx(np.sign(right) * 0.25, abs=1e-15)


def test_constant_moment_is_area():
    one = PiecewisePolyFunction(ChildPiecewisePoly.constant(1))
    assert moment(one, (0, 0)) == 1.0


@pytest.mark.parametrize("kappa", [1, 2, 3, 4, 5, 6])
def test_completeness_rank(kappa):
    Q = UNIT_SQUARE
    fns = build_unit_alpert_basis(kappa) + polynomial_basis(kappa, Q)
    G = gram(fns)
    assert np.linalg.matrix_rank(G, tol=1e-9) == 4 * n_monomials(kappa)
    assert np.abs(G - np.eye(len(G))).max() <= 1e-11


def test_rescale_identity_on_unit_square():
    for w in build_unit_alpert_basis(2):
        r = rescale_wavelet(w, UNIT_SQUARE)
        X, Y = np.meshgrid(np.linspace(0, 1, 33), np.linspace(0, 1, 33))
        assert np.array_equal(r(X, Y), w(X, Y))


def test_rescale_half_doubles_sup():
    Q = STANDARD_GRID.square(1, 1, 0)
    g = np.linspace(0, 1, 401, endpoint=False)
    X, Y = np.meshgrid(g, g)
    x0, _, y0, _ = Q.bounds
    for w in build_unit_alpert_basis(2):
        r = rescale_wavelet(w, Q)
        sup_w = np.abs(w(X, Y)).max()
        sup_r = np.abs(r(x0 + 0.5 * X, y0 + 0.5 * Y)).max()
        assert sup_r == pytest.approx(2 * sup_w, rel=1e-14)


@given(st.integers(0, 5), st.integers(-8, 8), st.integers(-8, 8), st.integers(0, 8))
def test_rescale_keeps_orthonormality_and_moments(s, i, j, a):
    Q = STANDARD_GRID.square(s, i, j)
    w = rescale_wavelet(build_unit_alpert_basis(3)[a], Q)
    G = gram([w], Q)
    assert abs(G[0, 0] - 1) <= 1e-12
    for b in monomials(3):
        scale = max(1.0, max(abs(v) for v in Q.bounds)) ** sum(b)
        assert abs(moment(w, b)) <= 1e-12 * scale


@given(st.integers(0, 4), st.integers(-4, 4), st.integers(-4, 4),
       st.integers(0, 2 ** 20 - 1), st.integers(0, 2 ** 20 - 1))
def test_affine_covariance(s, i, j, ku, kv):
    # dyadic offsets keep the affine map exact in floating point
    u, v = ku / 2 ** 20, kv / 2 ** 20
    Q = STANDARD_GRID.square(s, i, j)
    x0, _, y0, _ = Q.bounds
    for w in build_unit_alpert_basis(2):
        r = rescale_wavelet(w, Q)
        got = r.evaluate((x0 + u * Q.side, y0 + v * Q.side))
        ref = w.evaluate((u, v)) / Q.side
        assert abs(got - ref) <= 1e-14 * max(1.0, abs(ref)) * 4


def test_evaluate_outside_is_zero():
    for w in build_unit_alpert_basis(2):
        assert w.evaluate((1.0, 0.5)) == 0.0
        assert w.evaluate((-1e-12, 0.5)) == 0.0


def test_half_open_boundary_goes_to_upper_child():
    w = build_unit_alpert_basis(1)[0]
    assert w.evaluate((0.5, 0.25)) == child_values(w)[1]
    assert w.evaluate((0.0, 0.0)) == child_values(w)[0]


def test_l2_norm_by_riemann_sum():
    # midpoint error is O(n^-2); n = 4096 keeps it well below the tolerance
    n = 4096
    g = (np.arange(n) + 0.5) / n
    for w in build_unit_alpert_basis(2):
        tot = sum(np.sum(w(*np.meshgrid(g, g[k:k + 512])) ** 2) for k in range(0, n, 512))
        assert tot / n ** 2 == pytest.approx(1.0, abs=1e-6)


def test_json_export():
    data = json.loads(basis_to_json(3))
    assert data["kappa"] == 3 and data["m"] == 6 and data["d"] == 18
    assert len(data["wavelets"]) == 18
    assert np.array(data["wavelets"][0]["coef"]).shape == (4, 6)


def test_exact_rationals_used():
    w = build_unit_alpert_basis(2)[4]
    assert all(isinstance(v, Fraction) for row in w.rep.exact for v in row)
