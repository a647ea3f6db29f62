import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisson_stopping.market import (
    MarketParams,
    dual_vertices,
    generator_eval,
    generator_via_dual,
    h3_ratios,
    lipschitz_bound,
    payoff,
    validate_assumptions,
)

P = MarketParams()
finite = st.floats(-5, 5, allow_nan=False)


def test_payoff_examples():
    assert payoff(4, 1.0, P) == pytest.approx(0.4641, abs=1e-12)
    assert payoff(0, 2.0, P) == 0.0
    assert payoff(2, 1.0, P) == pytest.approx(0.21, abs=1e-12)
    # levels above the cap reuse the cap strike
    assert payoff(7, 1.0, P) == payoff(4, 1.0, P)


@given(st.integers(0, 6), st.floats(0, 5), st.floats(0, 5))
def test_payoff_shape(i, a, b):
    lo, hi = min(a, b), max(a, b)
    assert payoff(i, lo, P) >= payoff(i, hi, P)
    assert abs(payoff(i, a, P) - payoff(i, b, P)) <= abs(a - b) + 1e-15
    assert payoff(i + 1, a, P) >= payoff(i, a, P)
    mid = 0.5 * (a + b)
    assert payoff(i, mid, P) <= 0.5 * (payoff(i, a, P) + payoff(i, b, P)) + 1e-15


def test_generator_examples():
    assert generator_eval(0.0, 0.0, 0.0, P) == 0.0
    assert generator_eval(1.0, 0.0, 0.0, P, eta_active=False) == pytest.approx(-0.02)
    assert generator_eval(-1.0, 0.0, 0.0, P, eta_active=False) == pytest.approx(0.05)


def test_generator_rejects_eta_zero_when_active():
    with pytest.raises(ValueError):
        generator_eval(1.0, 0.0, 0.0, MarketParams(eta=0.0, k=0))
    # the inactive regime ignores c entirely
    p0 = MarketParams(eta=0.0, k=0)
    assert generator_eval(1.0, 0.3, 7.0, p0, eta_active=False) == generator_eval(1.0, 0.3, 0.0, p0, eta_active=False)


def test_generator_matches_formula_by_hand():
    # x = y - z/sigma - c/eta = 1 - 1 - 2 = -2 ; z/sigma = 1 ; c/eta = 2
    val = generator_eval(1.0, 0.2, 0.2, P)
    by_hand = 0.05 * 2 - 0.03 * 1 - P.mu2 * 2
    assert val == pytest.approx(by_hand, abs=1e-15)


def test_vertex_counts():
    lin = MarketParams(r_low=0.03, r_high=0.03)
    assert len(dual_vertices(lin)) == 1
    # rate spread only: the mu1 and mu2 intervals are points, so 2 corners
    assert len(dual_vertices(P)) == 2
    assert len(dual_vertices(P.replace(mu1_low=0.02, mu1_high=0.04))) == 4


def test_vertex_enumeration_by_hand():
    v = dual_vertices(P).vertices
    expected = []
    for a in (-0.05, -0.02):
        beta = (-0.03 - a) / 0.2
        gamma = (-P.mu2 - a) / 0.1
        expected.append((a, beta, gamma))
    np.testing.assert_allclose(v, np.array(sorted(expected)), atol=1e-15)


def test_vertices_in_box_and_gamma_bound():
    for p in (P, P.replace(mu1_low=0.0, mu1_high=0.1), P.replace(lam=1.0, r_high=0.3)):
        v = dual_vertices(p).vertices
        a, b, g = v.T
        assert np.all((-p.r_high - 1e-15 <= a) & (a <= -p.r_low + 1e-15))
        assert np.all((-p.mu1_high - 1e-15 <= a + p.sigma * b) & (a + p.sigma * b <= -p.mu1_low + 1e-15))
        np.testing.assert_allclose(a + p.eta * g, -p.mu2, atol=1e-15)
        if validate_assumptions(p):
            assert g.min() >= -p.lam - 1e-12


def test_dual_identity_on_random_points():
    rng = np.random.default_rng(0)
    y, z, c = rng.uniform(-5, 5, size=(3, 10_000))
    for p in (P, P.replace(mu1_low=0.01, mu1_high=0.06), MarketParams(r_low=0.03, r_high=0.03)):
        err = np.abs(generator_eval(y, z, c, p) - generator_via_dual(y, z, c, dual_vertices(p)))
        assert err.max() <= 1e-12


def test_dual_single_vertex_and_empty():
    lin = MarketParams(r_low=0.03, r_high=0.03)
    verts = dual_vertices(lin)
    a, b, g = verts.vertices[0]
    assert generator_via_dual(0.7, -1.1, 0.4, verts) == pytest.approx(a * 0.7 + b * -1.1 + g * 0.4, abs=1e-15)
    assert generator_via_dual(0.0, 0.0, 0.0, verts) == 0.0
    empty = type(verts)(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        generator_via_dual(1.0, 1.0, 1.0, empty)


@settings(max_examples=200)
@given(finite, finite, finite, finite, finite, finite, st.sampled_from([0.25, 0.5, 0.75]))
def test_generator_convex(y1, z1, c1, y2, z2, c2, t):
    f1 = generator_eval(y1, z1, c1, P)
    f2 = generator_eval(y2, z2, c2, P)
    fm = generator_eval(t * y1 + (1 - t) * y2, t * z1 + (1 - t) * z2, t * c1 + (1 - t) * c2, P)
    assert fm <= t * f1 + (1 - t) * f2 + 1e-12


def test_lipschitz_ratio_below_bound():
    rng = np.random.default_rng(1)
    for p in (P, P.replace(mu1_low=-0.1, mu1_high=0.2, r_high=0.4)):
        a = rng.uniform(-5, 5, size=(3, 10_000))
        b = a + rng.normal(scale=0.5, size=a.shape)
        df = np.abs(generator_eval(*a, p) - generator_eval(*b, p))
        dist = np.abs(a - b).sum(axis=0)
        assert np.max(df / dist) <= lipschitz_bound(p) + 1e-12


def test_h3_ratio_on_valid_params():
    assert h3_ratios(P).min() >= -1 - 1e-10
    # the ratio is exactly (r/eta - lam)/lam on the active rate, so -1 is attained only at r = 0
    r = h3_ratios(P.replace(r_low=0.0, r_high=0.0))
    np.testing.assert_allclose(r, -1.0, atol=1e-12)


def test_validation_examples():
    rep = validate_assumptions(P)
    assert rep.passed and rep.violations == []
    bad = validate_assumptions(P.replace(r_low=-0.01))
    assert not bad.passed
    assert "r_low >= 0 for eta > 0" in bad.violations
    neg = validate_assumptions(P.replace(eta=-1.5))
    assert not neg.passed
    assert "eta > -1" in neg.violations


def test_validation_reports_not_raises():
    rep = validate_assumptions(MarketParams(sigma=-1, lam=0, T=0, r_low=0.1, r_high=0.0))
    assert not rep
    assert {"sigma > 0", "lambda > 0", "T > 0", "r_low <= r_high"} <= set(rep.violations)
    assert "eta != 0 when k >= 1" in validate_assumptions(P.replace(eta=0.0)).violations


def test_validation_flags_negative_eta_with_positive_rate():
    rep = validate_assumptions(P.replace(eta=-0.1))
    assert "r_high <= 0 for eta < 0" in rep.violations


def test_h3_agrees_with_validation():
    # whenever validation passes the sampled ratio stays above -1
    grid = itertools.product([0.0, 0.02, 0.1], [0.05, 0.2], [0.1, 0.5, 2.0], [0.05, -0.3])
    for r_low, spread, lam, eta in grid:
        p = P.replace(r_low=r_low, r_high=r_low + spread, lam=lam, eta=eta)
        rep = validate_assumptions(p)
        if rep.passed:
            assert rep.h3_min_ratio >= -1 - 1e-10
            assert rep.gamma_min >= -lam - 1e-12
