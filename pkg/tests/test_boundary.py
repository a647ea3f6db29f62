import numpy as np
import pytest

from poisson_stopping.boundary import extract_boundary, pasting_gap
from poisson_stopping.lattice import binomial_american_put
from poisson_stopping.market import MarketParams
from poisson_stopping.pde import GridSpec, ValueChain, solve_chain

BASE = MarketParams()
GRID = GridSpec(400, 400)


@pytest.fixture(scope="module")
def chains():
    return {lam: solve_chain(BASE.replace(lam=lam), GRID) for lam in (0.2, 25.0)}


def test_terminal_row_is_strike(chains):
    c = chains[0.2]
    for i in range(c.k + 1):
        b = extract_boundary(c, i)
        assert b.defined[-1]
        assert b.b[-1] == c.strikes[i]


def test_boundary_within_strike(chains):
    for c in chains.values():
        for i in range(c.k + 1):
            b = extract_boundary(c, i)
            ok = b.defined
            assert np.all((b.b[ok] >= 0) & (b.b[ok] <= c.strikes[i]))
            assert np.all(np.isnan(b.b[~ok]))


def test_exercise_region_shrinks_with_lambda(chains):
    lo = extract_boundary(chains[0.2], 4)
    hi = extract_boundary(chains[25.0], 4)
    ds = chains[0.2].s[1]
    assert not np.any(hi.defined & ~lo.defined)
    both = lo.defined & hi.defined
    assert np.all(hi.b[both] <= lo.b[both] + ds)


def test_zero_obstacle_has_no_stop_region():
    p = MarketParams(k=2)
    chain = solve_chain(p, GridSpec(60, 60), strikes=(0.0, 0.0, 0.0))
    for i in range(3):
        b = extract_boundary(chain, i)
        assert not b.defined[:-1].any()
        assert np.isnan(b.b[:-1]).all()


def test_level_out_of_range(chains):
    with pytest.raises(IndexError):
        extract_boundary(chains[0.2], 5)
    with pytest.raises(IndexError):
        extract_boundary(chains[0.2], -1)


def test_extraction_is_pure(chains):
    c = chains[25.0]
    before = c.levels.copy()
    a = extract_boundary(c, 3)
    b = extract_boundary(c, 3)
    np.testing.assert_array_equal(a.b, b.b)
    np.testing.assert_array_equal(a.defined, b.defined)
    np.testing.assert_array_equal(c.levels, before)


def _synthetic_chain(b0_index=80, curvature=0.7):
    # V = g up to b0, then the payoff line plus a quadratic that touches it
    # with matching slope, so the exact pasting gap is zero
    p = MarketParams(k=0, T=1.0)
    grid = GridSpec(200, 20, s_max=2.0).resolved(p)
    s = grid.s_nodes()
    b0 = s[b0_index]
    g = np.maximum(1.0 - s, 0.0)
    row = np.where(s <= b0, g, (1.0 - s) + curvature * (s - b0) ** 2)
    row = np.maximum(row, g)
    levels = np.tile(row, (grid.nt + 1, 1))
    levels[-1] = g
    return ValueChain(levels[None], grid, p, (1.0,)), b0


def test_synthetic_smooth_fit_gap_is_stencil_exact():
    chain, b0 = _synthetic_chain()
    b = extract_boundary(chain, 0, tol=1e-14)
    assert np.allclose(b.b[:-1], b0, atol=1e-9)
    assert pasting_gap(chain, 0, b) <= 1e-8


def test_synthetic_kink_is_detected():
    # a continuation branch with slope -0.5 at contact gives gap 0.5
    p = MarketParams(k=0, T=1.0)
    grid = GridSpec(200, 20, s_max=2.0).resolved(p)
    s = grid.s_nodes()
    b0 = s[80]
    g = np.maximum(1.0 - s, 0.0)
    row = np.where(s <= b0, g, (1.0 - b0) - 0.5 * (s - b0))
    levels = np.tile(np.maximum(row, g), (grid.nt + 1, 1))
    levels[-1] = g
    chain = ValueChain(levels[None], grid, p, (1.0,))
    gap = pasting_gap(chain, 0, extract_boundary(chain, 0, tol=1e-14))
    assert gap == pytest.approx(0.5, abs=1e-6)


def test_pasting_needs_defined_boundary():
    chain = solve_chain(MarketParams(k=0), GridSpec(60, 60), strikes=(0.0,))
    with pytest.raises(ValueError):
        pasting_gap(chain, 0, extract_boundary(chain, 0))


def test_pasting_improves_with_lambda(chains):
    lo = pasting_gap(chains[0.2], 4, extract_boundary(chains[0.2], 4))
    hi = pasting_gap(chains[25.0], 4, extract_boundary(chains[25.0], 4))
    assert hi < lo


def test_dense_opportunities_paste_like_american():
    p = MarketParams(lam=500.0, r_low=0.03, r_high=0.03, k=0)
    chain = solve_chain(p, GRID)
    b = extract_boundary(chain, 0)
    assert pasting_gap(chain, 0, b) < 0.05
    # the binomial American boundary sits close to the penalised one
    steps = 2000
    _, delta, tree_b = binomial_american_put(1.0, 1.0, 0.03, 0.2, p.T, steps, return_tree=True)
    for t in (1.0, 2.5, 4.0):
        j = int(round(t / p.T * GRID.nt))
        assert abs(b.b[j] - tree_b[int(round(t / p.T * steps))]) < 0.02
    # and its root delta agrees with the PDE slope at s0
    ds = chain.s[1]
    m = int(round(1.0 / ds))
    pde_delta = (chain.levels[0][0, m + 1] - chain.levels[0][0, m - 1]) / (2 * ds)
    assert abs(pde_delta - delta) < 0.02
