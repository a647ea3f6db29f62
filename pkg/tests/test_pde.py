import numpy as np
import pytest

from poisson_stopping.lattice import LatticeSpec, binomial_american_put, black_scholes_put, lattice_value
from poisson_stopping.market import MarketParams, payoff
from poisson_stopping.pde import (
    ConvergenceError,
    GridSpec,
    InvalidParametersError,
    implicit_system,
    solve_chain,
    solve_level,
    solve_top_level,
    step_residuals,
)

BASE = MarketParams()
LIN = MarketParams(r_low=0.03, r_high=0.03)
SMALL = GridSpec(120, 120)


@pytest.fixture(scope="module")
def base_chain():
    return solve_chain(BASE, GridSpec(400, 400))


def test_default_grid_resolution():
    g = GridSpec().resolved(BASE)
    assert (g.ns, g.nt) == (400, 400)
    assert g.s_max == pytest.approx(4 * 1.1 ** 4)
    assert GridSpec(ns=8).violations(BASE)
    assert GridSpec(s_max=1.2).resolved(BASE).violations(BASE)


def test_chain_shape_and_terminal_rows(base_chain):
    c = base_chain
    assert c.levels.shape == (5, 401, 401)
    for i in range(5):
        assert np.array_equal(c.levels[i][-1], payoff(i, c.s, BASE))
    assert not c.levels.flags.writeable


def test_chain_values_bounded(base_chain):
    v = base_chain.levels
    assert np.all(np.isfinite(v))
    assert v.min() >= -1e-10
    assert v.max() <= BASE.max_strike + 1e-8


def test_level_ordering(base_chain):
    c = base_chain
    for i in range(4):
        assert np.all(c.levels[i][0] <= c.levels[i + 1][0] + 1e-6)


def test_european_limit():
    p = MarketParams(lam=0.0, r_low=0.03, r_high=0.03, k=0, T=1.0)
    res = solve_top_level(p, GridSpec(400, 400), validate=False)
    v = np.interp(1.0, GridSpec(400, 400).resolved(p).s_nodes(), res.values[0])
    ref = black_scholes_put(1.0, 1.0, 0.03, 0.2, 1.0)
    assert abs(v - ref) / ref <= 5e-3


def test_dense_penalty_matches_american():
    p = MarketParams(lam=500.0, r_low=0.03, r_high=0.03, k=0, T=1.0)
    chain = solve_chain(p, GridSpec(400, 400))
    v = chain.interpolate(0, 0.0, 1.0)
    am = binomial_american_put(1.0, 1.0, 0.03, 0.2, 1.0, 2000)
    assert abs(v - am) / am <= 1e-2


def test_linear_chain_matches_lattice():
    chain = solve_chain(LIN, GridSpec(400, 400))
    assert abs(chain.interpolate(0, 0.0, 1.0) - lattice_value(LIN, LatticeSpec(2000))) <= 1e-2


def test_k_zero_chain_is_top_level():
    p = MarketParams(k=0, lam=1.0)
    chain = solve_chain(p, SMALL)
    top = solve_top_level(p, SMALL)
    assert chain.k == 0
    assert np.array_equal(chain.levels[0], top.values)


def test_degenerate_coupling_reduces_to_bid_ask_pde():
    # with the next level equal to the plain bid-ask solution and a zero next
    # payoff, the coupling bracket vanishes and the level reproduces it
    i = 2
    strike = BASE.strike(i)
    plain = solve_top_level(BASE.replace(lam=0.0), SMALL, strike=strike, validate=False).values
    zeros = np.zeros(SMALL.ns + 1)
    coupled = solve_level(BASE, SMALL, i, plain, strike=strike, next_payoff=zeros).values
    np.testing.assert_allclose(coupled, plain, atol=1e-12)


def test_coupled_level_requires_eta():
    p = MarketParams(eta=0.0, k=0)
    with pytest.raises(ValueError):
        solve_level(p, SMALL, 0, np.zeros((121, 121)), next_payoff=np.zeros(121))


def test_invalid_parameters_rejected():
    with pytest.raises(InvalidParametersError) as err:
        solve_chain(BASE.replace(r_low=-0.01), SMALL)
    assert "r_low >= 0 for eta > 0" in err.value.violations


def test_non_convergence_reports_residual():
    with pytest.raises(ConvergenceError) as err:
        solve_chain(BASE, SMALL, max_iter=1)
    assert err.value.worst_residual > 0
    assert err.value.level == BASE.k


@pytest.mark.parametrize("coupled", [False, True])
def test_implicit_rows_are_m_matrix(coupled):
    g = GridSpec(200, 100).resolved(BASE)
    rng = np.random.default_rng(0)
    for _ in range(5):
        pol = rng.random(g.ns + 1) < 0.5
        pen = BASE.lam * (rng.random(g.ns + 1) < 0.5)
        lower, diag, upper = implicit_system(BASE, g, coupled, pol, pen)
        assert np.all(lower <= 0) and np.all(upper <= 0)
        off = np.zeros_like(diag)
        off[1:] += np.abs(lower)
        off[:-1] += np.abs(upper)
        assert np.all(diag > 0)
        assert np.all(diag >= off)


def test_residuals_within_tolerance(base_chain):
    c = base_chain
    g = c.grid
    top = c.levels[4]
    res = step_residuals(BASE, g, top, obstacle=c.payoff(4), lam=BASE.lam)
    assert res.max() <= 1e-9
    coupling = np.maximum(c.payoff(4)[None, :], c.levels[4])
    res = step_residuals(BASE, g, c.levels[3], coupling=coupling)
    assert res.max() <= 1e-9


def test_values_nondecreasing_in_lambda():
    lams = (0.2, 1.0, 5.0, 25.0)
    tops = [solve_top_level(BASE.replace(lam=lam), SMALL).values for lam in lams]
    for a, b in zip(tops, tops[1:]):
        assert np.all(a <= b + 1e-6)


def test_grid_refinement_shrinks_differences():
    vals = [solve_chain(BASE, GridSpec(n, n)).interpolate(0, 0.0, 1.0) for n in (100, 200, 400)]
    d1, d2 = abs(vals[1] - vals[0]), abs(vals[2] - vals[1])
    assert d1 / d2 >= 1.5


def test_interpolation_hits_nodes_and_clamps(base_chain):
    c = base_chain
    j, m = 37, 123
    assert c.interpolate(2, c.t[j], c.s[m]) == pytest.approx(c.levels[2][j, m], abs=1e-14)
    assert c.interpolate(2, 0.0, c.grid.s_max * 1.5) == 0.0


def test_central_convection_option():
    p = MarketParams(lam=0.0, r_low=0.03, r_high=0.03, k=0, T=1.0)
    res = solve_top_level(p, GridSpec(400, 400), validate=False, convection="central")
    v = np.interp(1.0, GridSpec(400, 400).resolved(p).s_nodes(), res.values[0])
    assert abs(v / black_scholes_put(1.0, 1.0, 0.03, 0.2, 1.0) - 1) <= 5e-3
    with pytest.raises(ValueError):
        solve_top_level(p, SMALL, validate=False, convection="spectral")
