"""Oracle battery shared by ``verify`` and the acceptance tests.

Each check returns a :class:`CheckResult` with the measured gap and the
threshold it was held to.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .boundary import extract_boundary, pasting_gap
from .lattice import LatticeSpec, black_scholes_put, lattice_value
from .market import MarketParams, dual_vertices, generator_eval, generator_via_dual, h3_ratios
from .pde import GridSpec, solve_chain, solve_top_level
from .simulation import SimConfig, estimate_value, four_arrival_scenario, run_stopping

SWEEP = (0.2, 1.0, 5.0, 25.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.measured = float(self.measured)
        self.threshold = float(self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()

    def as_dict(self) -> dict:
        return asdict(self)


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def linear_params(rate: float = 0.03, **kw) -> MarketParams:
    return MarketParams(r_low=rate, r_high=rate, **kw)


@_timed
def european_consistency(grid: GridSpec | None = None, convection: str = "upwind") -> CheckResult:
    p = MarketParams(lam=0.0, r_low=0.03, r_high=0.03, k=0, T=1.0)
    res = solve_top_level(p, grid or GridSpec(400, 400), validate=False, convection=convection)
    g = (grid or GridSpec(400, 400)).resolved(p)
    v = float(np.interp(1.0, g.s_nodes(), res.values[0]))
    ref = float(black_scholes_put(1.0, 1.0, 0.03, 0.2, 1.0))
    rel = abs(v - ref) / ref
    return CheckResult("european_consistency", rel <= 5e-3, rel, 5e-3, f"pde={v:.8f} bs={ref:.8f}")


@_timed
def lattice_agreement(params: MarketParams | None = None, grid: GridSpec | None = None,
                      steps: int = 2000, convection: str = "upwind") -> CheckResult:
    p = params or linear_params()
    chain = solve_chain(p, grid or GridSpec(400, 400), convection=convection)
    v = float(chain.interpolate(0, 0.0, p.s0))
    lat = lattice_value(p, LatticeSpec(steps))
    gap = abs(v - lat)
    return CheckResult("lattice_agreement", gap <= 1e-2, gap, 1e-2, f"pde={v:.8f} lattice={lat:.8f}")


def _sweep_chains(params, grid, lams, convection):
    return {lam: solve_chain(params.replace(lam=lam), grid, convection=convection) for lam in lams}


@_timed
def lambda_monotonicity(params: MarketParams | None = None, grid: GridSpec | None = None,
                        lams=SWEEP, chains=None, convection: str = "upwind") -> CheckResult:
    p = params or MarketParams()
    chains = chains or _sweep_chains(p, grid, lams, convection)
    k = p.k
    worst = max(float(np.max(chains[a].levels[k] - chains[b].levels[k]))
                for a, b in zip(lams, lams[1:]))
    worst = max(worst, 0.0)
    return CheckResult("lambda_monotonicity", worst <= 1e-6, worst, 1e-6,
                       f"max drop of V^{k} between consecutive lambdas in {list(lams)}")


@_timed
def boundary_shrinkage(params: MarketParams | None = None, grid: GridSpec | None = None,
                       lams=SWEEP, chains=None, convection: str = "upwind") -> CheckResult:
    p = params or MarketParams()
    chains = chains or _sweep_chains(p, grid, lams, convection)
    k = p.k
    ds = chains[lams[0]].s[1]
    worst = -np.inf
    for a, b in zip(lams, lams[1:]):
        ba = extract_boundary(chains[a], k)
        bb = extract_boundary(chains[b], k)
        if np.any(bb.defined & ~ba.defined):
            worst = np.inf
            break
        both = ba.defined & bb.defined
        worst = max(worst, float(np.max(bb.b[both] - ba.b[both])))
    cells = worst / ds
    return CheckResult("boundary_shrinkage", cells <= 1.0, cells, 1.0,
                       "max rise of b(t) between consecutive lambdas, in grid cells")


@_timed
def level_ordering(params: MarketParams | None = None, grid: GridSpec | None = None, chain=None,
                   convection: str = "upwind") -> CheckResult:
    p = params or MarketParams()
    chain = chain or solve_chain(p, grid, convection=convection)
    worst = max(float(np.max(chain.levels[i][0] - chain.levels[i + 1][0])) for i in range(chain.k))
    worst = max(worst, 0.0)
    return CheckResult("level_ordering", worst <= 1e-6, worst, 1e-6, "max of V^i(0,s) - V^{i+1}(0,s)")


@_timed
def smooth_pasting(params: MarketParams | None = None, grid: GridSpec | None = None, chains=None,
                   convection: str = "upwind") -> CheckResult:
    p = params or MarketParams()
    chains = chains or {}
    lo = chains.get(0.2) or solve_chain(p.replace(lam=0.2), grid, convection=convection)
    hi = chains.get(25.0) or solve_chain(p.replace(lam=25.0), grid, convection=convection)
    k = p.k
    g_lo = pasting_gap(lo, k, extract_boundary(lo, k))
    g_hi = pasting_gap(hi, k, extract_boundary(hi, k))
    pk = linear_params(lam=500.0, k=0)
    ch = solve_chain(pk, grid, convection=convection)
    g_500 = pasting_gap(ch, 0, extract_boundary(ch, 0))
    ok = g_hi < g_lo and g_500 < 0.05
    return CheckResult("smooth_pasting", ok, g_500, 0.05,
                       f"gap(0.2)={g_lo:.5f} gap(25)={g_hi:.5f} gap(500,k=0)={g_500:.5f}")


@_timed
def duality_identity(params: MarketParams | None = None, n: int = 10_000, seed: int = 0) -> CheckResult:
    p = params or MarketParams()
    rng = np.random.default_rng(seed)
    y, z, c = rng.uniform(-5, 5, size=(3, n))
    direct = generator_eval(y, z, c, p)
    dual = generator_via_dual(y, z, c, dual_vertices(p))
    err = float(np.max(np.abs(direct - dual)))
    h3 = float(h3_ratios(p, 1000, seed).min())
    ok = err <= 1e-12 and h3 >= -1 - 1e-10
    return CheckResult("duality_identity", ok, err, 1e-12, f"min H3 ratio={h3:.6g} (bound -1)")


@_timed
def mc_lower_bound(params: MarketParams | None = None, grid: GridSpec | None = None, n_paths: int = 100_000,
                   seed: int = 42, convection: str = "upwind") -> CheckResult:
    p = params or linear_params()
    rate = p.r_low
    chain = solve_chain(p, grid, convection=convection)
    v = float(chain.interpolate(0, 0.0, p.s0))
    est = estimate_value(chain, SimConfig(n_paths=n_paths, seed=seed, drift=rate), rate)
    upper = est.mean - (v + 3 * est.stderr)
    ok = upper <= 0 and est.mean >= v - 0.03
    return CheckResult("mc_lower_bound", ok, est.mean - v, 3 * est.stderr,
                       f"pde={v:.6f} mc={est.mean:.6f} se={est.stderr:.2e} (needs mc-pde <= 3se and >= -0.03)")


@_timed
def stopping_scenario(params: MarketParams | None = None, grid: GridSpec | None = None, chain=None,
                      seed: int = 7, convection: str = "upwind") -> CheckResult:
    p = params or MarketParams()
    chain = chain or solve_chain(p, grid, convection=convection)
    idx, arrivals, times, s1 = four_arrival_scenario(chain, seed)
    rec = run_stopping(chain, arrivals, times, s1)
    ok = rec.stopped and rec.tau == arrivals[3] and rec.level == min(4, chain.k)
    return CheckResult("stopping_scenario", ok, float(rec.tau), float(arrivals[3]),
                       f"path {idx}: arrivals={np.round(arrivals, 4).tolist()} stop_level={rec.stop_level}")


@_timed
def in_memory_determinism(params: MarketParams | None = None, grid: GridSpec | None = None) -> CheckResult:
    p = params or linear_params()
    a = solve_chain(p, grid)
    b = solve_chain(p, grid)
    same = np.array_equal(a.levels, b.levels)
    cfg = SimConfig(n_paths=5000, seed=11)
    same = same and estimate_value(a, cfg).mean == estimate_value(b, cfg).mean
    return CheckResult("determinism", bool(same), 0.0 if same else 1.0, 0.0, "repeat solve and simulate")


def run_battery(params: MarketParams | None = None, grid: GridSpec | None = None,
                convection: str = "upwind") -> list[CheckResult]:
    """Every acceptance check. Property checks use ``params`` (the default
    market if omitted); oracle checks use their fixed linear-rate setups."""
    p = params or MarketParams()
    chains = _sweep_chains(p, grid, SWEEP, convection)
    base = chains.get(p.lam) or solve_chain(p, grid, convection=convection)
    return [
        european_consistency(convection=convection),
        lattice_agreement(convection=convection),
        lambda_monotonicity(p, grid, chains=chains),
        boundary_shrinkage(p, grid, chains=chains),
        level_ordering(p, grid, chain=base),
        smooth_pasting(p, grid, chains=chains, convection=convection),
        duality_identity(p),
        mc_lower_bound(convection=convection),
        stopping_scenario(p, grid, chain=base),
        in_memory_determinism(grid=grid),
    ]

