"""Monte Carlo execution of the Poisson stopping rule against a solved chain.

At the n-th arrival the holder looks up level ``min(n, k)`` and stops as soon
as the value is no larger than the payoff of that level. Asset values are
drawn from the exact log-normal law at every decision time, so the only
approximation left is the interpolation of the value surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import MarketParams
from .pde import ValueChain

BLOCK_SIZE = 4096


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    seed: int = 42
    dt_sim: float = 0.01
    drift: float | None = None
    # "pricing": arrivals below the cap at rate/eta, then lam (the law the
    # PDE chain prices under); "physical": lam throughout.
    arrival_measure: str = "pricing"

    def violations(self, T: float) -> list[str]:
        out = []
        if self.n_paths < 1:
            out.append("n_paths >= 1")
        if not 0 < self.dt_sim <= T:
            out.append("0 < dt_sim <= T")
        if self.arrival_measure not in ("pricing", "physical"):
            out.append("arrival_measure in {pricing, physical}")
        if not 0 <= self.seed < 2 ** 64:
            out.append("seed is an unsigned 64-bit integer")
        return out

    def as_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "seed": self.seed,
            "dt_sim": self.dt_sim,
            "drift": self.drift,
            "arrival_measure": self.arrival_measure,
        }


@dataclass(frozen=True)
class PathRecord:
    arrivals: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    s1_path: np.ndarray = field(repr=False)
    tau: float
    level: int
    stopped: bool
    payoff: float
    discounted_payoff: float

    @property
    def stop_level(self):
        """Level at the stop, or ``"matured"``."""
        return self.level if self.stopped else "matured"


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path (or block) ``index`` under a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def simulate_arrivals(lam: float, T: float, rng: np.random.Generator) -> np.ndarray:
    if lam <= 0:
        raise ValueError("lam must be positive")
    return simulate_level_arrivals([lam], T, rng)


def simulate_level_arrivals(rates, T: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times in (0, T] when the n-th gap has rate ``rates[min(n, len-1)]``."""
    rates = list(rates)
    out = []
    t = 0.0
    while True:
        rate = rates[min(len(out), len(rates) - 1)]
        t += rng.exponential(1.0 / rate)
        if t > T:
            break
        out.append(t)
    return np.array(out)


def simulate_asset(s0: float, drift: float, sigma: float, times, rng: np.random.Generator) -> np.ndarray:
    """Exact geometric Brownian motion sampled at ``times`` (starting at 0)."""
    times = np.asarray(times, dtype=float)
    if times[0] != 0:
        raise ValueError("times must start at 0")
    dt = np.diff(times)
    z = rng.standard_normal(len(dt))
    steps = (drift - 0.5 * sigma ** 2) * dt + sigma * np.sqrt(dt) * z
    return s0 * np.exp(np.concatenate(([0.0], np.cumsum(steps))))


def arrival_rates(params: MarketParams, measure: str, rate: float | None = None) -> list[float]:
    k = int(params.k)
    if measure == "physical":
        return [params.lam]
    rate = params.r_low if rate is None else rate
    return [rate / params.eta] * k + [params.lam]


def simulate_path(params: MarketParams, config: SimConfig, rng: np.random.Generator, rate=None):
    """Arrivals plus an asset path on the simulation grid merged with them."""
    rates = arrival_rates(params, config.arrival_measure, rate)
    arrivals = simulate_level_arrivals(rates, params.T, rng)
    grid = np.arange(0.0, params.T, config.dt_sim)
    times = np.union1d(np.union1d(grid, arrivals), [params.T])
    drift = params.r_low if config.drift is None else config.drift
    s1 = simulate_asset(params.s0, drift, params.sigma, times, rng)
    return arrivals, times, s1


def _interp_tol(chain: ValueChain) -> float:
    return 1e-8 * max(chain.strikes)


def stop_now(chain: ValueChain, level: int, t, s, tol: float | None = None):
    """Stopping test at an arrival. Nodes with zero payoff never stop: the
    truncated far field has V = 0 there, which would otherwise trigger
    worthless exercises."""
    tol = _interp_tol(chain) if tol is None else tol
    g = chain.payoff(level, s)
    return (g > 0) & (chain.interpolate(level, t, s) <= g + tol)


def run_stopping(chain: ValueChain, arrivals, times, s1_path, *, params: MarketParams | None = None,
                 discount_rate: float | None = None, tol: float | None = None) -> PathRecord:
    if params is not None and params != chain.params:
        raise ValueError("path parameters differ from the chain's MarketParams")
    p = chain.params
    k = chain.k
    arrivals = np.asarray(arrivals, dtype=float)
    times = np.asarray(times, dtype=float)
    s1_path = np.asarray(s1_path, dtype=float)
    rate = p.r_low if discount_rate is None else discount_rate
    for n, t in enumerate(arrivals, start=1):
        idx = np.searchsorted(times, t)
        if idx >= len(times) or times[idx] != t:
            raise ValueError(f"arrival {t} missing from the path's time grid")
        s = s1_path[idx]
        level = min(n, k)
        if stop_now(chain, level, t, s, tol):
            g = float(chain.payoff(level, s))
            return PathRecord(arrivals, times, s1_path, float(t), level, True, g, g * np.exp(-rate * t))
    level = min(len(arrivals), k)
    g = float(chain.payoff(level, s1_path[-1]))
    return PathRecord(arrivals, times, s1_path, float(p.T), level, False, g, g * np.exp(-rate * p.T))


@dataclass(frozen=True)
class Ensemble:
    tau: np.ndarray = field(repr=False)
    level: np.ndarray = field(repr=False)
    stopped: np.ndarray = field(repr=False)
    payoff: np.ndarray = field(repr=False)
    discounted_payoff: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    stderr: float
    n_paths: int
    reliable: bool
    histogram: dict
    ensemble: Ensemble = field(repr=False)


def _block_paths(chain: ValueChain, n: int, rng: np.random.Generator, rates, drift, tol):
    """Vectorised simulation and stopping for ``n`` paths from one stream."""
    p = chain.params
    k = chain.k
    T = p.T
    per_level = np.asarray(rates, dtype=float)
    cols = max(k + 1, int(np.ceil(max(rates) * T + 8.0 * np.sqrt(max(rates) * T + 1.0))) + 4)
    gaps = rng.standard_exponential((n, cols))
    while True:
        idx = np.minimum(np.arange(gaps.shape[1]), len(per_level) - 1)
        arr = np.cumsum(gaps / per_level[idx], axis=1)
        if np.all(arr[:, -1] > T):
            break
        gaps = np.hstack([gaps, rng.standard_exponential((n, cols))])
    m = arr.shape[1]
    clipped = np.minimum(arr, T)
    times = np.hstack([np.zeros((n, 1)), clipped, np.full((n, 1), T)])
    dt = np.diff(times, axis=1)
    z = rng.standard_normal((n, m + 1))
    logs = np.cumsum((drift - 0.5 * p.sigma ** 2) * dt + p.sigma * np.sqrt(dt) * z, axis=1)
    s = p.s0 * np.exp(logs)

    tau = np.full(n, T)
    level = np.minimum((arr <= T).sum(axis=1), k)
    stopped = np.zeros(n, dtype=bool)
    for j in range(m):
        live = ~stopped & (arr[:, j] <= T)
        if not live.any():
            break
        lev = min(j + 1, k)
        hit = np.zeros(n, dtype=bool)
        hit[live] = stop_now(chain, lev, arr[live, j], s[live, j], tol)
        tau[hit] = arr[hit, j]
        level[hit] = lev
        stopped |= hit
    s_tau = np.where(stopped, s[np.arange(n), np.minimum(np.argmax(arr >= tau[:, None], axis=1), m - 1)], s[:, -1])
    strikes = np.asarray(chain.strikes)[level]
    payoff = np.maximum(strikes - s_tau, 0.0)
    return arr, s, tau, level, stopped, payoff


def estimate_value(chain: ValueChain, config: SimConfig, discount_rate: float | None = None,
                   tol: float | None = None) -> ValueEstimate:
    """Mean discounted payoff of the chain's stopping rule.

    Paths are simulated in fixed blocks of ``BLOCK_SIZE``, each from its own
    stream derived from the seed, so results do not depend on scheduling.
    """
    p = chain.params
    problems = config.violations(p.T)
    if problems:
        raise ValueError("invalid SimConfig: " + "; ".join(problems))
    rate = p.r_low if discount_rate is None else discount_rate
    drift = rate if config.drift is None else config.drift
    rates = arrival_rates(p, config.arrival_measure, rate)
    parts = []
    for block, start in enumerate(range(0, config.n_paths, BLOCK_SIZE)):
        n = min(BLOCK_SIZE, config.n_paths - start)
        _, _, tau, level, stopped, payoff = _block_paths(chain, n, path_rng(config.seed, block), rates, drift, tol)
        parts.append((tau, level, stopped, payoff))
    tau, level, stopped, payoff = (np.concatenate(x) for x in zip(*parts))
    disc = payoff * np.exp(-rate * tau)
    n = config.n_paths
    mean = float(disc.mean())
    se = float(disc.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    counts, edges = np.histogram(tau[stopped], bins=10, range=(0.0, p.T))
    hist = {"edges": edges.tolist(), "counts": counts.tolist(), "matured": int((~stopped).sum())}
    return ValueEstimate(mean, se, n, n >= 30, hist, Ensemble(tau, level, stopped, payoff, disc))


def four_arrival_scenario(chain: ValueChain, seed: int = 0, max_tries: int = 100_000, drift: float | None = None):
    """Search seeded paths (physical arrival law) for a scenario with the
    first three arrivals out of the money, the fourth inside the level-4
    exercise region given by ``boundary``.

    Returns ``(path_seed, arrivals, times, s1_path)``.
    """
    from .boundary import extract_boundary

    p = chain.params
    if chain.k < 4:
        raise ValueError("scenario needs k >= 4")
    b4 = extract_boundary(chain, 4)
    cfg = SimConfig(n_paths=1, seed=seed, arrival_measure="physical", drift=drift)
    for i in range(max_tries):
        rng = path_rng(seed, i)
        arrivals, times, s1 = simulate_path(p, cfg, rng)
        if len(arrivals) < 4:
            continue
        at = np.searchsorted(times, arrivals[:4])
        s_arr = s1[at]
        if not all(s_arr[n] > chain.strikes[n + 1] for n in range(3)):
            continue
        j = min(int(round(arrivals[3] / (p.T / chain.grid.nt))), chain.grid.nt)
        if b4.defined[j] and s_arr[3] < b4.b[j] - 2 * (chain.s[1] - chain.s[0]):
            return i, arrivals, times, s1
    raise RuntimeError("no matching scenario found")
