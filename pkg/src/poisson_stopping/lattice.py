"""Closed-form and binomial oracles for the linear-rate case.

``lattice_value`` runs a dynamic program over (step, node, level) on a CRR
tree. An arrival in a step happens with probability ``intensity * dt``; at an
arrival the holder moves to level ``min(l+1, k)`` and collects
``max(payoff, continuation)`` of that level at the post-step node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .market import MarketParams


def black_scholes_put(s, strike, rate, sigma, tau):
    """European put; deterministic forward limit when sigma or tau is 0."""
    s = np.asarray(s, dtype=float)
    vol = sigma * np.sqrt(tau)
    disc_k = strike * np.exp(-rate * tau)
    if vol == 0:
        return np.maximum(disc_k - s, 0.0)
    d1 = (np.log(s / strike) + (rate + 0.5 * sigma ** 2) * tau) / vol
    d2 = d1 - vol
    return disc_k * norm.cdf(-d2) - s * norm.cdf(-d1)


@dataclass(frozen=True)
class LatticeSpec:
    """Tree resolution and rate.

    ``intensities="pricing"`` lets arrivals below the cap fire at ``rate/eta``,
    the intensity under which the jump asset earns the bond rate, and at
    ``lam`` once the cap is reached; this is the arrival law the PDE chain
    prices with. ``"uniform"`` uses ``lam`` at every level.
    """

    steps: int = 2000
    rate: float | None = None
    intensities: str = "pricing"

    def level_intensities(self, params: MarketParams, rate: float) -> np.ndarray:
        k = int(params.k)
        out = np.full(k + 1, float(params.lam))
        if self.intensities == "pricing":
            if k > 0:
                out[:k] = rate / params.eta
        elif self.intensities != "uniform":
            raise ValueError(f"unknown intensities mode {self.intensities!r}")
        return out


def lattice_value(params: MarketParams, spec: LatticeSpec | None = None, strikes=None) -> float:
    """Root value at level 0 of the Poisson-stopping dynamic program."""
    spec = spec or LatticeSpec()
    rate = params.r_low if spec.rate is None else spec.rate
    if params.r_low != params.r_high and spec.rate is None:
        raise ValueError("lattice oracle needs a single rate (r_low == r_high)")
    if spec.steps < 100:
        raise ValueError("lattice needs at least 100 steps")
    k = int(params.k)
    n = spec.steps
    dt = params.T / n
    q = spec.level_intensities(params, rate) * dt
    if np.any(q >= 1) or np.any(q < 0):
        raise ValueError("arrival probability per step must lie in [0, 1)")
    if strikes is None:
        strikes = [params.strike(i) for i in range(k + 1)]
    strikes = np.asarray(strikes, dtype=float)[:, None]
    nxt = np.minimum(np.arange(k + 1) + 1, k)

    u = np.exp(params.sigma * np.sqrt(dt))
    d = 1.0 / u
    p = (np.exp(rate * dt) - d) / (u - d)
    if not 0 < p < 1:
        raise ValueError("tree probability outside (0, 1); refine the tree")
    disc = np.exp(-rate * dt)

    s = params.s0 * u ** (2.0 * np.arange(n + 1) - n)
    v = np.maximum(strikes - s, 0.0)
    for step in range(n, 0, -1):
        # v and s live on the nodes of ``step``
        jump = np.maximum(np.maximum(strikes - s, 0.0), v)[nxt]
        ev = p * v[:, 1:] + (1 - p) * v[:, :-1]
        ej = p * jump[:, 1:] + (1 - p) * jump[:, :-1]
        v = disc * ((1 - q[:, None]) * ev + q[:, None] * ej)
        s = s[1:] * d
    return float(v[0, 0])


def binomial_american_put(s0, strike, rate, sigma, T, steps, return_tree=False):
    """Standard CRR American put. Optionally returns the step-1 delta and the
    per-step exercise boundary (largest exercised node price, NaN if none)."""
    dt = T / steps
    u = np.exp(sigma * np.sqrt(dt))
    d = 1.0 / u
    p = (np.exp(rate * dt) - d) / (u - d)
    disc = np.exp(-rate * dt)
    s = s0 * u ** (2.0 * np.arange(steps + 1) - steps)
    v = np.maximum(strike - s, 0.0)
    boundary = np.full(steps + 1, np.nan)
    boundary[-1] = strike
    delta = np.nan
    for step in range(steps, 0, -1):
        s = s[1:] * d
        cont = disc * (p * v[1:] + (1 - p) * v[:-1])
        ex = np.maximum(strike - s, 0.0)
        stop = (ex > cont) & (ex > 0)
        if stop.any():
            boundary[step - 1] = s[stop].max()
        if step == 1:
            delta = (v[1] - v[0]) / (s0 * u - s0 * d)
        v = np.where(stop, ex, cont)
    if return_tree:
        return float(v[0]), float(delta), boundary
    return float(v[0])
