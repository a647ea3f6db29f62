"""Exercise boundaries and the smooth-pasting diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pde import ValueChain


@dataclass(frozen=True)
class ExerciseBoundary:
    """Boundary b_i(t_j); ``defined[j]`` is False where no stop region exists
    on that row (``b`` is NaN there)."""

    level: int
    times: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    defined: np.ndarray = field(repr=False)
    strike: float = 0.0


def extract_boundary(chain: ValueChain, i: int, tol: float | None = None) -> ExerciseBoundary:
    """Largest price below the strike where the value sits within ``tol`` of
    the payoff, refined by linear interpolation of the gap."""
    if not 0 <= i <= chain.k:
        raise IndexError(f"level {i} outside 0..{chain.k}")
    strike = chain.strikes[i]
    if tol is None:
        tol = 1e-6 * (max(chain.strikes) or 1.0)
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = chain.s
    gap = chain.levels[i] - chain.payoff(i)[None, :]
    below = s < strike
    ok = (gap <= tol) & below[None, :]
    nt1 = gap.shape[0]
    b = np.full(nt1, np.nan)
    defined = ok.any(axis=1)
    for j in np.flatnonzero(defined):
        m = np.flatnonzero(ok[j])[-1]
        if m + 1 >= len(s) or s[m + 1] >= strike:
            b[j] = strike
            continue
        g0, g1 = gap[j, m], gap[j, m + 1]
        w = (tol - g0) / (g1 - g0) if g1 != g0 else 0.0
        b[j] = min(s[m] + w * (s[m + 1] - s[m]), strike)
    return ExerciseBoundary(i, chain.t.copy(), b, defined, strike)


def pasting_gap(chain: ValueChain, i: int, boundary: ExerciseBoundary, exclude_terminal: bool = True) -> float:
    """Max over time rows of |dV/ds(t, b(t)) + 1|.

    The slope is the derivative at ``b`` of the quadratic through the first
    three grid nodes on the continuation side (a one-sided second-order
    difference). Rows whose boundary sits at the strike have no contact
    point and are skipped, as is the terminal row.
    """
    s = chain.s
    ds = s[1] - s[0]
    surf = chain.levels[i]
    last = len(boundary.times) - 1
    gaps = []
    for j in np.flatnonzero(boundary.defined):
        if exclude_terminal and j == last:
            continue
        bj = boundary.b[j]
        if bj >= boundary.strike:
            continue
        m = int(np.ceil(bj / ds - 1e-12))
        if m + 2 >= len(s):
            continue
        x = (bj - s[m]) / ds
        f0, f1, f2 = surf[j, m], surf[j, m + 1], surf[j, m + 2]
        slope = (f0 * (x - 1.5) - f1 * (2.0 * x - 2.0) + f2 * (x - 0.5)) / ds
        gaps.append(abs(slope + 1.0))
    if not gaps:
        raise ValueError(f"boundary of level {i} is undefined on every usable row")
    return float(max(gaps))
