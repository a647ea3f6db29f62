"""Fully implicit finite-difference solver for the chain of value surfaces.

Level ``k`` (jump cap reached) solves

    V_t + 0.5 sigma^2 s^2 V_ss - r_low (V - s V_s)^+ + r_high (V - s V_s)^-
        + lam ((K_k - s)^+ - V)^+ = 0,

and each level ``i < k`` replaces the penalty by a coupling to the already
solved level ``i + 1`` inside the rate bracket

    x = V - s V_s - (V^{i+1} - V + ((K_{i+1} - s)^+ - V^{i+1})^+) / eta.

Both nonlinearities are maxima of affine maps (``-r x`` over the two rates,
``a * lam * (g - V)`` over ``a`` in {0, 1}), so every backward Euler step is
a discrete HJB equation solved exactly by Howard policy iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded

from .market import MarketParams, validate_assumptions


# "upwind" is first-order; "central" switches to central differences wherever
# the stencil stays monotone.
DEFAULT_CONVECTION = "upwind"


class SolverError(RuntimeError):
    level: int | None = None


class ConvergenceError(SolverError):
    def __init__(self, message: str, worst_residual: float):
        super().__init__(message)
        self.worst_residual = worst_residual


class NumericalError(SolverError):
    pass


class InvalidParametersError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid parameters: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class GridSpec:
    """Uniform (t, s) grid. ``s_max=None`` means ``4 * (1+eta)**k``."""

    ns: int = 400
    nt: int = 400
    s_max: float | None = None

    def resolved(self, params: MarketParams) -> "GridSpec":
        if self.s_max is not None:
            return self
        return replace(self, s_max=4.0 * params.max_strike)

    def violations(self, params: MarketParams) -> list[str]:
        g = self.resolved(params)
        out = []
        if g.ns < 16:
            out.append("ns >= 16")
        if g.nt < 16:
            out.append("nt >= 16")
        if not g.s_max > params.max_strike:
            out.append("s_max > (1+eta)^k")
        return out

    def s_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.s_max, self.ns + 1)

    def t_nodes(self, T: float) -> np.ndarray:
        return np.linspace(0.0, T, self.nt + 1)

    def as_dict(self) -> dict:
        return {"ns": self.ns, "nt": self.nt, "s_max": self.s_max}


@dataclass(frozen=True)
class LevelResult:
    values: np.ndarray = field(repr=False)
    iterations: int
    max_step_iterations: int
    residual: float
    seconds: float


@dataclass(frozen=True)
class ValueChain:
    """Value surfaces ``levels[i]`` of shape (nt+1, ns+1), time ascending."""

    levels: np.ndarray = field(repr=False)
    grid: GridSpec
    params: MarketParams
    strikes: tuple[float, ...]
    diagnostics: tuple[dict, ...] = ()

    def __post_init__(self):
        self.levels.setflags(write=False)

    @property
    def k(self) -> int:
        return len(self.levels) - 1

    @property
    def s(self) -> np.ndarray:
        return self.grid.s_nodes()

    @property
    def t(self) -> np.ndarray:
        return self.grid.t_nodes(self.params.T)

    def payoff(self, i: int, s=None) -> np.ndarray:
        s = self.s if s is None else np.asarray(s, dtype=float)
        return np.maximum(self.strikes[min(i, self.k)] - s, 0.0)

    def interpolate(self, i: int, t, s):
        """Bilinear interpolation of level ``min(i, k)``; zero beyond s_max."""
        surf = self.levels[min(i, self.k)]
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        dt = self.params.T / self.grid.nt
        ds = self.grid.s_max / self.grid.ns
        xt = np.clip(t / dt, 0.0, self.grid.nt)
        xs = np.clip(s / ds, 0.0, self.grid.ns)
        j = np.minimum(np.floor(xt).astype(int), self.grid.nt - 1)
        m = np.minimum(np.floor(xs).astype(int), self.grid.ns - 1)
        wt = xt - j
        ws = xs - m
        v = ((1 - wt) * ((1 - ws) * surf[j, m] + ws * surf[j, m + 1])
             + wt * ((1 - ws) * surf[j + 1, m] + ws * surf[j + 1, m + 1]))
        return np.where(s > self.grid.s_max, 0.0, v)


class _LevelOperator:
    """Policy-indexed tridiagonal pieces for one level on a fixed grid.

    Policy 0 uses r_low, policy 1 uses r_high. ``reaction`` is the
    coefficient of -V in the rate term and ``kappa`` the coefficient of the
    coupling source, both per rate.
    """

    def __init__(self, params: MarketParams, grid: GridSpec, coupled: bool, convection: str):
        ns = grid.ns
        m = np.arange(ns + 1, dtype=float)
        diff = 0.5 * params.sigma ** 2 * m ** 2
        diff[0] = 0.0
        self.lo = []
        self.up = []
        self.reaction = []
        self.kappa = []
        for r in (params.r_low, params.r_high):
            conv = r * m
            if convection == "central":
                central = diff >= 0.5 * np.abs(conv)
            elif convection == "upwind":
                central = np.zeros(ns + 1, dtype=bool)
            else:
                raise ValueError(f"unknown convection scheme {convection!r}")
            lo = np.where(central, diff - 0.5 * conv, diff + np.maximum(-conv, 0.0))
            up = np.where(central, diff + 0.5 * conv, diff + np.maximum(conv, 0.0))
            lo[0] = up[0] = 0.0
            lo[-1] = up[-1] = 0.0
            self.lo.append(lo)
            self.up.append(up)
            if coupled:
                self.reaction.append(r * (1.0 + 1.0 / params.eta))
                self.kappa.append(r / params.eta)
            else:
                self.reaction.append(r)
                self.kappa.append(0.0)
        self.ns = ns

    def apply(self, which: int, u: np.ndarray, source: np.ndarray | None) -> np.ndarray:
        """Rate part of the generator for one rate choice, on every node."""
        lo, up = self.lo[which], self.up[which]
        out = -(lo + up + self.reaction[which]) * u
        out[1:] += lo[1:] * u[:-1]
        out[:-1] += up[:-1] * u[1:]
        if source is not None:
            out += self.kappa[which] * source
        return out

    def policy(self, u: np.ndarray, source: np.ndarray | None) -> np.ndarray:
        # ties keep r_low
        return self.apply(1, u, source) > self.apply(0, u, source)

    def banded(self, pol: np.ndarray, dt: float, penalty: np.ndarray | None) -> np.ndarray:
        lo = np.where(pol, self.lo[1], self.lo[0])
        up = np.where(pol, self.up[1], self.up[0])
        rho = np.where(pol, self.reaction[1], self.reaction[0])
        diag = 1.0 + dt * (lo + up + rho)
        if penalty is not None:
            diag = diag + dt * penalty
        ab = np.zeros((3, self.ns + 1))
        ab[0, 1:] = -dt * up[:-1]
        ab[1] = diag
        ab[2, :-1] = -dt * lo[1:]
        # Dirichlet row at s_max
        ab[1, -1] = 1.0
        ab[2, -2] = 0.0
        return ab

    def kappa_vec(self, pol: np.ndarray) -> np.ndarray:
        return np.where(pol, self.kappa[1], self.kappa[0])


def implicit_system(params: MarketParams, grid: GridSpec, coupled: bool, policy, penalty=None,
                    convection: str = DEFAULT_CONVECTION):
    """Assembled (lower, diag, upper) of the implicit step matrix for a policy.

    ``policy`` is a boolean array (True selects r_high); ``penalty`` is the
    per-node penalty rate ``lam * a``. Exposed for monotonicity checks.
    """
    grid = grid.resolved(params)
    op = _LevelOperator(params, grid, coupled, convection)
    dt = params.T / grid.nt
    pen = None if penalty is None else np.asarray(penalty, dtype=float)
    ab = op.banded(np.asarray(policy, dtype=bool), dt, pen)
    return ab[2, :-1].copy(), ab[1].copy(), ab[0, 1:].copy()


def _march(params, grid, terminal, *, obstacle=None, lam=0.0, coupling=None,
           tol=1e-10, max_iter=50, convection=DEFAULT_CONVECTION):
    """Backward Euler with Howard iteration at every step.

    ``obstacle`` (1-d) activates the penalty ``lam (obstacle - V)^+``;
    ``coupling`` (nt+1, ns+1) is ``max(g_{i+1}, V^{i+1})`` for lower levels.
    """
    started = time.perf_counter()
    nt, ns = grid.nt, grid.ns
    dt = params.T / nt
    op = _LevelOperator(params, grid, coupling is not None, convection)
    out = np.empty((nt + 1, ns + 1))
    out[-1] = terminal
    pol = np.zeros(ns + 1, dtype=bool)
    total = 0
    worst_steps = 0
    worst_res = 0.0
    scale = max(1.0, float(np.max(np.abs(terminal))))
    for j in range(nt - 1, -1, -1):
        old = out[j + 1]
        src = None if coupling is None else coupling[j]
        u = old.copy()
        active = None
        for it in range(1, max_iter + 1):
            if obstacle is not None:
                active = obstacle > u
            pen = None if obstacle is None else lam * active
            rhs = old.copy()
            if src is not None:
                rhs += dt * op.kappa_vec(pol) * src
            if obstacle is not None:
                rhs += dt * pen * obstacle
            rhs[-1] = 0.0
            u_new = solve_banded((1, 1), op.banded(pol, dt, pen), rhs, check_finite=False)
            if not np.all(np.isfinite(u_new)):
                raise NumericalError(f"non-finite value at time index {j}")
            new_pol = op.policy(u_new, src)
            change = np.max(np.abs(u_new - u))
            u = u_new
            stable = np.array_equal(new_pol, pol)
            if obstacle is not None:
                stable = stable and np.array_equal(obstacle > u, active)
            pol = new_pol
            if stable or change <= tol * scale:
                break
        else:
            res = _residual(op, u, old, src, obstacle, lam, dt)
            raise ConvergenceError(
                f"policy iteration did not converge in {max_iter} iterations at time index {j}",
                res,
            )
        total += it
        worst_steps = max(worst_steps, it)
        worst_res = max(worst_res, _residual(op, u, old, src, obstacle, lam, dt))
        out[j] = u
    return LevelResult(out, total, worst_steps, worst_res, time.perf_counter() - started)


def _residual(op, u, old, src, obstacle, lam, dt):
    ham = np.maximum(op.apply(0, u, src), op.apply(1, u, src))
    if obstacle is not None:
        ham = ham + lam * np.maximum(obstacle - u, 0.0)
    res = u - old - dt * ham
    return float(np.max(np.abs(res[:-1])))


def step_residuals(params: MarketParams, grid: GridSpec, values: np.ndarray, *, obstacle=None,
                   lam=0.0, coupling=None, convection=DEFAULT_CONVECTION) -> np.ndarray:
    """Per-step max residual of the discrete HJB equation for a solved surface."""
    grid = grid.resolved(params)
    op = _LevelOperator(params, grid, coupling is not None, convection)
    dt = params.T / grid.nt
    return np.array([
        _residual(op, values[j], values[j + 1], None if coupling is None else coupling[j],
                  obstacle, lam, dt)
        for j in range(grid.nt)
    ])


def _check(params, grid, validate):
    problems = list(grid.violations(params))
    if validate:
        problems += validate_assumptions(params).violations
    else:
        problems += params.structural_violations() if params.lam != 0 else [
            v for v in params.structural_violations() if v != "lambda > 0"]
    if problems:
        raise InvalidParametersError(problems)


def solve_top_level(params: MarketParams, grid: GridSpec | None = None, *, strike: float | None = None,
                    validate: bool = True, tol: float = 1e-10, max_iter: int = 50,
                    convection: str = DEFAULT_CONVECTION) -> LevelResult:
    """Solve the penalized equation for the capped level ``k``.

    ``validate=False`` skips the assumption checks (structural ones still
    apply, except that ``lam = 0`` is allowed and gives a European put).
    """
    grid = (grid or GridSpec()).resolved(params)
    _check(params, grid, validate)
    strike = params.max_strike if strike is None else strike
    g = np.maximum(strike - grid.s_nodes(), 0.0)
    return _march(params, grid, g, obstacle=g, lam=params.lam, tol=tol, max_iter=max_iter,
                  convection=convection)


def solve_level(params: MarketParams, grid: GridSpec | None, i: int, v_next: np.ndarray, *,
                strike: float | None = None, next_strike: float | None = None,
                next_payoff: np.ndarray | None = None, validate: bool = True,
                tol: float = 1e-10, max_iter: int = 50, convection: str = DEFAULT_CONVECTION) -> LevelResult:
    """Solve level ``i < k`` given the solved surface of level ``i + 1``.

    ``next_payoff`` overrides the 1-d payoff of level ``i + 1`` used inside
    the coupling bracket.
    """
    if params.eta == 0:
        raise ValueError("coupled levels require eta != 0")
    grid = (grid or GridSpec()).resolved(params)
    _check(params, grid, validate)
    s = grid.s_nodes()
    strike = params.strike(i) if strike is None else strike
    if next_payoff is None:
        next_strike = params.strike(i + 1) if next_strike is None else next_strike
        next_payoff = np.maximum(next_strike - s, 0.0)
    v_next = np.asarray(v_next, dtype=float)
    if v_next.shape != (grid.nt + 1, grid.ns + 1):
        raise ValueError(f"v_next has shape {v_next.shape}, expected {(grid.nt + 1, grid.ns + 1)}")
    coupling = np.maximum(next_payoff[None, :], v_next)
    g = np.maximum(strike - s, 0.0)
    return _march(params, grid, g, coupling=coupling, tol=tol, max_iter=max_iter,
                  convection=convection)


def solve_chain(params: MarketParams, grid: GridSpec | None = None, *, strikes=None,
                validate: bool = True, tol: float = 1e-10, max_iter: int = 50,
                convection: str = DEFAULT_CONVECTION) -> ValueChain:
    """Solve level ``k`` and then levels ``k-1, ..., 0`` in turn."""
    grid = (grid or GridSpec()).resolved(params)
    k = int(params.k)
    if strikes is None:
        strikes = tuple(params.strike(i) for i in range(k + 1))
    strikes = tuple(float(x) for x in strikes)
    if len(strikes) != k + 1:
        raise ValueError("need one strike per level")
    levels = np.empty((k + 1, grid.nt + 1, grid.ns + 1))
    diags: list[dict] = [{}] * (k + 1)
    opts = dict(validate=validate, tol=tol, max_iter=max_iter, convection=convection)
    for i in range(k, -1, -1):
        try:
            if i == k:
                res = solve_top_level(params, grid, strike=strikes[k], **opts)
            else:
                res = solve_level(params, grid, i, levels[i + 1], strike=strikes[i],
                                  next_strike=strikes[i + 1], **opts)
        except SolverError as exc:
            exc.level = i
            exc.args = (f"level {i}: {exc.args[0]}",)
            raise
        levels[i] = res.values
        diags[i] = {
            "level": i,
            "iterations": res.iterations,
            "max_step_iterations": res.max_step_iterations,
            "residual": res.residual,
            "seconds": res.seconds,
        }
    return ValueChain(levels, grid, params, strikes, tuple(diags))
