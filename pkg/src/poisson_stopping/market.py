"""Market parameters, staircase payoffs and the bid-ask generator.

The generator is the piecewise-linear convex driver of a market with
bid-ask spreads on the bond rate and on the drift of the Brownian asset.
The jump asset has drift ``lam * eta`` on both sides of the book, which is
what makes the staircase-put problem reduce to a chain of one-dimensional
PDEs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class MarketParams:
    sigma: float = 0.2
    eta: float = 0.1
    r_low: float = 0.02
    r_high: float = 0.05
    mu1_low: float = 0.03
    mu1_high: float = 0.03
    lam: float = 0.2
    k: int = 4
    T: float = 5.0
    s0: float = 1.0

    @property
    def mu2(self) -> float:
        """Drift of the jump asset; both bid and ask equal ``lam * eta``."""
        return self.lam * self.eta

    @property
    def max_strike(self) -> float:
        return (1.0 + self.eta) ** self.k

    @property
    def linear(self) -> bool:
        return self.r_low == self.r_high

    def strike(self, i: int) -> float:
        return (1.0 + self.eta) ** min(i, self.k)

    def replace(self, **changes) -> "MarketParams":
        data = asdict(self)
        data.update(changes)
        return MarketParams(**data)

    def as_dict(self) -> dict:
        return asdict(self)

    def structural_violations(self) -> list[str]:
        out = []
        if not self.sigma > 0:
            out.append("sigma > 0")
        if not self.lam > 0:
            out.append("lambda > 0")
        if not self.T > 0:
            out.append("T > 0")
        if not self.eta > -1:
            out.append("eta > -1")
        if not self.s0 > 0:
            out.append("s0 > 0")
        if int(self.k) != self.k or self.k < 0:
            out.append("k is a nonnegative integer")
        if self.r_low > self.r_high:
            out.append("r_low <= r_high")
        if self.mu1_low > self.mu1_high:
            out.append("mu1_low <= mu1_high")
        if self.k >= 1 and self.eta == 0:
            out.append("eta != 0 when k >= 1")
        values = [self.sigma, self.eta, self.r_low, self.r_high, self.mu1_low,
                  self.mu1_high, self.lam, self.T, self.s0]
        if not all(np.isfinite(values)):
            out.append("all parameters finite")
        return out


def payoff(i: int, s, params: MarketParams):
    """Put payoff with the staircase strike ``(1+eta)**min(i, k)``."""
    return np.maximum(params.strike(i) - np.asarray(s, dtype=float), 0.0)


def generator_eval(y, z, c, params: MarketParams, eta_active: bool = True):
    """Evaluate the bid-ask driver f(y, z, c).

    With ``eta_active=False`` every term in ``c`` is dropped, which is the
    regime after the jump cap has been reached.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    sig = params.sigma
    if eta_active:
        if params.eta == 0:
            raise ValueError("eta-active regime requires eta != 0")
        cj = c / params.eta
    else:
        cj = np.zeros_like(c)
    x = y - z / sig - cj
    zs = z / sig
    mu2 = params.mu2
    return (
        -params.r_low * np.maximum(x, 0.0)
        + params.r_high * np.maximum(-x, 0.0)
        - params.mu1_low * np.maximum(zs, 0.0)
        + params.mu1_high * np.maximum(-zs, 0.0)
        - mu2 * np.maximum(cj, 0.0)
        + mu2 * np.maximum(-cj, 0.0)
    )


def lipschitz_bound(params: MarketParams, eta_active: bool = True) -> float:
    """Analytic Lipschitz constant of the driver w.r.t. the l1 norm."""
    r = max(abs(params.r_low), abs(params.r_high))
    mu1 = max(abs(params.mu1_low), abs(params.mu1_high))
    dy = r
    dz = (r + mu1) / params.sigma
    dc = 0.0
    if eta_active:
        dc = (r + abs(params.mu2)) / abs(params.eta)
    return max(dy, dz, dc)


@dataclass(frozen=True)
class DualVertexSet:
    """Vertices (alpha, beta, gamma) of the effective domain of the dual."""

    vertices: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def gamma_min(self) -> float:
        return float(self.vertices[:, 2].min())


def dual_vertices(params: MarketParams, eta_active: bool = True) -> DualVertexSet:
    """Enumerate the corners of the box where the convex dual vanishes.

    The box is ``-r_high <= a <= -r_low``, ``-mu1_high <= a + sigma*b <=
    -mu1_low`` and ``-mu2_high <= a + eta*g <= -mu2_low``. Coinciding bounds
    collapse to a single vertex.
    """
    if params.sigma <= 0:
        raise ValueError("sigma must be positive")
    if eta_active and params.eta == 0:
        raise ValueError("eta-active regime requires eta != 0")
    mu2_low = mu2_high = params.mu2
    rows = []
    for a in (-params.r_high, -params.r_low):
        for b in (-params.mu1_high, -params.mu1_low):
            beta = (b - a) / params.sigma
            if eta_active:
                for e in (-mu2_high, -mu2_low):
                    rows.append((a, beta, (e - a) / params.eta))
            else:
                rows.append((a, beta, 0.0))
    # exact duplicates only arise from coinciding bounds
    unique = sorted(set(rows))
    return DualVertexSet(np.array(unique, dtype=float))


def generator_via_dual(y, z, c, vertices: DualVertexSet):
    """Driver as the maximum of the linear forms a*y + b*z + g*c over vertices."""
    v = vertices.vertices
    if len(v) == 0:
        raise ValueError("empty vertex set")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    c = np.asarray(c, dtype=float)
    forms = v[:, 0, None] * y.ravel() + v[:, 1, None] * z.ravel() + v[:, 2, None] * c.ravel()
    return forms.max(axis=0).reshape(np.broadcast(y, z, c).shape)


@dataclass
class ValidationReport:
    passed: bool
    violations: list[str]
    h3_min_ratio: float | None = None
    gamma_min: float | None = None

    def __bool__(self) -> bool:
        return self.passed


def h3_ratios(params: MarketParams, n: int = 1000, seed: int = 0, scale: float = 5.0) -> np.ndarray:
    """Sampled jump-comparison ratios (f(c) - f(c')) / (lam * (c - c'))."""
    rng = np.random.default_rng(seed)
    y, z, c1, c2 = rng.uniform(-scale, scale, size=(4, n))
    same = c1 == c2
    c2[same] += 1.0
    f1 = generator_eval(y, z, c1, params)
    f2 = generator_eval(y, z, c2, params)
    return (f1 - f2) / (params.lam * (c1 - c2))


def validate_assumptions(params: MarketParams, n_samples: int = 1000, seed: int = 0) -> ValidationReport:
    """Check the structural constraints, the rate-sign conditions, the
    dual-domain bound ``gamma >= -lam`` and the sampled jump-comparison bound.

    Failures are collected, never raised.
    """
    violations = list(params.structural_violations())
    if violations:
        return ValidationReport(False, violations)

    h3_min = None
    gamma_min = None
    if params.k >= 1:
        eta = params.eta
        if eta > 0:
            if params.r_low < 0:
                violations.append("r_low >= 0 for eta > 0")
            if (params.mu2 - params.r_low) / eta > params.lam:
                violations.append("(mu2 - r_low)/eta <= lambda for eta > 0")
        else:
            if params.r_high > 0:
                violations.append("r_high <= 0 for eta < 0")
            if (params.mu2 - params.r_high) / eta > params.lam:
                violations.append("(mu2 - r_high)/eta <= lambda for eta < 0")
        verts = dual_vertices(params)
        gamma_min = verts.gamma_min
        if gamma_min < -params.lam - 1e-12:
            violations.append("gamma >= -lambda on the effective domain")
        h3_min = float(h3_ratios(params, n_samples, seed).min())
        if h3_min < -1.0 - 1e-10:
            violations.append("jump comparison ratio >= -1")
    return ValidationReport(not violations, violations, h3_min, gamma_min)
