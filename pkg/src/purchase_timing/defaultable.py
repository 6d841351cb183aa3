"""Purchase timing on a defaultable stock with local default intensity.

The stock follows a geometric Brownian motion until it jumps to zero at a
default time driven by a local intensity. The market prices under one
intensity ``lambda`` and the buyer under another, ``lambda_b``; both are
risk-neutral intensities, which is all the prices depend on.

Quantities on a common (t, s) grid:

* ``P`` and ``Pb``: market and buyer prices of the European claim;
* ``G``: the drift function ``(lambda_b - lambda)(s P_s + P(t,0) - P)``;
* ``V``: the buyer's minimal expected purchase cost, ``V <= min(P, Pb)``;
* ``L = P - V``: delayed purchase premium, zero exactly on the buy region;
* ``J = Pb - V``: the buyer's optimal profit spread.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    Coefficients,
    Grid1D,
    ObstacleProblem,
    RegionSet,
    Surface,
    extract_region,
    march,
)
from .errors import GridMismatch, InvalidPolicy, NotConstantIntensity
from .numcore import BSParams, bs_price, norm_cdf, norm_pdf
from .payoffs import Payoff

SIDES = ("market", "buyer")


# --------------------------------------------------------------------------- model


@dataclass(frozen=True)
class Intensity:
    """Local default intensity ``lambda(t, s)``, clamped to ``[0, lam_max]``.

    Kinds: ``constant`` (``level``), ``exp_local`` (``level * exp(-decay (s - ref))``)
    and ``table`` (linear interpolation in ``s``, constant extrapolation).
    """

    kind: str = "constant"
    level: float = 0.0
    decay: float = 0.0
    ref: float = 0.0
    table_s: tuple[float, ...] = ()
    table_v: tuple[float, ...] = ()
    lam_max: float = 5.0

    def __post_init__(self):
        if self.kind not in ("constant", "exp_local", "table"):
            raise ValueError(f"unknown intensity kind {self.kind!r}")
        if self.lam_max <= 0:
            raise ValueError("lam_max must be positive")
        if self.kind in ("constant", "exp_local") and self.level < 0:
            raise ValueError("intensity level must be non-negative")
        if self.kind == "table":
            s, v = np.asarray(self.table_s, float), np.asarray(self.table_v, float)
            if s.size < 1 or s.shape != v.shape or np.any(np.diff(s) <= 0):
                raise ValueError("intensity table needs increasing table_s matching table_v")
            if np.any(v < 0):
                raise ValueError("intensity table values must be non-negative")

    @classmethod
    def constant(cls, level: float, lam_max: float = 5.0) -> "Intensity":
        return cls("constant", level, lam_max=lam_max)

    @classmethod
    def exp_local(cls, level: float, decay: float, ref: float, lam_max: float = 5.0) -> "Intensity":
        return cls("exp_local", level, decay, ref, lam_max=lam_max)

    @classmethod
    def table(cls, s, values, lam_max: float = 5.0) -> "Intensity":
        return cls("table", table_s=tuple(map(float, s)), table_v=tuple(map(float, values)),
                   lam_max=lam_max)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or (self.kind == "exp_local" and self.decay == 0.0)

    def __call__(self, t, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "constant":
            lam = np.full(s.shape, self.level)
        elif self.kind == "exp_local":
            lam = self.level * np.exp(np.minimum(-self.decay * (s - self.ref), 700.0))
        else:
            lam = np.interp(s, self.table_s, self.table_v)
        return np.clip(lam, 0.0, self.lam_max)


@dataclass(frozen=True)
class DefaultableModel:
    r: float
    sigma: float
    T: float
    market: Intensity
    buyer: Intensity

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.r < 0:
            raise ValueError("r must be non-negative")

    def intensity(self, side: str) -> Intensity:
        if side == "market":
            return self.market
        if side == "buyer":
            return self.buyer
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")

    def swapped(self) -> "DefaultableModel":
        return replace(self, market=self.buyer, buyer=self.market)


@dataclass(frozen=True)
class Settings:
    """Grid and solver controls. ``s_max`` defaults to ``4 * strike``."""

    M: int = 1000
    N: int = 1000
    s_max: float | None = None
    scheme: str = "crank-nicolson"
    rannacher_steps: int = 2
    omega: float = 1.5
    tol: float = 1e-8
    max_iter: int = 10000
    region_abs_tol: float = 1e-7  # multiplied by the strike
    region_rel_tol: float = 1e-6
    derivative_order: int = 4
    jobs: int = 1

    def grid(self, model: DefaultableModel, payoff: Payoff, T: float | None = None) -> Grid1D:
        s_max = self.s_max if self.s_max is not None else 4.0 * payoff.strike
        return Grid1D.uniform(s_max, model.T if T is None else T, self.M, self.N)

    def problem_kwargs(self, payoff: Payoff) -> dict:
        return dict(scheme=self.scheme, rannacher_steps=self.rannacher_steps, omega=self.omega,
                    tol=self.tol, max_iter=self.max_iter,
                    region_abs_tol=self.region_abs_tol * payoff.strike,
                    region_rel_tol=self.region_rel_tol)


DEFAULT_SETTINGS = Settings()


def _run(fns, jobs: int):
    if jobs <= 1 or len(fns) < 2:
        return [f() for f in fns]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return [f.result() for f in [pool.submit(fn) for fn in fns]]


def _slices(surface: Surface):
    """Map a grid time to the surface's slice at that time."""
    index = {float(t): n for n, t in enumerate(surface.grid.t)}

    def at(t):
        return surface.values[index[float(t)]]

    return at


def _default_value(model: DefaultableModel, payoff: Payoff, t):
    # price of the claim once the stock sits at zero
    return math.exp(-model.r * (model.T - t)) * float(payoff(0.0))


def _coefficients(model: DefaultableModel, lam, jump_value=None, source=None):
    """Operator ``(r+lam) s d/ds + sigma^2 s^2/2 d2/ds2 - (r+lam)`` plus ``lam * jump_value(t)``."""
    r, sig = model.r, model.sigma

    def coef(t, s):
        lt = lam(t, s)
        src = 0.0
        if jump_value is not None:
            src = lt * jump_value(t)
        if source is not None:
            src = src + source(t)
        return Coefficients(0.5 * sig * sig * s * s, (r + lt) * s, r + lt, src)

    return coef


# --------------------------------------------------------------------------- European prices


def closed_form_price(model: DefaultableModel, payoff: Payoff, t: float, s, side: str = "market"):
    """Closed-form European price under a constant intensity.

    Calls and digital calls are Black-Scholes prices with discount rate
    ``r + lambda``; the put adds the default payout ``K e^{-r tau}(1 - e^{-lambda tau})``.
    """
    lam_spec = model.intensity(side)
    if not lam_spec.is_constant:
        raise NotConstantIntensity(f"{side} intensity is {lam_spec.kind}, not constant")
    lam = min(lam_spec.level, lam_spec.lam_max)
    tau = model.T - t
    if tau < 0:
        raise ValueError("t must not exceed maturity")
    K = payoff.strike

    def bs(kind, strike):
        return bs_price(BSParams(s, strike, model.r + lam, model.sigma, tau), kind)

    if payoff.kind == "call":
        return bs("call", K)
    if payoff.kind == "digital_call":
        return bs("digital_call", K)
    if payoff.kind == "put":
        return bs("put", K) + K * math.exp(-model.r * tau) * (1.0 - math.exp(-lam * tau))
    if payoff.kind == "bull_spread":
        return bs("call", K) - bs("call", payoff.strike_high)
    raise ValueError(f"no closed form for payoff kind {payoff.kind!r}")


def price_surface(model: DefaultableModel, payoff: Payoff, side: str = "market",
                  settings: Settings = DEFAULT_SETTINGS, grid: Grid1D | None = None) -> Surface:
    """European price on the whole grid under the chosen side's intensity."""
    grid = grid or settings.grid(model, payoff)
    lam = model.intensity(side)
    jump = lambda t: _default_value(model, payoff, t)  # noqa: E731
    problem = ObstacleProblem(
        grid, _coefficients(model, lam, jump), payoff.on_grid(grid.s), lower_bc=jump,
        label="P" if side == "market" else "Pb", measure=side, **settings.problem_kwargs(payoff))
    surface, _ = march(problem)
    return surface


def _ds(values: np.ndarray, s: np.ndarray, order: int = 2) -> np.ndarray:
    """First derivative along the last axis: central inside, one-sided at the edges."""
    d = np.gradient(values, s, axis=-1, edge_order=2)
    if order == 4 and s.size >= 5:
        h = s[1] - s[0]
        v = values
        d[..., 2:-2] = (-v[..., 4:] + 8 * v[..., 3:-1] - 8 * v[..., 1:-3] + v[..., :-4]) / (12 * h)
    return d


def drift_G(model: DefaultableModel, payoff: Payoff, market: Surface, order: int = 2) -> Surface:
    """Drift function ``G = (lambda_b - lambda)(s P_s + P(t,0) - P)`` from the market surface.

    ``order`` selects 2nd- or 4th-order central differences for ``P_s``.
    Second order keeps the bracket term non-negative whenever the discrete
    price is convex in ``s``.
    """
    g = market.grid
    if not isinstance(g, Grid1D):
        raise GridMismatch("drift_G needs a 1-D market surface")
    P = market.values
    T = g.t[:, None]
    S = g.s[None, :]
    p0 = np.exp(-model.r * (model.T - T)) * float(payoff(0.0))
    bracket = S * _ds(P, g.s, order) + p0 - P
    dlam = model.buyer(T, S) - model.market(T, S)
    return market.derived(dlam * bracket, "G")


def drift_G_closed_form(model: DefaultableModel, payoff: Payoff, t, s):
    """Drift function for constant intensities, calls/puts and digital calls."""
    lam = model.market.level
    dlam = model.buyer(t, s) - model.market(t, s)
    tau = model.T - np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    K = payoff.strike
    with np.errstate(divide="ignore", invalid="ignore"):
        vst = model.sigma * np.sqrt(tau)
        d2 = (np.log(s / K) + (model.r + lam - 0.5 * model.sigma ** 2) * tau) / vst
        disc = np.exp(-(model.r + lam) * tau)
        if payoff.kind in ("call", "put"):
            out = dlam * K * disc * norm_cdf(d2)
        elif payoff.kind == "digital_call":
            out = dlam * disc * (norm_pdf(d2) / vst - norm_cdf(d2))
        else:
            raise ValueError(f"no closed-form drift for {payoff.kind!r}")
    return np.nan_to_num(out)


# --------------------------------------------------------------------------- timing problems


def solve_min_cost(model: DefaultableModel, payoff: Payoff, settings: Settings = DEFAULT_SETTINGS,
                   market: Surface | None = None) -> tuple[Surface, RegionSet]:
    """Minimal expected purchase cost ``V`` and the buy region ``{V = P}``.

    ``V`` solves the buyer's pricing equation below the obstacle ``P``.
    """
    market = market or price_surface(model, payoff, "market", settings)
    grid = market.grid
    jump = lambda t: _default_value(model, payoff, t)  # noqa: E731
    problem = ObstacleProblem(
        grid, _coefficients(model, model.buyer, jump), market.values[-1], obstacle=market.values,
        sense="upper", lower_bc=jump, label="V", measure="buyer",
        **settings.problem_kwargs(payoff))
    V, region = march(problem)
    region.label = "buy"
    return V, region


def solve_delay_premium(model: DefaultableModel, payoff: Payoff,
                        settings: Settings = DEFAULT_SETTINGS, market: Surface | None = None,
                        G: Surface | None = None) -> tuple[Surface, RegionSet]:
    """Delayed purchase premium ``L`` from its own obstacle problem.

    ``L >= 0`` with running cost ``G`` under the buyer's operator; the region
    ``{L = 0}`` is the buy region.
    """
    market = market or price_surface(model, payoff, "market", settings)
    G = G or drift_G(model, payoff, market, settings.derivative_order)
    market.check_grid(G)
    grid = market.grid
    g_at = _slices(G)
    problem = ObstacleProblem(
        grid, _coefficients(model, model.buyer, source=lambda t: -g_at(t)), np.zeros(grid.s.size),
        obstacle=np.zeros(grid.shape), sense="lower", lower_bc=lambda t: 0.0, label="L",
        measure="buyer", **settings.problem_kwargs(payoff))
    L, region = march(problem)
    region.label = "buy"
    return L, region


@dataclass
class EuropeanTiming:
    """Everything computed for one European purchase-timing scenario."""

    P: Surface
    Pb: Surface
    G: Surface
    V: Surface
    L: Surface          # P - V
    L_direct: Surface   # from the premium's own obstacle problem
    J: Surface          # Pb - V
    buy_region: RegionSet
    premium_region: RegionSet
    extra: dict = field(default_factory=dict)


def solve_european(model: DefaultableModel, payoff: Payoff,
                   settings: Settings = DEFAULT_SETTINGS) -> EuropeanTiming:
    grid = settings.grid(model, payoff)
    P, Pb = _run([lambda: price_surface(model, payoff, "market", settings, grid),
                  lambda: price_surface(model, payoff, "buyer", settings, grid)], settings.jobs)
    G = drift_G(model, payoff, P, settings.derivative_order)
    (V, buy), (L_direct, prem) = _run(
        [lambda: solve_min_cost(model, payoff, settings, P),
         lambda: solve_delay_premium(model, payoff, settings, P, G)], settings.jobs)
    L = P.derived(P.values - V.values, "L")
    J = P.derived(Pb.values - V.values, "J", "buyer")
    return EuropeanTiming(P, Pb, G, V, L, L_direct, J, buy, prem)


# --------------------------------------------------------------------------- American options


def american_exercise(model: DefaultableModel, payoff: Payoff, side: str = "market",
                      settings: Settings = DEFAULT_SETTINGS,
                      grid: Grid1D | None = None) -> tuple[Surface, RegionSet]:
    """Finite-horizon American price and its exercise region under one side's intensity.

    After default the claim is exercised at once, so the jump target is ``F(0)``.
    The exercise region is restricted to nodes with a positive payoff.
    """
    grid = grid or settings.grid(model, payoff)
    f0 = float(payoff(0.0))
    F = payoff(grid.s)
    problem = ObstacleProblem(
        grid, _coefficients(model, model.intensity(side), lambda t: f0), F,
        obstacle=np.broadcast_to(F, grid.shape), sense="lower", lower_bc=lambda t: f0,
        label="PA" if side == "market" else "PbA", measure=side,
        **settings.problem_kwargs(payoff))
    PA, _ = march(problem)
    payoff_surface = PA.derived(np.broadcast_to(F, grid.shape), "payoff")
    where = np.broadcast_to(F > 0, grid.shape)
    region = extract_region(PA, payoff_surface, problem.region_abs_tol, problem.region_rel_tol,
                            where=where, label="exercise " + side)
    return PA, region


@dataclass
class AmericanTiming:
    PA: Surface
    PbA: Surface
    exercise: RegionSet
    exercise_buyer: RegionSet
    JA: Surface
    LA: Surface
    purchase_region: RegionSet
    P: Surface | None = None
    Pb: Surface | None = None


def american_purchase(model: DefaultableModel, payoff: Payoff,
                      settings: Settings = DEFAULT_SETTINGS,
                      european: bool = False) -> AmericanTiming:
    """Optimal purchase of an American claim.

    ``JA`` is the buyer's supremum of the discounted spread ``PbA - PA``;
    ``LA = JA - (PbA - PA)``. The purchase region is ``{JA = PbA - PA}``
    restricted to a strictly positive spread. With ``european=True`` the
    European prices are also computed on the same grid, giving access to the
    early exercise premia.
    """
    grid = settings.grid(model, payoff)
    jobs = [lambda: american_exercise(model, payoff, "market", settings, grid),
            lambda: american_exercise(model, payoff, "buyer", settings, grid)]
    if european:
        jobs += [lambda: price_surface(model, payoff, "market", settings, grid),
                 lambda: price_surface(model, payoff, "buyer", settings, grid)]
    out = _run(jobs, settings.jobs)
    (PA, ex), (PbA, exb) = out[0], out[1]
    spread = PA.derived(PbA.values - PA.values, "PbA-PA", "buyer")
    kw = settings.problem_kwargs(payoff)
    problem = ObstacleProblem(
        grid, _coefficients(model, model.buyer), np.zeros(grid.s.size), obstacle=spread.values,
        sense="lower", lower_bc=lambda t: 0.0, label="JA", measure="buyer", **kw)
    JA, _ = march(problem)
    LA = JA.derived(JA.values - spread.values, "LA")
    region = extract_region(JA, spread, kw["region_abs_tol"], kw["region_rel_tol"],
                            where=spread.values > kw["region_abs_tol"], label="purchase")
    res = AmericanTiming(PA, PbA, ex, exb, JA, LA, region)
    if european:
        res.P, res.Pb = out[2], out[3]
    return res


# --------------------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class SwitchPolicy:
    """When the buyer adopts the market measure.

    Either a deterministic time ``at_time`` (0: immediately, ``T``: never before
    maturity) or the first monitoring date at which the stock is at or below
    (``direction="below"``) / at or above (``"above"``) ``threshold``.
    """

    threshold: float | None = None
    direction: str = "below"
    at_time: float | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.at_time is None):
            raise InvalidPolicy("give exactly one of threshold or at_time")
        if self.direction not in ("below", "above"):
            raise InvalidPolicy(f"direction must be 'below' or 'above', got {self.direction!r}")

    def triggered(self, t: float, s: np.ndarray) -> np.ndarray:
        if self.at_time is not None:
            return np.full(s.shape, t >= self.at_time - 1e-12)
        return s <= self.threshold if self.direction == "below" else s >= self.threshold


def mc_price(model: DefaultableModel, payoff: Payoff, policy="market", n_paths: int = 100_000,
             seed: int = 0, s0: float = 1.0, n_steps: int = 500, valuation: str = "terminal",
             market_price=None) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of a discounted expectation at ``t = 0``.

    ``policy`` is ``"market"``, ``"buyer"`` or a :class:`SwitchPolicy`. Under a
    switch policy the paths follow the buyer's intensity until the switch time
    ``tau`` and the market's afterwards. ``valuation="terminal"`` averages
    ``e^{-rT} F(S_T)`` (the price under the concatenated measure);
    ``valuation="switch_price"`` averages ``e^{-r tau} P(tau, S_tau)`` using
    ``market_price(t, s)`` (closed form by default).

    The stock moves by exact log-normal steps between monitoring dates with the
    intensity frozen at the start of each step; defaults are drawn by thinning
    a Poisson clock at the clamped maximal intensity.
    """
    if n_paths < 1000:
        raise ValueError("n_paths must be at least 1000")
    if policy == "market":
        policy = SwitchPolicy(at_time=0.0)
    elif policy == "buyer":
        policy = SwitchPolicy(at_time=model.T + 1.0)
    elif not isinstance(policy, SwitchPolicy):
        raise InvalidPolicy(f"unrecognised policy {policy!r}")
    if valuation not in ("terminal", "switch_price"):
        raise InvalidPolicy(f"unknown valuation {valuation!r}")
    if valuation == "switch_price" and market_price is None:
        market_price = lambda t, s: closed_form_price(model, payoff, t, s, "market")  # noqa: E731

    rng = np.random.default_rng(seed)
    r, sig, T = model.r, model.sigma, model.T
    dt = T / n_steps
    s = np.full(n_paths, float(s0))
    switched = np.zeros(n_paths, dtype=bool)
    value = np.zeros(n_paths)
    done = np.zeros(n_paths, dtype=bool)
    lam_cap = max(model.market.lam_max, model.buyer.lam_max)

    for k in range(n_steps + 1):
        t = k * dt
        newly = ~switched & policy.triggered(t, s)
        if valuation == "switch_price":
            hit = newly & ~done
            if k == n_steps:
                hit = ~done
            if hit.any():
                value[hit] = math.exp(-r * t) * market_price(t, s[hit])
                done |= hit
        switched |= newly
        if k == n_steps:
            break
        lam = np.where(switched, model.market(t, s), model.buyer(t, s))
        alive = s > 0.0
        z = rng.standard_normal(n_paths)
        s = np.where(alive, s * np.exp((r + lam - 0.5 * sig * sig) * dt + sig * math.sqrt(dt) * z),
                     0.0)
        proposals = rng.poisson(lam_cap * dt, n_paths)
        accepted = rng.binomial(proposals, np.clip(lam / lam_cap, 0.0, 1.0))
        s[alive & (accepted > 0)] = 0.0

    if valuation == "terminal":
        value = math.exp(-r * T) * np.asarray(payoff(s), dtype=float)
    est = float(value.mean())
    se = float(value.std(ddof=1) / math.sqrt(n_paths))
    return est, se
