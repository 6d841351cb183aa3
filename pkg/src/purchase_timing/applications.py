"""Two uses of the purchase-timing machinery on the defaultable-stock model.

Rolling: a hedger long a short-dated option must switch into the long-dated
one somewhere in the window ``[T - T1, T1]``, paying ``h = P(T) - P(T1)``.

Buy then sell: the investor buys at one stopping time and sells at a later
one, both chosen under the buyer's measure.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .defaultable import (
    DEFAULT_SETTINGS,
    DefaultableModel,
    Settings,
    _coefficients,
    drift_G,
    price_surface,
)
from .engine import Grid1D, ObstacleProblem, RegionSet, Surface, extract_region, march
from .errors import GridMismatch, WindowEmpty
from .payoffs import Payoff


@dataclass(frozen=True)
class RollSpec:
    """Long maturity ``T``, short maturity ``T1``; rolling is allowed on ``[T - T1, T1]``."""

    T: float
    T1: float

    def __post_init__(self):
        if not 0.0 < self.T1 < self.T:
            raise WindowEmpty(f"need 0 < T1 < T, got T1={self.T1}, T={self.T}")
        if self.window_start > self.T1:
            raise WindowEmpty(f"window [{self.window_start}, {self.T1}] is empty")

    @property
    def window_start(self) -> float:
        return self.T - self.T1


def roll_grid(spec: RollSpec, s_max: float, M: int, steps_per_year: int) -> Grid1D:
    """Grid on ``[0, T]`` whose time axis contains both ``T - T1`` and ``T1``."""
    knots = sorted({0.0, spec.window_start, spec.T1, spec.T})
    pieces = [np.linspace(a, b, max(1, int(round((b - a) * steps_per_year))) + 1)[:-1]
              for a, b in zip(knots[:-1], knots[1:]) if b > a]
    t = np.concatenate(pieces + [np.array([spec.T])])
    return Grid1D(np.linspace(0.0, s_max, M + 1), t)


@dataclass
class RollResult:
    V: Surface          # minimal expected rolling cost
    L: Surface          # h - V
    region: RegionSet   # where rolling now is optimal (t >= T - T1)
    h: Surface
    P_long: Surface
    P_short: Surface
    G_diff: Surface     # drift of the long leg minus that of the short leg


def rolling_value(model: DefaultableModel, payoff: Payoff, spec: RollSpec,
                  settings: Settings = DEFAULT_SETTINGS) -> RollResult:
    """Optimal roll-over time of a short-dated option into a long-dated one.

    Both legs and the rolling problem use the fully implicit scheme on a shared
    time axis, so when the buyer agrees with the market the discrete net cost
    ``h`` is itself a discrete martingale and ``L`` vanishes to solver tolerance.
    """
    settings = replace(settings, scheme="implicit")
    s_max = settings.s_max if settings.s_max is not None else 4.0 * payoff.strike
    grid = roll_grid(spec, s_max, settings.M, max(1, int(round(settings.N / spec.T))))
    long_model = replace(model, T=spec.T)
    short_model = replace(model, T=spec.T1)
    n1 = int(np.argmin(np.abs(grid.t - spec.T1)))
    short_grid = grid.restrict_time(n1)
    P_long_full = price_surface(long_model, payoff, "market", settings, grid)
    P_short = price_surface(short_model, payoff, "market", settings, short_grid)
    P_long = Surface(short_grid, P_long_full.values[: n1 + 1], "P_long", "market")
    P_long.check_grid(P_short)
    h = P_long.derived(P_long.values - P_short.values, "h")

    G_long = drift_G(long_model, payoff, P_long_full, settings.derivative_order)
    G_short = drift_G(short_model, payoff, P_short, settings.derivative_order)
    G_diff = P_short.derived(G_long.values[: n1 + 1] - G_short.values, "G_diff")

    t = short_grid.t
    open_window = t >= spec.window_start - 1e-12
    obstacle = np.where(open_window[:, None], h.values, np.inf)
    h0 = {float(tt): h.values[n, 0] for n, tt in enumerate(t)}
    jump = lambda tt: h0[float(tt)]  # noqa: E731
    kw = settings.problem_kwargs(payoff)
    problem = ObstacleProblem(
        short_grid, _coefficients(short_model, model.buyer, jump), h.values[-1],
        obstacle=obstacle, sense="upper", lower_bc=jump, label="V_roll", measure="buyer", **kw)
    V, _ = march(problem)
    region = extract_region(V, h, kw["region_abs_tol"], kw["region_rel_tol"],
                            where=np.broadcast_to(open_window[:, None], h.values.shape),
                            label="roll")
    L = h.derived(h.values - V.values, "L_roll")
    return RollResult(V, L, region, h, P_long, P_short, G_diff)


@dataclass
class BuySellResult:
    R: Surface              # best discounted sale value
    U: Surface              # value of buying then selling
    buy_region: RegionSet
    sell_region: RegionSet
    P: Surface
    Pb: Surface | None = None


def buy_sell(model: DefaultableModel, payoff: Payoff, settings: Settings = DEFAULT_SETTINGS,
             market: Surface | None = None, with_buyer_price: bool = False) -> BuySellResult:
    """Two-stage buy-then-sell problem solved as two nested supremum problems.

    ``R`` is the best expected discounted sale price under the buyer's measure
    (obstacle ``P``), then ``U`` is the best expected discounted ``R - P``
    (obstacle ``R - P``). The sell region is ``{R = P}``; the buy region is
    ``{U = R - P}`` outside the sell region.
    """
    market = market or price_surface(model, payoff, "market", settings)
    grid = market.grid
    if not isinstance(grid, Grid1D):
        raise GridMismatch("buy_sell needs a 1-D market surface")
    kw = settings.problem_kwargs(payoff)
    p0 = {float(t): market.values[n, 0] for n, t in enumerate(grid.t)}
    jump = lambda t: p0[float(t)]  # noqa: E731
    r_problem = ObstacleProblem(
        grid, _coefficients(model, model.buyer, jump), market.values[-1], obstacle=market.values,
        sense="lower", lower_bc=jump, label="R", measure="buyer", **kw)
    R, _ = march(r_problem)
    sell = extract_region(R, market, kw["region_abs_tol"], kw["region_rel_tol"], label="sell")
    gain = R.derived(R.values - market.values, "R-P")
    u_problem = ObstacleProblem(
        grid, _coefficients(model, model.buyer), np.zeros(grid.s.size), obstacle=gain.values,
        sense="lower", lower_bc=lambda t: 0.0, label="U", measure="buyer", **kw)
    U, _ = march(u_problem)
    # buying where an immediate sale is optimal gains nothing: keep the regions disjoint
    buy = extract_region(U, gain, kw["region_abs_tol"], kw["region_rel_tol"],
                         where=~sell.mask, label="buy")
    Pb = price_surface(model, payoff, "buyer", settings, grid) if with_buyer_price else None
    return BuySellResult(R, U, buy, sell, market, Pb)
