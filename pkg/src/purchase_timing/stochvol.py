"""Purchase timing when volatility is driven by a non-traded factor ``Y``.

Under a pricing measure indexed by the volatility risk premium ``phi``:

    dS = S (r dt + sigma(Y) dW)
    dY = (b - rho c kappa - rho_hat c phi) dt + c (rho dW + rho_hat dW_hat)

The market prices with ``phi`` and the buyer with ``phi_b``. Both price
surfaces, the buyer's minimal purchase cost ``V`` and the delayed purchase
premium ``L = P - V`` are solved on a (t, s, y) grid with a fully implicit
nine-point scheme.

Sign convention. Writing the buyer's generator as ``L_b``, the market price
satisfies ``P_t + L_b P = -rho_hat c G`` with ``G = P_y (phi_b - phi)``. Hence
``L`` is the value of *accumulating* ``rho_hat c G`` until purchase: ``G >= 0``
everywhere means waiting never hurts (``V = Pb``), ``G <= 0`` everywhere means
buying at once (``V = P``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import (
    Coefficients2D,
    Grid2D,
    ObstacleProblem,
    RegionSet,
    Surface,
    march,
)
from .errors import GridMismatch
from .payoffs import Payoff


def _softplus(y):
    return np.logaddexp(0.0, y)


@dataclass(frozen=True)
class Premium:
    """Volatility risk premium ``level + amplitude * tanh((y - center) / width)``."""

    level: float = 0.0
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("premium width must be positive")

    def __call__(self, t, s, y):
        y = np.asarray(y, dtype=float)
        return self.level + self.amplitude * np.tanh((y - self.center) / self.width) + 0.0 * s

    @property
    def bound(self) -> float:
        return abs(self.level) + abs(self.amplitude)


@dataclass(frozen=True)
class SVModel:
    """Mean-reverting volatility factor with bounded coefficients.

    ``sigma(y) = sigma_min + (sigma_max - sigma_min) * sp(y) / (1 + sp(y))`` with
    ``sp`` the softplus, so volatility is increasing in ``y`` and confined to
    ``[sigma_min, sigma_max)``. ``b(y) = kappa_m (m - y)``, ``c = c0`` and the
    Sharpe ratio ``kappa`` is constant.
    """

    r: float = 0.05
    T: float = 1.0
    sigma_min: float = 0.1
    sigma_max: float = 0.4
    m: float = 0.0
    kappa_m: float = 1.0
    c0: float = 0.5
    kappa: float = 0.1
    rho: float = -0.5
    premium_market: Premium = Premium()
    premium_buyer: Premium = Premium()

    def __post_init__(self):
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")
        if self.c0 < 0:
            raise ValueError("c0 must be non-negative")
        if self.kappa_m <= 0:
            raise ValueError("kappa_m must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def rho_hat(self) -> float:
        return math.sqrt(max(1.0 - self.rho * self.rho, 0.0))

    def sigma(self, y):
        sp = _softplus(np.asarray(y, dtype=float))
        return self.sigma_min + (self.sigma_max - self.sigma_min) * sp / (1.0 + sp)

    def b(self, t, y):
        return self.kappa_m * (self.m - np.asarray(y, dtype=float))

    def c(self, t, y):
        return np.full(np.shape(y), self.c0)

    def premium(self, side: str) -> Premium:
        if side == "market":
            return self.premium_market
        if side == "buyer":
            return self.premium_buyer
        raise ValueError(f"side must be 'market' or 'buyer', got {side!r}")

    def y_range(self, width: float = 5.0) -> tuple[float, float]:
        half = width * max(self.c0, 1e-3) / math.sqrt(2.0 * self.kappa_m)
        return self.m - half, self.m + half


@dataclass(frozen=True)
class Settings2D:
    Ms: int = 200
    My: int = 100
    N: int = 200
    s_max: float | None = None
    y_min: float | None = None
    y_max: float | None = None
    omega: float = 1.5
    tol: float = 1e-8
    max_iter: int = 10000
    region_abs_tol: float = 1e-7  # multiplied by the strike
    region_rel_tol: float = 1e-6

    def grid(self, model: SVModel, payoff: Payoff) -> Grid2D:
        lo, hi = model.y_range()
        return Grid2D.uniform(self.s_max if self.s_max is not None else 4.0 * payoff.strike,
                              lo if self.y_min is None else self.y_min,
                              hi if self.y_max is None else self.y_max,
                              model.T, self.Ms, self.My, self.N)

    def problem_kwargs(self, payoff: Payoff) -> dict:
        return dict(scheme="implicit", omega=self.omega, tol=self.tol, max_iter=self.max_iter,
                    region_abs_tol=self.region_abs_tol * payoff.strike,
                    region_rel_tol=self.region_rel_tol)


DEFAULT_SETTINGS_2D = Settings2D()


def sv_coefficients(model: SVModel, premium: Callable, source: Callable | None = None):
    """Generator of the pricing measure with volatility risk premium ``premium``."""
    r, rho, rho_hat = model.r, model.rho, model.rho_hat

    def coef(t, S, Y):
        sig = model.sigma(Y)
        c = model.c(t, Y)
        drift_y = model.b(t, Y) - rho * c * model.kappa - rho_hat * c * premium(t, S, Y)
        return Coefficients2D(
            diffusion_s=0.5 * sig * sig * S * S, drift_s=r * S,
            diffusion_y=0.5 * c * c, drift_y=drift_y,
            cross=rho * sig * c * S, discount=r,
            source=0.0 if source is None else source(t))

    return coef


def price_surface_2d(model: SVModel, payoff: Payoff, side: str = "market",
                     settings: Settings2D = DEFAULT_SETTINGS_2D,
                     grid: Grid2D | None = None) -> Surface:
    grid = grid or settings.grid(model, payoff)
    terminal = np.repeat(payoff.on_grid(grid.s)[:, None], grid.y.size, axis=1)
    problem = ObstacleProblem(grid, sv_coefficients(model, model.premium(side)), terminal,
                              label="P" if side == "market" else "Pb", measure=side,
                              **settings.problem_kwargs(payoff))
    surface, _ = march(problem)
    return surface


def _dy(values: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.gradient(values, y, axis=-1, edge_order=2)


def drift_G_sv(model: SVModel, market: Surface) -> Surface:
    """``G = P_y (phi_b - phi)`` on the market grid (central in ``y``, one-sided at the edges)."""
    g = market.grid
    if not isinstance(g, Grid2D):
        raise GridMismatch("drift_G_sv needs a 2-D market surface")
    T = g.t[:, None, None]
    S, Y = g.s[None, :, None], g.y[None, None, :]
    diff = model.premium_buyer(T, S, Y) - model.premium_market(T, S, Y)
    return market.derived(_dy(market.values, g.y) * diff, "G")


def premium_source(model: SVModel, G: Surface) -> Surface:
    """Running reward ``rho_hat c G`` collected by the buyer while waiting."""
    g = G.grid
    c = model.c(0.0, g.y)[None, None, :]
    return G.derived(model.rho_hat * c * G.values, "source")


def solve_V_2d(model: SVModel, payoff: Payoff, settings: Settings2D = DEFAULT_SETTINGS_2D,
               market: Surface | None = None) -> tuple[Surface, RegionSet]:
    """Minimal expected purchase cost under the buyer's measure and the buy region ``{V = P}``."""
    market = market or price_surface_2d(model, payoff, "market", settings)
    grid = market.grid
    terminal = market.values[-1]
    problem = ObstacleProblem(grid, sv_coefficients(model, model.premium_buyer), terminal,
                              obstacle=market.values, sense="upper", label="V", measure="buyer",
                              **settings.problem_kwargs(payoff))
    V, region = march(problem)
    region.label = "buy"
    return V, region


def solve_L_2d(model: SVModel, payoff: Payoff, settings: Settings2D = DEFAULT_SETTINGS_2D,
               market: Surface | None = None) -> tuple[Surface, RegionSet]:
    """Delayed purchase premium from its own obstacle problem; ``{L = 0}`` is the buy region."""
    market = market or price_surface_2d(model, payoff, "market", settings)
    grid = market.grid
    src = premium_source(model, drift_G_sv(model, market)).values
    index = {float(t): n for n, t in enumerate(grid.t)}
    problem = ObstacleProblem(
        grid, sv_coefficients(model, model.premium_buyer, lambda t: src[index[float(t)]]),
        np.zeros(grid.shape[1:]), obstacle=np.zeros(grid.shape), sense="lower", label="L",
        measure="buyer", **settings.problem_kwargs(payoff))
    L, region = march(problem)
    region.label = "buy"
    return L, region


@dataclass
class SVTiming:
    P: Surface
    Pb: Surface
    G: Surface
    V: Surface
    L: Surface
    L_direct: Surface
    J: Surface
    buy_region: RegionSet
    premium_region: RegionSet


def solve_stochvol(model: SVModel, payoff: Payoff,
                   settings: Settings2D = DEFAULT_SETTINGS_2D) -> SVTiming:
    grid = settings.grid(model, payoff)
    P = price_surface_2d(model, payoff, "market", settings, grid)
    Pb = price_surface_2d(model, payoff, "buyer", settings, grid)
    V, buy = solve_V_2d(model, payoff, settings, P)
    L_direct, prem = solve_L_2d(model, payoff, settings, P)
    return SVTiming(P, Pb, drift_G_sv(model, P), V, P.derived(P.values - V.values, "L"),
                    L_direct, P.derived(Pb.values - V.values, "J", "buyer"), buy, prem)
