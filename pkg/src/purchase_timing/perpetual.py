"""Perpetual American puts on a defaultable stock with constant intensities.

The market exercises below ``b*`` and the buyer below ``b~*``. When the buyer's
intensity exceeds the market's, the spread ``Pb - P`` is increasing in ``s``
and its smallest concave majorant gives the value of timing the purchase:
linear ``A s`` below the purchase threshold ``s*``, the spread itself above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NoBracket
from .numcore import brent_root


@dataclass(frozen=True)
class PerpetualParams:
    r: float
    sigma: float
    K: float
    lambda_market: float
    lambda_buyer: float

    def __post_init__(self):
        if self.r <= 0 or self.sigma <= 0 or self.K <= 0:
            raise ValueError("r, sigma and K must be positive")
        if self.lambda_market < 0 or self.lambda_buyer < 0:
            raise ValueError("intensities must be non-negative")

    def intensity(self, side: str) -> float:
        if side == "market":
            return self.lambda_market
        if side == "buyer":
            return self.lambda_buyer
        raise ValueError(f"side must be 'market' or 'buyer', got {side!r}")


@dataclass(frozen=True)
class PerpetualPut:
    """Closed-form price of one side: ``K - s`` below ``b_star``, decaying power above."""

    r: float
    lam: float
    K: float
    b_star: float
    theta: float

    @property
    def coefficient(self) -> float:
        return self.r * self.K / ((self.r + self.lam) * (self.theta + 1.0))

    @property
    def limit(self) -> float:
        return self.lam * self.K / (self.r + self.lam)

    def _power(self, s):
        # (s / b*)^(-theta) in log space; s > 0 only
        return np.exp(-self.theta * (np.log(s) - math.log(self.b_star)))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        above = s > self.b_star
        safe = np.where(above, s, self.b_star)
        out = np.where(above, self.coefficient * self._power(safe) + self.limit, self.K - s)
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        above = s > self.b_star
        safe = np.where(above, s, self.b_star)
        out = np.where(above, -self.theta * self.coefficient * self._power(safe) / safe, -1.0)
        return out if out.ndim else float(out)


def perpetual_put(params: PerpetualParams, side: str = "market") -> tuple[PerpetualPut, float, float]:
    """Perpetual American put for one side, its exercise threshold and exponent."""
    r, sig, K = params.r, params.sigma, params.K
    lam = params.intensity(side)
    b = 2.0 * r * K / (2.0 * (r + lam) + sig * sig)
    theta = 2.0 * (r + lam) / (sig * sig)
    return PerpetualPut(r, lam, K, b, theta), b, theta


def _B(params: PerpetualParams) -> Callable[[float], float]:
    """Threshold equation; its root on ``[b*, inf)`` is the purchase threshold."""
    r = params.r
    lam, lamb = params.lambda_market, params.lambda_buyer
    _, b, th = perpetual_put(params, "market")
    _, bb, thb = perpetual_put(params, "buyer")

    def B(s: float) -> float:
        ls = math.log(s)
        return ((r + lam) * math.exp(thb * (math.log(bb) - ls))
                - (r + lamb) * math.exp(th * (math.log(b) - ls)) + (lamb - lam))

    return B


@dataclass(frozen=True)
class PurchaseThreshold:
    """Purchase threshold ``s_star`` and slope ``A``; ``trivial`` when timing has no value."""

    s_star: float | None
    A: float
    trivial: bool = False


def purchase_threshold(params: PerpetualParams, s_hi: float | None = None,
                       tol: float = 1e-13) -> PurchaseThreshold:
    """Solve the threshold equation on ``[b*, s_hi]`` (default ``100 K``).

    If the buyer's intensity does not exceed the market's, the spread is never
    positive and a trivial result (``s_star=None``, ``A=0``) is returned.
    """
    if params.lambda_market >= params.lambda_buyer:
        return PurchaseThreshold(None, 0.0, True)
    B = _B(params)
    _, b, _ = perpetual_put(params, "market")
    hi = 100.0 * params.K if s_hi is None else s_hi
    for _ in range(60):
        if B(hi) > 0:
            break
        hi *= 2.0
    else:  # pragma: no cover - B tends to a positive constant
        raise NoBracket("threshold equation has no sign change")
    s_star = brent_root(B, b, hi, tol=tol * params.K)
    market, _, _ = perpetual_put(params, "market")
    buyer, _, _ = perpetual_put(params, "buyer")
    A = float(buyer.derivative(s_star) - market.derivative(s_star))
    return PurchaseThreshold(s_star, A)


def slope_closed_form(params: PerpetualParams, s_star: float) -> float:
    """The slope ``A`` written out from both power branches."""
    r, K = params.r, params.K
    _, b, th = perpetual_put(params, "market")
    _, bb, thb = perpetual_put(params, "buyer")
    lam, lamb = params.lambda_market, params.lambda_buyer
    return (r * K * th / ((r + lam) * (th + 1) * s_star) * (b / s_star) ** th
            - r * K * thb / ((r + lamb) * (thb + 1) * s_star) * (bb / s_star) ** thb)


def timing_value(params: PerpetualParams, s, threshold: PurchaseThreshold | None = None):
    """Value of optimally timing the purchase of the perpetual put."""
    threshold = threshold or purchase_threshold(params)
    s = np.asarray(s, dtype=float)
    if threshold.trivial:
        out = np.zeros_like(s)
        return out if out.ndim else 0.0
    market, _, _ = perpetual_put(params, "market")
    buyer, _, _ = perpetual_put(params, "buyer")
    spread = np.asarray(buyer(s)) - np.asarray(market(s))
    out = np.where(s < threshold.s_star, threshold.A * s, spread)
    return out if out.ndim else float(out)


def timing_limit(params: PerpetualParams) -> float:
    """Large-``s`` limit of the timing value."""
    r, K = params.r, params.K
    lam, lamb = params.lambda_market, params.lambda_buyer
    return max(lamb / (r + lamb) - lam / (r + lam), 0.0) * K


def summary(params: PerpetualParams) -> dict:
    th = purchase_threshold(params)
    _, b, _ = perpetual_put(params, "market")
    _, bb, _ = perpetual_put(params, "buyer")
    return {"b_star": b, "b_tilde_star": bb, "s_star": th.s_star, "A": th.A,
            "limit": timing_limit(params), "trivial": th.trivial}
