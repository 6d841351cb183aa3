"""Scalar special functions, Black-Scholes closed forms and bracketing root finding."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from .errors import MaxIterExceeded, NoBracket

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

KINDS = ("call", "put", "digital_call")


def norm_cdf(x):
    """Standard normal cumulative distribution function.

    Evaluated through the complementary error function, so both tails keep
    full relative precision; absolute error is below 1e-15.
    """
    return special.ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BSParams:
    """Inputs of a Black-Scholes-type formula.

    ``rate`` is the discount rate applied to the payoff and also the drift of
    the underlying; for a defaultable stock it is ``r + lambda``.
    ``spot`` may be an array, in which case prices are vectorised over it.
    """

    spot: float | np.ndarray
    strike: float
    rate: float
    vol: float
    tau: float

    def __post_init__(self):
        if self.vol <= 0.0:
            raise ValueError(f"vol must be positive, got {self.vol}")
        if self.tau < 0.0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.strike <= 0.0:
            raise ValueError(f"strike must be positive, got {self.strike}")
        if np.any(np.asarray(self.spot) < 0.0):
            raise ValueError("spot must be non-negative")

    def d1_d2(self):
        s = np.asarray(self.spot, dtype=float)
        vst = self.vol * math.sqrt(self.tau)
        with np.errstate(divide="ignore"):
            d1 = (np.log(s / self.strike) + (self.rate + 0.5 * self.vol ** 2) * self.tau) / vst
        return d1, d1 - vst


def _payoff(kind: str, s, strike: float):
    if kind == "call":
        return np.maximum(s - strike, 0.0)
    if kind == "put":
        return np.maximum(strike - s, 0.0)
    if kind == "digital_call":
        return (s > strike).astype(float)
    raise ValueError(f"unknown option kind {kind!r}; expected one of {KINDS}")


def bs_price(p: BSParams, kind: str = "call"):
    """Black-Scholes price of a call, put or cash-or-nothing digital call.

    At ``tau == 0`` the payoff is returned exactly. Put-call parity holds with
    ``p.rate`` as the discount rate.
    """
    s = np.asarray(p.spot, dtype=float)
    if p.tau == 0.0:
        out = _payoff(kind, s, p.strike)
        return out if out.ndim else float(out)
    d1, d2 = p.d1_d2()
    disc = math.exp(-p.rate * p.tau)
    if kind == "call":
        out = s * norm_cdf(d1) - p.strike * disc * norm_cdf(d2)
    elif kind == "put":
        out = p.strike * disc * norm_cdf(-d2) - s * norm_cdf(-d1)
    elif kind == "digital_call":
        out = disc * norm_cdf(d2)
    else:
        raise ValueError(f"unknown option kind {kind!r}; expected one of {KINDS}")
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def brent_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
               max_iter: int = 200) -> float:
    """Root of ``f`` on ``[lo, hi]`` by Brent's method.

    Raises
    ------
    NoBracket
        If ``f(lo)`` and ``f(hi)`` have the same strict sign.
    MaxIterExceeded
        If the bracket has not shrunk below ``tol`` within ``max_iter`` steps.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NoBracket(f"f({lo})={flo:.3g} and f({hi})={fhi:.3g} have the same sign")
    try:
        root, info = optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                                     maxiter=max_iter, full_output=True, disp=False)
    except RuntimeError as exc:  # pragma: no cover - brentq only raises when disp=True
        raise MaxIterExceeded(str(exc)) from exc
    if not info.converged:
        raise MaxIterExceeded(f"brent_root did not converge in {max_iter} iterations",
                              iterate=root, residual=abs(f(root)))
    return root
