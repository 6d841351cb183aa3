"""Terminal payoffs F(s)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAYOFF_KINDS = ("call", "put", "digital_call", "bull_spread", "custom")


@dataclass(frozen=True)
class Payoff:
    """A European payoff on the terminal stock price.

    ``custom`` payoffs are tabulated on ``table_s`` with linear interpolation
    and flat extrapolation on the left, linear on the right (at most linear
    growth).
    """

    kind: str
    strike: float
    strike_high: float | None = None
    table_s: tuple[float, ...] = ()
    table_v: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ValueError(f"unknown payoff kind {self.kind!r}; expected one of {PAYOFF_KINDS}")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.kind == "bull_spread":
            if self.strike_high is None or not self.strike < self.strike_high:
                raise ValueError("bull_spread requires strike < strike_high")
        if self.kind == "custom":
            s, v = np.asarray(self.table_s, float), np.asarray(self.table_v, float)
            if s.size < 2 or s.shape != v.shape or np.any(np.diff(s) <= 0):
                raise ValueError("custom payoff needs an increasing table_s matching table_v")
            if np.any(v < 0):
                raise ValueError("custom payoff must be non-negative")

    @classmethod
    def call(cls, K: float) -> "Payoff":
        return cls("call", K)

    @classmethod
    def put(cls, K: float) -> "Payoff":
        return cls("put", K)

    @classmethod
    def digital_call(cls, K: float) -> "Payoff":
        return cls("digital_call", K)

    @classmethod
    def bull_spread(cls, K: float, K_high: float) -> "Payoff":
        return cls("bull_spread", K, K_high)

    @classmethod
    def custom(cls, s, v, strike: float | None = None) -> "Payoff":
        s = tuple(float(x) for x in s)
        return cls("custom", strike if strike is not None else max(s[-1] / 4, 1e-12), None,
                   s, tuple(float(x) for x in v))

    @property
    def convex(self) -> bool:
        return self.kind in ("call", "put")

    def on_grid(self, s) -> np.ndarray:
        """Terminal slice for a PDE grid.

        Digital payoffs are cell-averaged so the node sitting on the strike
        carries the fraction of its cell above ``K``; a raw step there gives a
        first-order error that Crank-Nicolson propagates as ringing.
        """
        s = np.asarray(s, dtype=float)
        if self.kind != "digital_call" or s.size < 2:
            return np.asarray(self(s), dtype=float)
        mid = 0.5 * (s[1:] + s[:-1])
        lo = np.concatenate([[s[0]], mid])
        hi = np.concatenate([mid, [s[-1]]])
        width = hi - lo
        frac = np.clip((hi - self.strike) / np.where(width > 0, width, 1.0), 0.0, 1.0)
        return np.where(width > 0, frac, self(s))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        K = self.strike
        if self.kind == "call":
            out = np.maximum(s - K, 0.0)
        elif self.kind == "put":
            out = np.maximum(K - s, 0.0)
        elif self.kind == "digital_call":
            out = (s > K).astype(float)
        elif self.kind == "bull_spread":
            out = np.maximum(s - K, 0.0) - np.maximum(s - self.strike_high, 0.0)
        else:
            ts, tv = np.asarray(self.table_s), np.asarray(self.table_v)
            slope = (tv[-1] - tv[-2]) / (ts[-1] - ts[-2])
            out = np.where(s > ts[-1], tv[-1] + slope * (s - ts[-1]), np.interp(s, ts, tv))
            out = np.maximum(out, 0.0)
        return out if out.ndim else float(out)
