"""
Perpetual puts: the closed-form purchase threshold
==================================================

With constant intensities and no maturity everything is explicit. The buyer
who is more pessimistic about default than the market waits until the stock
rises to ``s*`` and buys there.
"""

import numpy as np

from purchase_timing.perpetual import (
    PerpetualParams,
    perpetual_put,
    purchase_threshold,
    timing_value,
)

p = PerpetualParams(r=0.05, sigma=0.2, K=5.0, lambda_market=0.025, lambda_buyer=0.05)
market, b, _ = perpetual_put(p, "market")
buyer, bb, _ = perpetual_put(p, "buyer")
th = purchase_threshold(p)
print(f"market exercises below {b:.4f}, buyer below {bb:.4f}")
print(f"purchase threshold s* = {th.s_star:.4f}, slope A = {th.A:.5f}")

###############################################################################
# The timing value is the line A s up to s*, then the price spread. It tends
# to a constant as s grows.

for s in (1.0, 2.0, th.s_star, 5.0, 10.0, 1e6):
    print(f"s={s:10.4f}  J={timing_value(p, s, th):.6f}  spread={buyer(s) - market(s):.6f}")

###############################################################################
# Sweeping the buyer's intensity moves the threshold.

for lam_b in np.linspace(0.03, 0.15, 5):
    q = PerpetualParams(0.05, 0.2, 5.0, 0.025, lam_b)
    print(f"lambda_b={lam_b:.3f}  s*={purchase_threshold(q).s_star:.4f}")
