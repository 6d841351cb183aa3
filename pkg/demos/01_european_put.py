"""
When to buy a European put
==========================

The market prices a put on a defaultable stock with a flat default intensity.
A buyer who thinks default is likelier when the stock is low prices it with a
local intensity. Should they buy now or wait?
"""

import numpy as np

from purchase_timing import DefaultableModel, Intensity, Payoff, Settings, solve_european

model = DefaultableModel(
    r=0.05, sigma=0.2, T=1.0,
    market=Intensity.constant(0.2),
    buyer=Intensity.exp_local(0.2, decay=0.2, ref=5.0),
)
put = Payoff.put(5.0)
res = solve_european(model, put, Settings(M=1000, N=1000))

###############################################################################
# Prices, the premium for waiting and the buyer's gain at s = 4.2

for name, surf in [("market P", res.P), ("buyer Pb", res.Pb), ("V", res.V),
                   ("L = P - V", res.L), ("J = Pb - V", res.J)]:
    print(f"{name:12s} {surf.at(0.0, 4.2):.5f}")

###############################################################################
# The buy region is a lower interval {s <= s*(t)}; the level climbs to the
# strike as maturity approaches.

curve = res.buy_region.curve
t = res.P.grid.t
for n in (0, 250, 500, 750, 990):
    print(f"t={t[n]:.2f}  s*={curve[n]:.3f}")

###############################################################################
# Where the buyer buys, the drift G must be non-negative.

G = res.G.values[:-1]
print("min G on the buy region:", G[res.buy_region.mask[:-1]].min())
print("max |L - L from its own problem|:", np.abs(res.L.values - res.L_direct.values).max())
