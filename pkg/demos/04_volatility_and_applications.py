"""
Volatility risk premia, rolling and buy-then-sell
=================================================

Three shorter studies on coarse grids so the script runs in well under a
minute.
"""

import warnings

from purchase_timing import DefaultableModel, Intensity, Payoff, Settings
from purchase_timing.applications import RollSpec, buy_sell, rolling_value
from purchase_timing.errors import NonDominantMatrix
from purchase_timing.stochvol import Premium, Settings2D, SVModel, solve_stochvol

# coarse grids trip the diagonal-dominance check near the last step; harmless here
warnings.simplefilter("ignore", NonDominantMatrix)

put = Payoff.put(5.0)

###############################################################################
# A buyer whose volatility premium crosses the market's at y = 0 buys only on
# one side of that line.

sv = SVModel(premium_buyer=Premium(0.0, 1.0, 0.0, 0.3))
res = solve_stochvol(sv, put, Settings2D(Ms=100, My=40, N=60))
y = res.P.grid.y
share = res.buy_region.mask[0].mean(axis=0)
for j in range(0, y.size, 8):
    print(f"y={y[j]:+.2f}  fraction of s-grid in buy region at t=0: {share[j]:.2f}")

###############################################################################
# Rolling a 3-year put into a 5-year put between years 2 and 3.

m5 = DefaultableModel(0.05, 0.2, 5.0, Intensity.constant(0.2), Intensity.constant(0.3))
roll = rolling_value(m5, put, RollSpec(5.0, 3.0), Settings(M=400, N=500))
print("net roll cost h(0,5):", roll.h.at(0.0, 5.0), " optimised:", roll.V.at(0.0, 5.0))
g = roll.G_diff.values[:-1]
print("drift difference takes both signs:", bool((g > 0).any() and (g < 0).any()))

###############################################################################
# Buy low, sell high: the buy and sell regions at t = 0.

m1 = DefaultableModel(0.05, 0.2, 1.0, Intensity.constant(0.2),
                      Intensity.exp_local(0.2, 0.2, 5.0))
bs = buy_sell(m1, put, Settings(M=400, N=400))
print("buy at t=0:", [(round(float(a), 2), round(float(b), 2)) for a, b in bs.buy_region.values_at(0)])
print("sell at t=0:", [(round(float(a), 2), round(float(b), 2)) for a, b in bs.sell_region.values_at(0)])
