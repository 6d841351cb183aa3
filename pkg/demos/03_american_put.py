"""
Buying an American put
======================

Both sides value an American put and exercise at their own boundaries. The
buyer's timing value is the best discounted spread between the two American
prices, and the purchase region sits above the market's exercise boundary.
"""

from purchase_timing import DefaultableModel, Intensity, Payoff, Settings, american_purchase

model = DefaultableModel(0.05, 0.2, 1.0, Intensity.constant(0.2), Intensity.constant(0.25))
res = american_purchase(model, Payoff.put(5.0), Settings(M=600, N=600), european=True)

b, bb, s_star = res.exercise.curve, res.exercise_buyer.curve, res.purchase_region.curve
t = res.PA.grid.t
for n in (0, 200, 400, 590):
    print(f"t={t[n]:.2f}  market b*={b[n]:.3f}  buyer b*={bb[n]:.3f}  purchase s*={s_star[n]:.3f}")

###############################################################################
# Early exercise premia on each side, and how much waiting is worth.

n0 = 0
i = int(abs(res.PA.grid.s - 4.2).argmin())
print("market early exercise premium at s=4.2:", res.PA.values[n0, i] - res.P.values[n0, i])
print("buyer early exercise premium at s=4.2: ", res.PbA.values[n0, i] - res.Pb.values[n0, i])
print("largest value of waiting, max LA:", float(res.LA.values.max()))
