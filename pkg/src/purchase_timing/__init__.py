"""Optimal timing of derivative purchases when the buyer and the market price differently."""

from .applications import BuySellResult, RollResult, RollSpec, buy_sell, rolling_value
from .defaultable import (
    DefaultableModel,
    Intensity,
    Settings,
    SwitchPolicy,
    american_exercise,
    american_purchase,
    closed_form_price,
    drift_G,
    drift_G_closed_form,
    mc_price,
    price_surface,
    solve_delay_premium,
    solve_european,
    solve_min_cost,
)
from .engine import (
    Coefficients,
    Coefficients2D,
    Grid1D,
    Grid2D,
    ObstacleProblem,
    RegionSet,
    Surface,
    assemble_step,
    extract_region,
    march,
    march_2d,
    psor_step,
    thomas_solve,
)
from .numcore import BSParams, brent_root, bs_price, norm_cdf, norm_pdf
from .payoffs import Payoff
from .perpetual import PerpetualParams, perpetual_put, purchase_threshold, timing_value
from .stochvol import (
    Premium,
    Settings2D,
    SVModel,
    drift_G_sv,
    price_surface_2d,
    solve_L_2d,
    solve_stochvol,
    solve_V_2d,
)

__version__ = "0.1.0"
