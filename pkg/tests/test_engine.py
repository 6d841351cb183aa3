import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from purchase_timing.engine import (
    Coefficients,
    Coefficients2D,
    Grid1D,
    Grid2D,
    LinearOperatorBand,
    ObstacleProblem,
    Surface,
    assemble_step,
    complementarity_residual,
    extract_region,
    march,
    psor_step,
    thomas_solve,
)
from purchase_timing.errors import GridMismatch, SingularPivot
from purchase_timing.numcore import BSParams, bs_price

# 5000-step CRR tree values for the K=5, sigma=0.2, T=1 American put
# (see conftest.american_put_tree); frozen so the suite does not rebuild trees.
TREE = {
    0.3: {4.5: 0.5, 5.0: 0.11620748004347564, 5.5: 0.025798651270014666,
          6.0: 0.006075593582288292},
    0.05: {4.5: 0.5746421804511868, 5.0: 0.3045109704045599, 5.5: 0.14932966293053918,
           6.0: 0.06835832976890235},
}


def bs_coef(r, sigma):
    return lambda t, s: Coefficients(0.5 * sigma ** 2 * s * s, r * s, r)


def put_problem(r=0.05, sigma=0.2, K=5.0, T=1.0, M=400, N=400, s_max=20.0, american=False, **kw):
    g = Grid1D.uniform(s_max, T, M, N)
    payoff = np.maximum(K - g.s, 0.0)
    obstacle = np.broadcast_to(payoff, g.shape) if american else None
    bc = (lambda t: K) if american else (lambda t: K * math.exp(-r * (T - t)))
    return ObstacleProblem(g, bs_coef(r, sigma), payoff, obstacle=obstacle, lower_bc=bc, **kw)


# ---------------------------------------------------------------- tridiagonal solve

def test_thomas_identity_and_diagonal():
    n = 7
    rhs = np.arange(1.0, n + 1)
    z = np.zeros(n)
    np.testing.assert_array_equal(thomas_solve(z, np.ones(n), z, rhs), rhs)
    d = np.linspace(2, 5, n)
    np.testing.assert_allclose(thomas_solve(z, d, z, rhs), rhs / d, rtol=1e-15)


def test_thomas_matches_dense_solver():
    rng = np.random.default_rng(3)
    n = 100
    lo, up = rng.normal(size=n), rng.normal(size=n)
    diag = np.abs(lo) + np.abs(up) + 1 + rng.random(n)
    rhs = rng.normal(size=n)
    A = np.diag(diag) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    x = thomas_solve(lo, diag, up, rhs)
    np.testing.assert_allclose(x, np.linalg.solve(A, rhs), atol=1e-12)
    assert np.max(np.abs(A @ x - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_thomas_zero_pivot():
    with pytest.raises(SingularPivot):
        thomas_solve(np.zeros(3), np.array([1.0, 0.0, 1.0]), np.zeros(3), np.ones(3))


# ---------------------------------------------------------------- PSOR

def _band(n=60, seed=0):
    rng = np.random.default_rng(seed)
    lo, up = -rng.random(n), -rng.random(n)
    diag = np.abs(lo) + np.abs(up) + 0.5
    return LinearOperatorBand(lo, diag, up), rng.normal(size=n)


def test_psor_unconstrained_equals_thomas():
    band, rhs = _band()
    x, active, _ = psor_step(band, rhs, np.full(rhs.size, -np.inf), "lower", tol=1e-12)
    np.testing.assert_allclose(x, thomas_solve(band.lower, band.diag, band.upper, rhs), atol=1e-10)
    assert not active.any()


def test_psor_slack_upper_obstacle_is_inactive():
    band, rhs = _band(seed=1)
    free = thomas_solve(band.lower, band.diag, band.upper, rhs)
    x, active, _ = psor_step(band, rhs, free + 1.0, "upper", tol=1e-12)
    np.testing.assert_allclose(x, free, atol=1e-10)
    assert not active.any()


@pytest.mark.parametrize("sense", ["lower", "upper"])
def test_psor_complementarity(sense):
    band, rhs = _band(seed=2)
    g = np.zeros(rhs.size)
    x, active, info = psor_step(band, rhs, g, sense, tol=1e-10)
    assert complementarity_residual(band, rhs, x, g, sense) <= 1e-9
    assert np.all(x >= g) if sense == "lower" else np.all(x <= g)
    assert active.any() and not active.all()
    assert info["iterations"] >= 1


def test_psor_rejects_bad_omega():
    band, rhs = _band()
    with pytest.raises(ValueError):
        psor_step(band, rhs, np.zeros(rhs.size), omega=2.0)


# ---------------------------------------------------------------- assembly and march

def test_zero_coefficients_step_is_identity():
    g = Grid1D.uniform(1.0, 1.0, 10, 5)
    prob = ObstacleProblem(g, lambda t, s: Coefficients(), np.zeros(11))
    u = np.linspace(0, 1, 11) ** 2
    band, rhs = assemble_step(prob, 4, u)
    np.testing.assert_allclose(thomas_solve(band.lower, band.diag, band.upper, rhs), u, atol=1e-15)


def test_pure_discount_implicit_step():
    g = Grid1D.uniform(1.0, 1.0, 10, 4)
    r = 0.2
    prob = ObstacleProblem(g, lambda t, s: Coefficients(discount=r), np.ones(11), scheme="implicit")
    band, rhs = assemble_step(prob, 3, np.ones(11))
    x = thomas_solve(band.lower, band.diag, band.upper, rhs)
    np.testing.assert_allclose(x, 1.0 / (1.0 + r * 0.25), rtol=1e-14)


def test_heat_equation_separable_solution():
    a, T = 0.1, 1.0
    g = Grid1D.uniform(1.0, T, 200, 100)
    prob = ObstacleProblem(g, lambda t, s: Coefficients(diffusion=a), np.sin(math.pi * g.s),
                           lower_bc=lambda t: 0.0, upper_bc=lambda t: 0.0)
    u, _ = march(prob)
    exact = np.exp(-a * math.pi ** 2 * (T - g.t))[:, None] * np.sin(math.pi * g.s)[None, :]
    assert np.max(np.abs(u.values - exact)) <= 1e-3


def test_terminal_exact_and_zero_problem():
    g = Grid1D.uniform(10.0, 1.0, 50, 20)
    prob = ObstacleProblem(g, bs_coef(0.05, 0.3), np.zeros(51), obstacle=np.full(g.shape, -1.0))
    u, region = march(prob)
    assert np.all(u.values == 0.0)
    assert region.empty


def test_european_put_matches_closed_form_on_central_half():
    u, _ = march(put_problem(M=1000, N=1000))
    s = u.grid.s
    mid = (s >= 5.0) & (s <= 15.0)
    exact = bs_price(BSParams(np.maximum(s[mid], 1e-12), 5.0, 0.05, 0.2, 1.0), "put")
    assert np.max(np.abs(u.values[0, mid] - exact)) <= 1e-3


def test_grid_refinement_halves_error():
    errs = []
    for m in (100, 200, 400):
        u, _ = march(put_problem(M=m, N=m))
        errs.append(abs(u.at(0.0, 5.0) - bs_price(BSParams(5.0, 5.0, 0.05, 0.2, 1.0), "put")))
    assert errs[1] <= 0.5 * errs[0]
    assert errs[2] <= 0.5 * errs[1]


@pytest.mark.parametrize("r", [0.3, 0.05])
def test_american_put_agrees_with_tree(r):
    u, region = march(put_problem(r=r, M=1000, N=1000, american=True))
    for s0, ref in TREE[r].items():
        assert abs(u.at(0.0, s0) - ref) <= 5e-3
    assert u.stats["max_residual"] <= 1e-8
    # deep out of the money the value is within tolerance of a zero payoff, so the
    # raw active set has a second band there; the exercise band starts at s = 0
    lo, hi = region.values_at(0)[0]
    assert lo == 0.0 and 3.0 < hi < 5.0


def test_march_is_linear_without_obstacle():
    g = Grid1D.uniform(10.0, 1.0, 100, 50)
    f1 = np.maximum(g.s - 4.0, 0.0)
    f2 = np.sin(g.s)
    a, b = 1.7, -0.6
    run = lambda f: march(ObstacleProblem(g, bs_coef(0.05, 0.3), f))[0].values  # noqa: E731
    np.testing.assert_allclose(run(a * f1 + b * f2), a * run(f1) + b * run(f2), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), bump=st.floats(0.0, 0.5), lift=st.floats(0.0, 0.5))
def test_comparison_principle(seed, bump, lift):
    rng = np.random.default_rng(seed)
    g = Grid1D.uniform(1.0, 1.0, 50, 50)
    diff = 0.05 + 0.1 * rng.random(51)
    drift = rng.normal(scale=0.3, size=51)
    src = rng.normal(scale=0.2, size=51)
    terminal = rng.random(51)
    obstacle = np.broadcast_to(terminal - 0.1 + 0.2 * rng.random(51), g.shape).copy()
    obstacle[-1] = np.minimum(obstacle[-1], terminal)

    def solve(extra_src, extra_obs):
        coef = lambda t, s: Coefficients(diff, drift, 0.1, src + extra_src)  # noqa: E731
        ob = obstacle + extra_obs
        ob[-1] = np.minimum(ob[-1], terminal)
        # pin the top edge: the slope-carry fallback there is not a monotone row
        return march(ObstacleProblem(g, coef, terminal, obstacle=ob, scheme="implicit",
                                     upper_bc=lambda t: terminal[-1], tol=1e-12))[0].values

    base = solve(0.0, 0.0)
    assert np.all(solve(bump, 0.0) >= base - 1e-9)
    assert np.all(solve(0.0, lift) >= base - 1e-9)


def test_residuals_recorded_per_step():
    u, _ = march(put_problem(american=True, M=200, N=100))
    assert u.stats["psor_steps"] == 100
    assert u.stats["max_residual"] <= 1e-8


def test_problem_validation():
    g = Grid1D.uniform(1.0, 1.0, 10, 5)
    with pytest.raises(GridMismatch):
        ObstacleProblem(g, lambda t, s: Coefficients(), np.zeros(5))
    with pytest.raises(ValueError):
        ObstacleProblem(g, lambda t, s: Coefficients(), np.zeros(11), sense="sideways")
    with pytest.raises(ValueError):
        ObstacleProblem(g, lambda t, s: Coefficients(), np.zeros(11),
                        obstacle=np.ones(g.shape))


# ---------------------------------------------------------------- two factors

def test_2d_with_y_free_coefficients_matches_1d():
    r, sig = 0.05, 0.25
    g1 = Grid1D.uniform(20.0, 1.0, 80, 40)
    g2 = Grid2D.uniform(20.0, -1.0, 1.0, 1.0, 80, 10, 40)
    pay = np.maximum(5.0 - g1.s, 0.0)
    u1, _ = march(ObstacleProblem(g1, bs_coef(r, sig), pay, obstacle=np.broadcast_to(pay, g1.shape),
                                  scheme="implicit", tol=1e-12))
    coef2 = lambda t, S, Y: Coefficients2D(0.5 * sig ** 2 * S * S, r * S, 0.08, -0.3 * Y,  # noqa: E731
                                           0.0, r)
    pay2 = np.repeat(pay[:, None], 11, axis=1)
    u2, _ = march(ObstacleProblem(g2, coef2, pay2, obstacle=np.broadcast_to(pay2, g2.shape),
                                  scheme="implicit", tol=1e-12))
    assert np.max(np.abs(u2.values - u1.values[:, :, None])) <= 1e-6


def test_2d_black_scholes():
    r, sig = 0.05, 0.2
    g = Grid2D.uniform(20.0, -1.0, 1.0, 1.0, 200, 10, 400)
    pay = np.repeat(np.maximum(5.0 - g.s, 0.0)[:, None], 11, axis=1)
    coef = lambda t, S, Y: Coefficients2D(0.5 * sig ** 2 * S * S, r * S, 0.1, 0.0, 0.0, r)  # noqa: E731
    u, _ = march(ObstacleProblem(g, coef, pay, scheme="implicit"))
    exact = bs_price(BSParams(5.0, 5.0, r, sig, 1.0), "put")
    assert abs(u.at(0.0, 5.0, 0.3) - exact) <= 1e-3


def test_2d_obstacle_active_everywhere_when_nothing_moves():
    g = Grid2D.uniform(1.0, -1.0, 1.0, 1.0, 10, 6, 5)
    pay = np.ones((11, 7))
    u, region = march(ObstacleProblem(g, lambda t, S, Y: Coefficients2D(), pay,
                                      obstacle=np.broadcast_to(pay, g.shape)))
    assert region.mask.all()
    np.testing.assert_allclose(u.values, 1.0)


# ---------------------------------------------------------------- regions

def test_extract_region_trivial_cases():
    g = Grid1D.uniform(1.0, 1.0, 10, 5)
    b = Surface(g, np.random.default_rng(0).random(g.shape), "B")
    assert extract_region(b.derived(b.values.copy(), "A"), b).mask.all()
    assert extract_region(b.derived(b.values + 1.0, "A"), b).empty


def test_extract_region_grid_mismatch():
    a = Surface(Grid1D.uniform(1.0, 1.0, 10, 5), np.zeros((6, 11)), "A")
    b = Surface(Grid1D.uniform(2.0, 1.0, 10, 5), np.zeros((6, 11)), "B")
    with pytest.raises(GridMismatch):
        extract_region(a, b)
