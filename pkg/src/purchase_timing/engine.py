"""Finite-difference machinery for backward parabolic problems with obstacles.

Every problem is written in the backward form

    u_t + diffusion * u_ss + drift * u_s - discount * u + source = 0

(plus ``diffusion_y * u_yy + drift_y * u_y + cross * u_sy`` in two dimensions),
with an optional obstacle that the solution must stay above (``sense="lower"``,
supremum problems) or below (``sense="upper"``, infimum problems). Time runs
from the terminal slice at ``t[-1]`` down to ``t[0]``.

Spatial differences are central, switching to one-sided upwinding for the
drift wherever the central stencil would produce a negative off-diagonal. The
upper edge in ``s`` uses the zero-gamma condition (second derivative dropped,
drift by a backward difference) unless a Dirichlet function is supplied.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import _kernels
from .errors import GridMismatch, MaxIterExceeded, NonDominantMatrix, SingularPivot

SCHEMES = ("implicit", "crank-nicolson")
SENSES = ("lower", "upper")


# --------------------------------------------------------------------------- grids


def _check_axis(name: str, x: np.ndarray, min_len: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.size < min_len:
        raise ValueError(f"{name} must be 1-D with at least {min_len} nodes")
    if not np.all(np.diff(x) > 0):
        raise ValueError(f"{name} must be strictly increasing")
    return x


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Nodes in price ``s`` (starting at 0, the default state) and time ``t``."""

    s: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", _check_axis("s", self.s, 3))
        object.__setattr__(self, "t", _check_axis("t", self.t, 2))
        if self.s[0] != 0.0:
            raise ValueError("s grid must start exactly at 0")

    @classmethod
    def uniform(cls, s_max: float, T: float, M: int = 1000, N: int = 1000) -> "Grid1D":
        return cls(np.linspace(0.0, s_max, M + 1), np.linspace(0.0, T, N + 1))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.t.size, self.s.size)

    def same_as(self, other) -> bool:
        return (
            isinstance(other, Grid1D)
            and other.s.shape == self.s.shape
            and other.t.shape == self.t.shape
            and np.array_equal(other.s, self.s)
            and np.array_equal(other.t, self.t)
        )

    def restrict_time(self, n_last: int) -> "Grid1D":
        """Grid over ``t[0..n_last]`` on the same price nodes."""
        return Grid1D(self.s, self.t[: n_last + 1])


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Nodes in price ``s``, factor ``y`` and time ``t``; ``s[0] > 0`` is allowed."""

    s: np.ndarray
    y: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", _check_axis("s", self.s, 3))
        object.__setattr__(self, "y", _check_axis("y", self.y, 3))
        object.__setattr__(self, "t", _check_axis("t", self.t, 2))
        if self.s[0] < 0.0:
            raise ValueError("s grid must be non-negative")

    @classmethod
    def uniform(cls, s_max: float, y_min: float, y_max: float, T: float,
                Ms: int = 200, My: int = 100, N: int = 200) -> "Grid2D":
        return cls(np.linspace(0.0, s_max, Ms + 1), np.linspace(y_min, y_max, My + 1),
                   np.linspace(0.0, T, N + 1))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.t.size, self.s.size, self.y.size)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.s, self.y, indexing="ij")

    def same_as(self, other) -> bool:
        return (
            isinstance(other, Grid2D)
            and all(a.shape == b.shape and np.array_equal(a, b)
                    for a, b in ((self.s, other.s), (self.y, other.y), (self.t, other.t)))
        )


# --------------------------------------------------------------------------- surfaces


@dataclass(eq=False)
class Surface:
    """A value function sampled on every node of a grid, time-major."""

    grid: Grid1D | Grid2D
    values: np.ndarray
    label: str = ""
    measure: str = ""
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridMismatch(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"surface {self.label!r} contains non-finite values")

    def derived(self, values: np.ndarray, label: str, measure: str | None = None) -> "Surface":
        return Surface(self.grid, values, label, self.measure if measure is None else measure)

    def check_grid(self, other: "Surface") -> None:
        if not self.grid.same_as(other.grid):
            raise GridMismatch(f"surfaces {self.label!r} and {other.label!r} live on different grids")

    def at(self, t: float, s: float, y: float | None = None) -> float:
        """Value at an arbitrary point by (bi/tri)linear interpolation."""
        g = self.grid
        n = _bracket(g.t, t)
        wt = (t - g.t[n]) / (g.t[n + 1] - g.t[n])
        i = _bracket(g.s, s)
        ws = (s - g.s[i]) / (g.s[i + 1] - g.s[i])
        v = self.values
        if isinstance(g, Grid2D):
            if y is None:
                raise ValueError("y is required on a 2-D surface")
            j = _bracket(g.y, y)
            wy = (y - g.y[j]) / (g.y[j + 1] - g.y[j])
            v = v[:, :, j] * (1 - wy) + v[:, :, j + 1] * wy
        row = v[n] * (1 - wt) + v[n + 1] * wt
        return float(row[i] * (1 - ws) + row[i + 1] * ws)


def _bracket(x: np.ndarray, v: float) -> int:
    if v < x[0] - 1e-12 or v > x[-1] + 1e-12:
        raise ValueError(f"{v} outside grid range [{x[0]}, {x[-1]}]")
    return int(np.clip(np.searchsorted(x, v, side="right") - 1, 0, x.size - 2))


@dataclass(eq=False)
class RegionSet:
    """Nodes where a constraint is active, with the critical level when it is a half-line.

    ``mask`` has the shape of the surface it was extracted from. ``curve``
    holds the interpolated crossing level per time step (and per ``y`` node in
    two dimensions); it is ``None`` when some slice crosses more than once and
    NaN on slices without any crossing.
    """

    s: np.ndarray
    t: np.ndarray
    mask: np.ndarray
    curve: np.ndarray | None = None
    label: str = ""

    def intervals(self, n: int, j: int | None = None) -> list[tuple[int, int]]:
        """Sorted disjoint inclusive index intervals of the active set at time step ``n``."""
        m = self.mask[n] if j is None else self.mask[n, :, j]
        return _runs(m)

    def values_at(self, n: int, j: int | None = None) -> list[tuple[float, float]]:
        return [(self.s[a], self.s[b]) for a, b in self.intervals(n, j)]

    @property
    def empty(self) -> bool:
        return not bool(self.mask.any())


def _runs(m: np.ndarray) -> list[tuple[int, int]]:
    m = np.asarray(m, dtype=np.int8)
    d = np.diff(np.concatenate(([0], m, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def extract_region(a: Surface, b: Surface, abs_tol: float = 1e-7, rel_tol: float = 1e-6,
                   where: np.ndarray | None = None, label: str = "") -> RegionSet:
    """Nodes where ``|a - b| <= max(abs_tol, rel_tol * max(1, |b|))``.

    ``where`` optionally restricts the candidate nodes (e.g. to positive
    payoffs). The critical curve linearly interpolates the zero of
    ``|a - b| - tol`` between the two nodes bracketing each transition.
    """
    a.check_grid(b)
    tol = np.maximum(abs_tol, rel_tol * np.maximum(1.0, np.abs(b.values)))
    gap = np.abs(a.values - b.values) - tol
    mask = gap <= 0.0
    if where is not None:
        mask &= where
        gap = np.where(where, gap, np.abs(gap) + tol)
    return RegionSet(a.grid.s, a.grid.t, mask, _critical_curve(a.grid.s, mask, gap), label)


def _critical_curve(s: np.ndarray, mask: np.ndarray, gap: np.ndarray) -> np.ndarray | None:
    # move the s axis last so 1-D and 2-D share the code
    m = np.moveaxis(mask, 1, -1)
    g = np.moveaxis(gap, 1, -1)
    flips = m[..., 1:] != m[..., :-1]
    if np.any(flips.sum(axis=-1) > 1):
        return None
    curve = np.full(m.shape[:-1], np.nan)
    idx = np.argwhere(flips)
    for pos in idx:
        *lead, i = pos
        lead = tuple(lead)
        g0, g1 = g[lead + (i,)], g[lead + (i + 1,)]
        w = g0 / (g0 - g1) if g0 != g1 else 0.5
        curve[lead] = s[i] + (s[i + 1] - s[i]) * min(max(w, 0.0), 1.0)
    return curve


# --------------------------------------------------------------------------- coefficients


@dataclass(frozen=True)
class Coefficients:
    """Pointwise coefficients of ``u_t + diffusion u_ss + drift u_s - discount u + source = 0``."""

    diffusion: np.ndarray | float = 0.0
    drift: np.ndarray | float = 0.0
    discount: np.ndarray | float = 0.0
    source: np.ndarray | float = 0.0


@dataclass(frozen=True)
class Coefficients2D:
    """Two-factor analogue of :class:`Coefficients` with ``y`` and cross terms."""

    diffusion_s: np.ndarray | float = 0.0
    drift_s: np.ndarray | float = 0.0
    diffusion_y: np.ndarray | float = 0.0
    drift_y: np.ndarray | float = 0.0
    cross: np.ndarray | float = 0.0
    discount: np.ndarray | float = 0.0
    source: np.ndarray | float = 0.0


def _s_operator(s: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Bands (lower, centre, upper) of the spatial operator along ``s`` (leading axis).

    Row 0 keeps only the discount term (the PDE degenerates at s = 0 when
    diffusion and drift vanish there); the last row is the zero-gamma edge.
    Trailing axes of ``a, b, c`` broadcast, so the same code builds the
    s-part of the 2-D stencil.
    """
    extra = (slice(None),) + (None,) * (a.ndim - 1)
    hm = np.diff(s)[:-1][extra]
    hp = np.diff(s)[1:][extra]
    ai, bi = a[1:-1], b[1:-1]
    d2m = 2.0 / (hm * (hm + hp))
    d2p = 2.0 / (hp * (hm + hp))
    d1m = -hp / (hm * (hm + hp))
    d1p = hm / (hp * (hm + hp))
    lo_i = ai * d2m + bi * d1m
    up_i = ai * d2p + bi * d1p
    fwd = (lo_i < 0.0) & (bi > 0.0)
    bwd = (up_i < 0.0) & (bi < 0.0)
    lo_i = np.where(fwd, ai * d2m, np.where(bwd, ai * d2m - bi / hm, lo_i))
    up_i = np.where(fwd, ai * d2p + bi / hp, np.where(bwd, ai * d2p, up_i))

    lo = np.zeros_like(a)
    up = np.zeros_like(a)
    lo[1:-1] = lo_i
    up[1:-1] = up_i
    h_last = s[-1] - s[-2]
    lo[-1] = -b[-1] / h_last
    centre = -(lo + up) - c
    # rows 0 and M: the central first-derivative weights do not sum to zero there
    centre[0] = -c[0]
    centre[-1] = b[-1] / h_last - c[-1]
    return lo, centre, up


def _as_field(x, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=float), shape).copy()


# --------------------------------------------------------------------------- problems


@dataclass(eq=False)
class ObstacleProblem:
    """A backward linear PDE on a :class:`Grid1D` or :class:`Grid2D`, optionally with an obstacle.

    Parameters
    ----------
    coefficients
        ``coefficients(t, s) -> Coefficients`` in 1-D, or
        ``coefficients(t, S, Y) -> Coefficients2D`` with ``S, Y`` from ``grid.mesh()``.
    terminal
        Slice at ``t[-1]``.
    obstacle
        Array with the shape of the full grid; ``None`` or infinite entries
        mean unconstrained. ``sense="lower"`` enforces ``value >= obstacle``,
        ``"upper"`` enforces ``value <= obstacle``.
    lower_bc, upper_bc
        Dirichlet values at the first/last ``s`` node as functions of ``t``
        (scalar, or an array over ``y`` in 2-D). ``lower_bc=None`` keeps the
        degenerate PDE row; ``upper_bc=None`` applies zero gamma.
    """

    grid: Grid1D | Grid2D
    coefficients: Callable
    terminal: np.ndarray
    obstacle: np.ndarray | None = None
    sense: str = "lower"
    lower_bc: Callable[[float], float | np.ndarray] | None = None
    upper_bc: Callable[[float], float | np.ndarray] | None = None
    scheme: str = "crank-nicolson"
    rannacher_steps: int = 2
    omega: float = 1.5
    tol: float = 1e-8
    max_iter: int = 10000
    region_abs_tol: float = 1e-7
    region_rel_tol: float = 1e-6
    label: str = ""
    measure: str = ""

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"sense must be one of {SENSES}, got {self.sense!r}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0.0 < self.omega < 2.0:
            raise ValueError(f"omega must lie in (0, 2), got {self.omega}")
        space_shape = self.grid.shape[1:]
        self.terminal = np.asarray(self.terminal, dtype=float)
        if self.terminal.shape != space_shape:
            raise GridMismatch(f"terminal shape {self.terminal.shape} != {space_shape}")
        if self.obstacle is not None:
            self.obstacle = np.asarray(self.obstacle, dtype=float)
            if self.obstacle.shape != self.grid.shape:
                raise GridMismatch(f"obstacle shape {self.obstacle.shape} != {self.grid.shape}")
            g = self.obstacle[-1]
            slack = 1e-10 * np.maximum(1.0, np.abs(np.where(np.isfinite(g), g, 0.0)))
            bad = self.terminal < g - slack if self.sense == "lower" else self.terminal > g + slack
            if np.any(bad):
                raise ValueError("terminal slice violates the obstacle at maturity")

    @property
    def sign(self) -> int:
        return 1 if self.sense == "lower" else -1

    def theta(self, step: int) -> float:
        """Implicitness weight of the ``step``-th backward step (0 = the first after maturity)."""
        if self.scheme == "implicit" or step < self.rannacher_steps:
            return 1.0
        return 0.5

    def obstacle_slice(self, n: int) -> np.ndarray:
        fill = -np.inf if self.sense == "lower" else np.inf
        if self.obstacle is None:
            return np.full(self.grid.shape[1:], fill)
        g = self.obstacle[n].copy()
        if self.lower_bc is not None:
            g[0] = fill
        if self.upper_bc is not None:
            g[-1] = fill
        return g


@dataclass(frozen=True)
class LinearOperatorBand:
    """One backward step's system matrix.

    1-D: ``lower``, ``diag``, ``upper`` bands (``lower[0]``/``upper[-1]`` unused).
    2-D: ``stencil`` of shape ``(9, Ms+1, My+1)`` in kernel order.
    """

    lower: np.ndarray | None = None
    diag: np.ndarray | None = None
    upper: np.ndarray | None = None
    stencil: np.ndarray | None = None
    dominant: bool = True

    def matvec(self, x: np.ndarray) -> np.ndarray:
        if self.stencil is not None:
            return _kernels.apply_2d(self.stencil, x)
        out = self.diag * x
        out[1:] += self.lower[1:] * x[:-1]
        out[:-1] += self.upper[:-1] * x[1:]
        return out


# --------------------------------------------------------------------------- assembly


def _operator_1d(problem: ObstacleProblem, t: float):
    s = problem.grid.s
    co = problem.coefficients(t, s)
    shape = s.shape
    a, b, c = (_as_field(x, shape) for x in (co.diffusion, co.drift, co.discount))
    lo, ce, up = _s_operator(s, a, b, c)
    return lo, ce, up, _as_field(co.source, shape)


def _stencil_2d(problem: ObstacleProblem, t: float):
    g = problem.grid
    S, Y = g.mesh()
    co = problem.coefficients(t, S, Y)
    shape = S.shape
    a_s, b_s, a_y, b_y, x, c = (
        _as_field(v, shape)
        for v in (co.diffusion_s, co.drift_s, co.diffusion_y, co.drift_y, co.cross, co.discount)
    )
    st = np.zeros((9,) + shape)
    lo, ce, up = _s_operator(g.s, a_s, b_s, np.zeros(shape))
    st[_kernels.W], st[_kernels.E], st[_kernels.C] = lo, up, ce
    # y direction: same construction on the transposed fields; rows 0/M become one-sided edges
    loy, cey, upy = _s_operator(g.y, a_y.T, b_y.T, np.zeros(shape[::-1]))
    loy, cey, upy = loy.T, cey.T, upy.T
    hy0 = g.y[1] - g.y[0]
    # y edges: zero second derivative, drift differenced towards the interior
    upy[:, 0] = b_y[:, 0] / hy0
    cey[:, 0] = -b_y[:, 0] / hy0
    st[_kernels.S] = loy
    st[_kernels.N] = upy
    st[_kernels.C] += cey
    # cross term on interior nodes only
    ds = (g.s[2:] - g.s[:-2])[:, None]
    dy = (g.y[2:] - g.y[:-2])[None, :]
    k = x[1:-1, 1:-1] / (ds * dy)
    st[_kernels.NE][1:-1, 1:-1] = k
    st[_kernels.SW][1:-1, 1:-1] = k
    st[_kernels.NW][1:-1, 1:-1] = -k
    st[_kernels.SE][1:-1, 1:-1] = -k
    # the s edges carry no y or cross coupling beyond what the s-operator row allows
    st[_kernels.C] -= c
    return st, _as_field(co.source, shape)


def assemble_step(problem: ObstacleProblem, n: int, u_next: np.ndarray,
                  scheme: str | None = None, cache: dict | None = None):
    """System matrix and right-hand side for the backward step ``t[n+1] -> t[n]``.

    ``scheme`` overrides the problem's scheme for this step. ``cache`` may
    carry the operator already evaluated at ``t[n+1]``.

    Returns
    -------
    (LinearOperatorBand, rhs)
    """
    g = problem.grid
    N = g.t.size - 1
    if not 0 <= n < N:
        raise IndexError(f"step index {n} outside [0, {N})")
    scheme = scheme or problem.scheme
    theta = 1.0 if scheme == "implicit" else problem.theta(N - 1 - n)
    dt = g.t[n + 1] - g.t[n]
    build = _operator_1d if isinstance(g, Grid1D) else _stencil_2d
    cache = {} if cache is None else cache
    op_now = build(problem, g.t[n])
    op_next = cache.get(n + 1)
    if op_next is None and theta < 1.0:
        op_next = build(problem, g.t[n + 1])
    warned = cache.get("warned", False)
    cache.clear()
    cache[n] = op_now
    cache["warned"] = warned

    if isinstance(g, Grid1D):
        lo, ce, up, f = op_now
        lower, diag, upper = -theta * dt * lo, 1.0 - theta * dt * ce, -theta * dt * up
        rhs = u_next + theta * dt * f
        if theta < 1.0:
            lo1, ce1, up1, f1 = op_next
            au = ce1 * u_next
            au[1:] += lo1[1:] * u_next[:-1]
            au[:-1] += up1[:-1] * u_next[1:]
            rhs = rhs + (1.0 - theta) * dt * (au + f1)
        if problem.lower_bc is not None:
            lower[0], diag[0], upper[0] = 0.0, 1.0, 0.0
            rhs[0] = problem.lower_bc(g.t[n])
        if problem.upper_bc is not None:
            lower[-1], diag[-1], upper[-1] = 0.0, 1.0, 0.0
            rhs[-1] = problem.upper_bc(g.t[n])
        elif diag[-1] <= abs(lower[-1]):
            # strong outward drift at the edge: carry the previous slope instead
            lower[-1], diag[-1] = -1.0, 1.0
            rhs[-1] = u_next[-2] - u_next[-3]
        dominant = bool(np.all(np.abs(diag) > np.abs(lower) + np.abs(upper)))
        band = LinearOperatorBand(lower=lower, diag=diag, upper=upper, dominant=dominant)
    else:
        st, f = op_now
        system = -theta * dt * st
        system[_kernels.C] += 1.0
        rhs = u_next + theta * dt * f
        if theta < 1.0:
            st1, f1 = op_next
            rhs = rhs + (1.0 - theta) * dt * (_kernels.apply_2d(st1, u_next) + f1)
        for edge, bc in ((0, problem.lower_bc), (-1, problem.upper_bc)):
            if bc is not None:
                system[:, edge, :] = 0.0
                system[_kernels.C, edge, :] = 1.0
                rhs[edge, :] = bc(g.t[n])
        off = np.abs(system[1:]).sum(axis=0)
        dominant = bool(np.all(np.abs(system[_kernels.C]) > off))
        band = LinearOperatorBand(stencil=system, dominant=dominant)

    if not band.dominant and not cache["warned"]:
        cache["warned"] = True
        warnings.warn(f"{problem.label or 'problem'}: system at t={g.t[n]:.6g} is not strictly "
                      "diagonally dominant; consider a smaller time step", NonDominantMatrix,
                      stacklevel=2)
    return band, rhs


# --------------------------------------------------------------------------- linear solvers


def thomas_solve(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray,
                 rhs: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    args = [np.ascontiguousarray(x, dtype=float) for x in (lower, diag, upper, rhs)]
    x, bad = _kernels.thomas(*args)
    if bad >= 0:
        raise SingularPivot(f"zero pivot in row {bad}")
    return x


def psor_step(band: LinearOperatorBand, rhs: np.ndarray, obstacle: np.ndarray,
              sense: str = "lower", omega: float = 1.5, tol: float = 1e-8,
              max_iter: int = 10000, x0: np.ndarray | None = None):
    """Projected SOR for one linear complementarity system.

    The iteration starts from the unconstrained solution projected onto the
    feasible side of the obstacle unless ``x0`` is given, and stops once both
    the update and the row-scaled complementarity residual fall below ``tol``.

    Returns
    -------
    (x, active, info)
        ``active`` flags nodes held at the obstacle; ``info`` carries
        ``iterations`` and ``residual``.

    Raises
    ------
    MaxIterExceeded
        Carrying the last iterate and residual.
    """
    if not 0.0 < omega < 2.0:
        raise ValueError(f"omega must lie in (0, 2), got {omega}")
    sign = 1 if sense == "lower" else -1
    g = np.ascontiguousarray(obstacle, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if x0 is None:
        x = _direct_solve(band, rhs)
    else:
        x = np.array(x0, dtype=float)
    x = np.maximum(x, g) if sign > 0 else np.minimum(x, g)
    it, res = _relax(band, rhs, g, sign, x, omega, tol, max_iter)
    if res > tol:
        raise MaxIterExceeded(f"PSOR stopped after {it} iterations with residual {res:.3e}",
                              iterate=x, residual=res)
    active = x == g
    return x, active, {"iterations": int(it), "residual": float(res)}


def _relax(band: LinearOperatorBand, rhs, g, sign: int, x: np.ndarray, omega: float,
           tol: float, max_iter: int) -> tuple[int, float]:
    """Run the PSOR kernel in place on ``x``.

    Over-relaxation can cycle when the matrix is not an M-matrix (outward drift
    at the top edge gives a positive off-diagonal). On failure the sweep is
    restarted from the same point with ``omega = 1``, plain projected
    Gauss-Seidel, which converges for any diagonally dominant row set.
    """
    start = x.copy()
    for w in (omega, 1.0) if omega != 1.0 else (omega,):
        x[...] = start
        if band.stencil is not None:
            it, res = _kernels.psor_2d(band.stencil, rhs, g, sign, x, w, tol, max_iter)
        else:
            it, res = _kernels.psor_1d(band.lower, band.diag, band.upper, rhs, g, sign, x,
                                       w, tol, max_iter)
        if res <= tol:
            break
    return it, res


def complementarity_residual(band: LinearOperatorBand, rhs: np.ndarray, x: np.ndarray,
                             obstacle: np.ndarray, sense: str = "lower") -> float:
    """Max over nodes of ``|min(r, x - g)|`` (``max`` for upper obstacles), ``r`` row-scaled."""
    diag = band.stencil[_kernels.C] if band.stencil is not None else band.diag
    r = (band.matvec(x) - rhs) / diag
    gap = x - obstacle
    c = np.minimum(r, gap) if sense == "lower" else np.maximum(r, gap)
    return float(np.max(np.abs(c)))


def _direct_solve(band: LinearOperatorBand, rhs: np.ndarray) -> np.ndarray:
    if band.stencil is None:
        return thomas_solve(band.lower, band.diag, band.upper, rhs)
    return splinalg.spsolve(_stencil_matrix(band.stencil), rhs.ravel()).reshape(rhs.shape)


def _stencil_matrix(st: np.ndarray) -> sparse.csr_matrix:
    _, ns, ny = st.shape
    idx = np.arange(ns * ny).reshape(ns, ny)
    offsets = {
        _kernels.C: (0, 0), _kernels.W: (-1, 0), _kernels.E: (1, 0), _kernels.S: (0, -1),
        _kernels.N: (0, 1), _kernels.SW: (-1, -1), _kernels.SE: (1, -1),
        _kernels.NW: (-1, 1), _kernels.NE: (1, 1),
    }
    rows, cols, vals = [], [], []
    for k, (di, dj) in offsets.items():
        i0, i1 = max(0, -di), ns - max(0, di)
        j0, j1 = max(0, -dj), ny - max(0, dj)
        v = st[k, i0:i1, j0:j1]
        nz = v != 0.0
        rows.append(idx[i0:i1, j0:j1][nz])
        cols.append(idx[i0 + di:i1 + di, j0 + dj:j1 + dj][nz])
        vals.append(v[nz])
    n = ns * ny
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))


class _Factorised:
    """Reuses a sparse LU while consecutive 2-D steps share the same matrix."""

    def __init__(self):
        self._key = None
        self._lu = None

    def solve(self, st: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        if self._key is None or self._key.shape != st.shape or not np.array_equal(self._key, st):
            self._key = st.copy()
            self._lu = splinalg.splu(_stencil_matrix(st).tocsc())
        return self._lu.solve(rhs.ravel()).reshape(rhs.shape)


# --------------------------------------------------------------------------- marching


def march(problem: ObstacleProblem) -> tuple[Surface, RegionSet]:
    """Solve ``problem`` backward from maturity on every time node.

    Pure PDE steps use a direct solve; steps with a finite obstacle use PSOR
    warm-started from the projected direct solution. With Crank-Nicolson the
    first ``rannacher_steps`` steps are fully implicit.

    The returned surface's ``stats`` record PSOR iteration counts and the
    largest complementarity residual over accepted steps.
    """
    g = problem.grid
    is2d = isinstance(g, Grid2D)
    N = g.t.size - 1
    values = np.empty(g.shape)
    u = problem.terminal.copy()
    if problem.upper_bc is not None:
        u[-1] = problem.upper_bc(g.t[-1])
    if problem.lower_bc is not None:
        u[0] = problem.lower_bc(g.t[-1])
    values[-1] = u
    cache: dict = {}
    lu = _Factorised() if is2d else None
    total_it, psor_steps, worst = 0, 0, 0.0
    sign = problem.sign
    for n in range(N - 1, -1, -1):
        band, rhs = assemble_step(problem, n, u, cache=cache)
        obs = problem.obstacle_slice(n)
        constrained = bool(np.any(np.isfinite(obs)))
        x = lu.solve(band.stencil, rhs) if is2d else thomas_solve(band.lower, band.diag,
                                                                  band.upper, rhs)
        if constrained:
            x = np.maximum(x, obs) if sign > 0 else np.minimum(x, obs)
            it, res = _relax(band, rhs, obs, sign, x, problem.omega, problem.tol,
                             problem.max_iter)
            if res > problem.tol:
                raise MaxIterExceeded(
                    f"{problem.label or 'problem'}: PSOR failed at t={g.t[n]:.6g} "
                    f"(residual {res:.3e} after {it} iterations)", iterate=x, residual=res)
            total_it += it
            psor_steps += 1
            worst = max(worst, res)
        values[n] = x
        u = x
    surface = Surface(g, values, problem.label, problem.measure,
                      {"psor_iterations": total_it, "psor_steps": psor_steps,
                       "max_residual": worst, "time_steps": N})
    if problem.obstacle is None:
        region = RegionSet(g.s, g.t, np.zeros(g.shape, dtype=bool), None, problem.label)
    else:
        finite = np.isfinite(problem.obstacle)
        obstacle = Surface(g, np.where(finite, problem.obstacle, 0.0), "obstacle")
        region = extract_region(surface, obstacle, problem.region_abs_tol, problem.region_rel_tol,
                                where=finite, label=problem.label)
    return surface, region


def march_2d(problem: ObstacleProblem) -> tuple[Surface, RegionSet]:
    """Two-factor version of :func:`march`; the problem must live on a :class:`Grid2D`."""
    if not isinstance(problem.grid, Grid2D):
        raise GridMismatch("march_2d requires a Grid2D problem")
    return march(problem)
