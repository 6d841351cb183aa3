"""Compiled inner loops: tridiagonal elimination and projected SOR sweeps.

Obstacle ``sign`` is +1 for a lower obstacle (x >= g) and -1 for an upper
obstacle (x <= g). Residuals are row-scaled by the diagonal so that the
complementarity tolerance is comparable to the PSOR update size.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# stencil order used by the 2-D kernels: centre, s-1, s+1, y-1, y+1, then corners
C, W, E, S, N, SW, SE, NW, NE = range(9)


@njit(cache=True, nogil=True)
def thomas(lower, diag, upper, rhs):
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    piv = diag[0]
    if abs(piv) < 1e-300:
        return cp, 0
    cp[0] = upper[0] / piv
    dp[0] = rhs[0] / piv
    for i in range(1, n):
        piv = diag[i] - lower[i] * cp[i - 1]
        if abs(piv) < 1e-300:
            return cp, i
        cp[i] = upper[i] / piv if i < n - 1 else 0.0
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / piv
    for i in range(n - 2, -1, -1):
        dp[i] -= cp[i] * dp[i + 1]
    return dp, -1


@njit(cache=True, nogil=True)
def _residual_1d(lower, diag, upper, rhs, g, sign, x):
    n = diag.shape[0]
    worst = 0.0
    for i in range(n):
        ax = diag[i] * x[i]
        if i > 0:
            ax += lower[i] * x[i - 1]
        if i < n - 1:
            ax += upper[i] * x[i + 1]
        r = (ax - rhs[i]) / diag[i]
        gap = x[i] - g[i]
        if sign > 0:
            c = min(r, gap)
        else:
            c = max(r, gap)
        c = abs(c)
        if c > worst:
            worst = c
    return worst


@njit(cache=True, nogil=True)
def psor_1d(lower, diag, upper, rhs, g, sign, x, omega, tol, max_iter):
    """In-place projected SOR on a tridiagonal system. Returns (iterations, residual)."""
    n = diag.shape[0]
    for it in range(1, max_iter + 1):
        change = 0.0
        for i in range(n):
            acc = rhs[i]
            if i > 0:
                acc -= lower[i] * x[i - 1]
            if i < n - 1:
                acc -= upper[i] * x[i + 1]
            gs = acc / diag[i]
            new = x[i] + omega * (gs - x[i])
            if sign > 0:
                if new < g[i]:
                    new = g[i]
            else:
                if new > g[i]:
                    new = g[i]
            d = abs(new - x[i])
            if d > change:
                change = d
            x[i] = new
        if change <= tol:
            res = _residual_1d(lower, diag, upper, rhs, g, sign, x)
            if res <= tol:
                return it, res
    return max_iter, _residual_1d(lower, diag, upper, rhs, g, sign, x)


@njit(cache=True, nogil=True)
def _row_2d(st, x, i, j, ns, ny):
    # off-diagonal part of the product at node (i, j)
    acc = 0.0
    if i > 0:
        acc += st[W, i, j] * x[i - 1, j]
        if j > 0:
            acc += st[SW, i, j] * x[i - 1, j - 1]
        if j < ny - 1:
            acc += st[NW, i, j] * x[i - 1, j + 1]
    if i < ns - 1:
        acc += st[E, i, j] * x[i + 1, j]
        if j > 0:
            acc += st[SE, i, j] * x[i + 1, j - 1]
        if j < ny - 1:
            acc += st[NE, i, j] * x[i + 1, j + 1]
    if j > 0:
        acc += st[S, i, j] * x[i, j - 1]
    if j < ny - 1:
        acc += st[N, i, j] * x[i, j + 1]
    return acc


@njit(cache=True, nogil=True)
def residual_2d(st, rhs, g, sign, x):
    ns, ny = x.shape
    worst = 0.0
    for i in range(ns):
        for j in range(ny):
            r = (st[C, i, j] * x[i, j] + _row_2d(st, x, i, j, ns, ny) - rhs[i, j]) / st[C, i, j]
            gap = x[i, j] - g[i, j]
            if sign > 0:
                c = min(r, gap)
            else:
                c = max(r, gap)
            c = abs(c)
            if c > worst:
                worst = c
    return worst


@njit(cache=True, nogil=True)
def psor_2d(st, rhs, g, sign, x, omega, tol, max_iter):
    ns, ny = x.shape
    for it in range(1, max_iter + 1):
        change = 0.0
        for i in range(ns):
            for j in range(ny):
                gs = (rhs[i, j] - _row_2d(st, x, i, j, ns, ny)) / st[C, i, j]
                new = x[i, j] + omega * (gs - x[i, j])
                if sign > 0:
                    if new < g[i, j]:
                        new = g[i, j]
                else:
                    if new > g[i, j]:
                        new = g[i, j]
                d = abs(new - x[i, j])
                if d > change:
                    change = d
                x[i, j] = new
        if change <= tol:
            res = residual_2d(st, rhs, g, sign, x)
            if res <= tol:
                return it, res
    return max_iter, residual_2d(st, rhs, g, sign, x)


@njit(cache=True, nogil=True)
def apply_2d(st, x):
    ns, ny = x.shape
    out = np.empty_like(x)
    for i in range(ns):
        for j in range(ny):
            out[i, j] = st[C, i, j] * x[i, j] + _row_2d(st, x, i, j, ns, ny)
    return out
