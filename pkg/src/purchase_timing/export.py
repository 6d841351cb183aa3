"""CSV and JSON writers for surfaces and regions.

Floats are written with ``repr`` precision so re-running a scenario yields
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .engine import Grid2D, RegionSet, Surface


def _fmt(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_surface_csv(surface: Surface, path: str | Path, time_stride: int = 1,
                      space_stride: int = 1) -> Path:
    """Long format: one row per node, columns ``t,s[,y],value``."""
    path = Path(path)
    g = surface.grid
    ts = range(0, g.t.size, time_stride)
    is2d = isinstance(g, Grid2D)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "s", "y", "value"] if is2d else ["t", "s", "value"])
        for n in ts:
            tn = _fmt(g.t[n])
            for i in range(0, g.s.size, space_stride):
                if is2d:
                    for j in range(0, g.y.size, space_stride):
                        w.writerow([tn, _fmt(g.s[i]), _fmt(g.y[j]), _fmt(surface.values[n, i, j])])
                else:
                    w.writerow([tn, _fmt(g.s[i]), _fmt(surface.values[n, i])])
    return path


def write_boundary_csv(region: RegionSet, path: str | Path, y: np.ndarray | None = None) -> Path:
    """Critical level per time step: ``t,s_star`` (``t,y,s_star`` for two factors).

    When the region has no single crossing per slice, the lower and upper ends
    of every active interval are written instead (``t,s_low,s_high``).
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if region.curve is None:
            w.writerow(["t", "y", "s_low", "s_high"] if y is not None else ["t", "s_low", "s_high"])
            for n, t in enumerate(region.t):
                if y is None:
                    for lo, hi in region.values_at(n):
                        w.writerow([_fmt(t), _fmt(lo), _fmt(hi)])
                else:
                    for j, yj in enumerate(y):
                        for lo, hi in region.values_at(n, j):
                            w.writerow([_fmt(t), _fmt(yj), _fmt(lo), _fmt(hi)])
        elif y is None:
            w.writerow(["t", "s_star"])
            for t, s in zip(region.t, region.curve):
                w.writerow([_fmt(t), _fmt(s)])
        else:
            w.writerow(["t", "y", "s_star"])
            for n, t in enumerate(region.t):
                for j, yj in enumerate(y):
                    w.writerow([_fmt(t), _fmt(yj), _fmt(region.curve[n, j])])
    return path


def region_summary(region: RegionSet) -> dict:
    """JSON-friendly description: active fraction and the curve at the first time step."""
    out = {"label": region.label, "active_fraction": float(region.mask.mean()),
           "single_boundary": region.curve is not None}
    if region.curve is not None:
        out["s_star_t0"] = _jsonable(np.asarray(region.curve[0]))
    out["intervals_t0"] = [[float(a), float(b)] for a, b in region.values_at(0)] \
        if region.mask.ndim == 2 else None
    return out


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) or math.isinf(x) else x
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(obj, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path
