"""Command-line scenario runner.

    purchase-timing run CONFIG [--out DIR]
    purchase-timing preset NAME [--out DIR]
    purchase-timing list

Exit codes: 0 success, 2 bad configuration, 3 solver failure, 4 unknown
preset or scenario. The output directory is, in order of precedence, ``--out``,
the ``PURCHASE_TIMING_OUT`` environment variable, the config's
``output.directory`` and ``./out/<scenario name>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import export
from .applications import RollSpec, buy_sell, rolling_value
from .config import Scenario, load, parse
from .defaultable import SwitchPolicy, american_purchase, mc_price, solve_european
from .errors import ConfigError, SolverError, UnknownScenario
from .perpetual import perpetual_put, summary as perpetual_summary, timing_value
from .stochvol import solve_stochvol

OUT_ENV = "PURCHASE_TIMING_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_UNKNOWN = 0, 2, 3, 4


# --------------------------------------------------------------------------- presets


def _preset_files() -> dict[str, Path]:
    root = resources.files("purchase_timing") / "presets"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".json")}


def list_presets() -> dict[str, str]:
    """Preset names mapped to their one-line descriptions."""
    out = {}
    for name, path in sorted(_preset_files().items()):
        out[name] = json.loads(path.read_text()).get("description", "")
    return out


def load_preset(name: str) -> Scenario:
    files = _preset_files()
    if name not in files:
        raise UnknownScenario(f"unknown preset {name!r}; try one of {sorted(files)}")
    return parse(json.loads(files[name].read_text()), name)


# --------------------------------------------------------------------------- runners


def _at_spots(surfaces: dict, spots, y=None) -> dict:
    out = {}
    for s in spots:
        key = f"{s:g}"
        if y is None:
            out[key] = {k: v.at(0.0, s) for k, v in surfaces.items()}
        else:
            out[key] = {f"y={yy:g}": {k: v.at(0.0, s, yy) for k, v in surfaces.items()} for yy in y}
    return out


def _stats(**surfaces) -> dict:
    return {k: v.stats for k, v in surfaces.items() if v.stats}


def _run_european(sc: Scenario, out: Path) -> dict:
    res = solve_european(sc.model, sc.payoff, sc.settings)
    summary = {
        "values_t0": _at_spots({"P": res.P, "Pb": res.Pb, "V": res.V, "L": res.L,
                                "L_direct": res.L_direct, "J": res.J}, sc.spots),
        "buy_region": export.region_summary(res.buy_region),
        "max_abs_L_minus_L_direct": float(np.abs(res.L.values - res.L_direct.values).max()),
        "G_range": [float(res.G.values.min()), float(res.G.values.max())],
        "solver": _stats(P=res.P, Pb=res.Pb, V=res.V, L_direct=res.L_direct),
    }
    if sc.mc:
        pol = SwitchPolicy(threshold=sc.mc["threshold"], direction=sc.mc["direction"])
        seeds = np.random.SeedSequence(sc.seed).spawn(2)
        a = mc_price(sc.model, sc.payoff, pol, sc.mc["paths"], seeds[0], sc.mc["spot"],
                     valuation="terminal")
        b = mc_price(sc.model, sc.payoff, pol, sc.mc["paths"], seeds[1], sc.mc["spot"],
                     valuation="switch_price",
                     market_price=lambda t, s: np.array([res.P.at(t, x) for x in s]))
        summary["monte_carlo"] = {"concatenated": a, "switch_price": b,
                                  "z": (a[0] - b[0]) / float(np.hypot(a[1], b[1]))}
    if "csv" in sc.formats:
        export.write_boundary_csv(res.buy_region, out / "boundary.csv")
        if sc.emit_surfaces:
            for k in ("P", "Pb", "V", "L", "J", "G"):
                export.write_surface_csv(getattr(res, k), out / f"surface_{k}.csv",
                                         sc.surface_stride, sc.surface_stride)
    return summary


def _run_american(sc: Scenario, out: Path) -> dict:
    res = american_purchase(sc.model, sc.payoff, sc.settings, european=True)
    summary = {
        "values_t0": _at_spots({"PA": res.PA, "PbA": res.PbA, "JA": res.JA, "LA": res.LA,
                                "P": res.P, "Pb": res.Pb}, sc.spots),
        "purchase_region": export.region_summary(res.purchase_region),
        "exercise_market_t0": None if res.exercise.curve is None else res.exercise.curve[0],
        "exercise_buyer_t0": None if res.exercise_buyer.curve is None
        else res.exercise_buyer.curve[0],
        "solver": _stats(PA=res.PA, PbA=res.PbA, JA=res.JA),
    }
    if "csv" in sc.formats:
        export.write_boundary_csv(res.purchase_region, out / "boundary.csv")
        for region, fname in ((res.exercise, "exercise_market.csv"),
                              (res.exercise_buyer, "exercise_buyer.csv")):
            export.write_boundary_csv(region, out / fname)
        if sc.emit_surfaces:
            for k in ("PA", "PbA", "JA", "LA"):
                export.write_surface_csv(getattr(res, k), out / f"surface_{k}.csv",
                                         sc.surface_stride, sc.surface_stride)
    return summary


def _run_perpetual(sc: Scenario, out: Path) -> dict:
    p = sc.model
    summary = perpetual_summary(p)
    if "csv" in sc.formats:
        s = np.linspace(0.0, 4.0 * p.K, 401)
        market, _, _ = perpetual_put(p, "market")
        buyer, _, _ = perpetual_put(p, "buyer")
        rows = np.column_stack([s, market(s), buyer(s), timing_value(p, s)])
        with (out / "timing_value.csv").open("w") as fh:
            fh.write("s,P,Pb,J\n")
            for row in rows:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
        with (out / "boundary.csv").open("w") as fh:
            fh.write("name,level\n")
            for k in ("b_tilde_star", "b_star", "s_star"):
                v = summary[k]
                fh.write(f"{k},{'' if v is None else repr(float(v))}\n")
    return summary


def _run_stochvol(sc: Scenario, out: Path) -> dict:
    res = solve_stochvol(sc.model, sc.payoff, sc.settings)
    g = res.P.grid
    buy = res.buy_region.mask
    summary = {
        "values_t0": _at_spots({"P": res.P, "Pb": res.Pb, "V": res.V, "L": res.L, "J": res.J},
                               sc.spots, sc.ys),
        "buy_fraction": float(buy.mean()),
        "max_abs_L_minus_L_direct": float(np.abs(res.L.values - res.L_direct.values).max()),
        "G_range": [float(res.G.values.min()), float(res.G.values.max())],
        "solver": _stats(P=res.P, Pb=res.Pb, V=res.V, L_direct=res.L_direct),
    }
    if "csv" in sc.formats:
        export.write_boundary_csv(res.buy_region, out / "boundary.csv", y=g.y)
        if sc.emit_surfaces:
            for k in ("P", "Pb", "V", "L"):
                export.write_surface_csv(getattr(res, k), out / f"surface_{k}.csv",
                                         sc.surface_stride, sc.surface_stride)
    return summary


def _run_rolling(sc: Scenario, out: Path) -> dict:
    T, T1 = sc.roll
    res = rolling_value(sc.model, sc.payoff, RollSpec(T, T1), sc.settings)
    window = res.h.grid.t >= T - T1 - 1e-12
    summary = {
        "values_t0": _at_spots({"h": res.h, "V_roll": res.V, "L_roll": res.L}, sc.spots),
        "max_abs_L_roll_window": float(np.abs(res.L.values[window]).max()),
        "G_diff_range": [float(res.G_diff.values.min()), float(res.G_diff.values.max())],
        "roll_region": export.region_summary(res.region),
        "solver": _stats(V_roll=res.V),
    }
    if "csv" in sc.formats:
        export.write_boundary_csv(res.region, out / "boundary.csv")
        if sc.emit_surfaces:
            for k in ("h", "V", "L"):
                export.write_surface_csv(getattr(res, k), out / f"surface_{k}.csv",
                                         sc.surface_stride, sc.surface_stride)
    return summary


def _run_buysell(sc: Scenario, out: Path) -> dict:
    res = buy_sell(sc.model, sc.payoff, sc.settings, with_buyer_price=True)
    summary = {
        "values_t0": _at_spots({"P": res.P, "Pb": res.Pb, "R": res.R, "U": res.U}, sc.spots),
        "buy_region": export.region_summary(res.buy_region),
        "sell_region": export.region_summary(res.sell_region),
        "solver": _stats(R=res.R, U=res.U),
    }
    if "csv" in sc.formats:
        export.write_boundary_csv(res.buy_region, out / "boundary.csv")
        export.write_boundary_csv(res.sell_region, out / "sell_boundary.csv")
        if sc.emit_surfaces:
            for k in ("R", "U"):
                export.write_surface_csv(getattr(res, k), out / f"surface_{k}.csv",
                                         sc.surface_stride, sc.surface_stride)
    return summary


RUNNERS = {
    "european": _run_european, "digital": _run_european, "american": _run_american,
    "perpetual": _run_perpetual, "stochvol": _run_stochvol, "rolling": _run_rolling,
    "buysell": _run_buysell,
}


def run_scenario(sc: Scenario, out: Path, jobs: int = 1) -> dict:
    """Run ``sc`` and write its files into ``out``. Solver errors propagate."""
    if jobs > 1 and hasattr(sc.settings, "jobs"):
        sc = replace(sc, settings=replace(sc.settings, jobs=jobs))
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        summary = RUNNERS[sc.kind](sc, out)
    elapsed = time.perf_counter() - started
    summary = {"scenario": sc.kind, "name": sc.name, "status": "ok", **summary}
    if "json" in sc.formats:
        export.write_json(summary, out / "summary.json")
        export.write_json({"total_seconds": elapsed}, out / "timings.json")
    return summary


def _output_dir(cli_out: str | None, sc: Scenario) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if sc.output_dir:
        return Path(sc.output_dir)
    return Path("out") / sc.name


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="purchase-timing",
                                description="Optimal purchase timing scenarios.")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for independent solves")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory")
    pr = sub.add_parser("preset", help="run a bundled preset")
    pr.add_argument("name")
    pr.add_argument("--out", help="output directory")
    sub.add_parser("list", help="list bundled presets")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list":
        for name, desc in list_presets().items():
            print(f"{name:18s} {desc}")
        return EXIT_OK
    try:
        sc = load(args.config) if args.command == "run" else load_preset(args.name)
    except UnknownScenario as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args.out, sc)
    try:
        summary = run_scenario(sc, out, max(1, args.jobs))
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        export.write_json({"scenario": sc.kind, "name": sc.name, "status": "error",
                           "error": {"type": type(exc).__name__, "message": str(exc)}},
                          out / "summary.json")
        print(f"error: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        # raised from inside model code, e.g. an empty rolling window
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        print(json.dumps(export._jsonable(summary), indent=2, sort_keys=True))
        print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
