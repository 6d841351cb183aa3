"""Scenario configuration: JSON parsing and validation into model objects.

Every validation failure raises :class:`ConfigError` naming the offending
field (``model.sigma: ...``) or the line and column of a JSON syntax error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .applications import RollSpec
from .defaultable import DefaultableModel, Intensity, Settings
from .errors import ConfigError, UnknownScenario
from .payoffs import PAYOFF_KINDS, Payoff
from .perpetual import PerpetualParams
from .stochvol import Premium, Settings2D, SVModel

SCENARIOS = ("european", "digital", "american", "perpetual", "stochvol", "rolling", "buysell")
FORMATS = ("csv", "json")


class _Block:
    """Typed access to one JSON object, tracking its dotted path for error messages."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def _where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def number(self, key: str, default=None, *, positive=False, nonneg=False, integer=False):
        self.used.add(key)
        if key not in self.data:
            if default is None:
                raise ConfigError(f"{self._where(key)}: required field missing")
            return default
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self._where(key)}: expected a number, got {v!r}")
        if integer and (not isinstance(v, int) and not float(v).is_integer()):
            raise ConfigError(f"{self._where(key)}: expected an integer, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(f"{self._where(key)}: must be positive, got {v!r}")
        if nonneg and not v >= 0:
            raise ConfigError(f"{self._where(key)}: must be non-negative, got {v!r}")
        return int(v) if integer else float(v)

    def optional_number(self, key: str, **kw):
        if key not in self.data or self.data[key] is None:
            self.used.add(key)
            return None
        return self.number(key, **kw)

    def string(self, key: str, default=None, choices=None) -> str:
        self.used.add(key)
        v = self.data.get(key, default)
        if v is None:
            raise ConfigError(f"{self._where(key)}: required field missing")
        if not isinstance(v, str):
            raise ConfigError(f"{self._where(key)}: expected a string, got {v!r}")
        if choices is not None and v not in choices:
            raise ConfigError(f"{self._where(key)}: must be one of {list(choices)}, got {v!r}")
        return v

    def boolean(self, key: str, default: bool) -> bool:
        self.used.add(key)
        v = self.data.get(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self._where(key)}: expected true/false, got {v!r}")
        return v

    def numbers(self, key: str, default=None) -> list[float]:
        self.used.add(key)
        v = self.data.get(key, default)
        if v is None:
            raise ConfigError(f"{self._where(key)}: required field missing")
        if not isinstance(v, list) or not all(
                isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"{self._where(key)}: expected a list of numbers, got {v!r}")
        return [float(x) for x in v]

    def block(self, key: str, required: bool = False) -> "_Block":
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"{self._where(key)}: required block missing")
            return _Block({}, self._where(key))
        return _Block(self.data[key], self._where(key))

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(f"{self._where(extra[0])}: unknown field")


def _guard(fn, where: str, *args, **kw):
    # constructor validation errors become config errors with a location
    try:
        return fn(*args, **kw)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc


def _intensity(b: _Block) -> Intensity:
    kind = b.string("kind", "constant", ("constant", "exp_local", "table"))
    lam_max = b.number("lam_max", 5.0, positive=True)
    if kind == "constant":
        out = _guard(Intensity.constant, b.path, b.number("level", nonneg=True), lam_max)
    elif kind == "exp_local":
        out = _guard(Intensity.exp_local, b.path, b.number("level", nonneg=True),
                     b.number("decay"), b.number("ref"), lam_max)
    else:
        out = _guard(Intensity.table, b.path, b.numbers("s"), b.numbers("values"), lam_max)
    b.finish()
    return out


def _payoff(b: _Block, default_kind: str) -> Payoff:
    kind = b.string("kind", default_kind, PAYOFF_KINDS)
    K = b.number("strike", positive=True)
    if kind == "bull_spread":
        out = _guard(Payoff.bull_spread, b.path, K, b.number("strike_high", positive=True))
    elif kind == "custom":
        out = _guard(Payoff.custom, b.path, b.numbers("s"), b.numbers("values"), K)
    else:
        out = _guard(Payoff, b.path, kind, K)
    b.finish()
    return out


def _premium(b: _Block) -> Premium:
    out = _guard(Premium, b.path, b.number("level", 0.0), b.number("amplitude", 0.0),
                 b.number("center", 0.0), b.number("width", 1.0, positive=True))
    b.finish()
    return out


@dataclass
class Scenario:
    """A validated scenario, ready to run."""

    name: str
    kind: str
    payoff: Payoff | None = None
    model: Any = None
    settings: Any = None
    roll: tuple[float, float] | None = None
    spots: list[float] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    output_dir: str | None = None
    formats: tuple[str, ...] = ("csv", "json")
    emit_surfaces: bool = False
    surface_stride: int = 1
    seed: int = 0
    mc: dict | None = None
    description: str = ""


def parse(data: Any, name: str = "scenario") -> Scenario:
    top = _Block(data, "")
    kind = top.string("scenario")
    if kind not in SCENARIOS:
        raise UnknownScenario(f"scenario: unknown scenario {kind!r}; expected one of {list(SCENARIOS)}")
    sc = Scenario(name=top.string("name", name), kind=kind,
                  description=top.string("description", ""))
    sc.seed = top.number("seed", 0, integer=True, nonneg=True)

    out = top.block("output")
    sc.output_dir = out.data.get("directory")
    out.used.add("directory")
    if sc.output_dir is not None and not isinstance(sc.output_dir, str):
        raise ConfigError("output.directory: expected a string")
    formats = out.data.get("formats", ["csv", "json"])
    out.used.add("formats")
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigError(f"output.formats: expected a non-empty subset of {list(FORMATS)}")
    sc.formats = tuple(formats)
    sc.emit_surfaces = out.boolean("emit_surfaces", False)
    sc.surface_stride = out.number("surface_stride", 1, positive=True, integer=True)
    out.finish()

    model = top.block("model", required=True)
    grid = top.block("grid")
    solver = top.block("solver")
    report = top.block("report")
    sc.spots = report.numbers("spots", [])
    sc.ys = report.numbers("y", [0.0])
    report.finish()

    if kind == "perpetual":
        sc.model = _guard(PerpetualParams, "model", model.number("r", positive=True),
                          model.number("sigma", positive=True), model.number("K", positive=True),
                          model.number("lambda_market", nonneg=True),
                          model.number("lambda_buyer", nonneg=True))
        model.finish()
    elif kind == "stochvol":
        sc.payoff = _payoff(top.block("payoff", required=True), "put")
        d = SVModel()
        sc.model = _guard(
            SVModel, "model",
            r=model.number("r", d.r, nonneg=True), T=model.number("T", d.T, positive=True),
            sigma_min=model.number("sigma_min", d.sigma_min, positive=True),
            sigma_max=model.number("sigma_max", d.sigma_max, positive=True),
            m=model.number("m", d.m), kappa_m=model.number("kappa_m", d.kappa_m, positive=True),
            c0=model.number("c0", d.c0, nonneg=True), kappa=model.number("kappa", d.kappa),
            rho=model.number("rho", d.rho),
            premium_market=_premium(model.block("premium_market")),
            premium_buyer=_premium(model.block("premium_buyer")))
        model.finish()
        d2 = Settings2D()
        sc.settings = _guard(
            Settings2D, "grid",
            Ms=grid.number("Ms", d2.Ms, positive=True, integer=True),
            My=grid.number("My", d2.My, positive=True, integer=True),
            N=grid.number("N", d2.N, positive=True, integer=True),
            s_max=grid.optional_number("s_max", positive=True),
            y_min=grid.optional_number("y_min"), y_max=grid.optional_number("y_max"),
            omega=solver.number("omega", d2.omega, positive=True),
            tol=solver.number("tol", d2.tol, positive=True),
            max_iter=solver.number("max_iter", d2.max_iter, positive=True, integer=True))
        solver.string("scheme", "implicit", ("implicit",))
    else:
        sc.payoff = _payoff(top.block("payoff", required=True),
                            "digital_call" if kind == "digital" else "put")
        if kind == "digital" and sc.payoff.kind != "digital_call":
            raise ConfigError("payoff.kind: the digital scenario needs a digital_call payoff")
        if kind == "american" and sc.payoff.kind != "put":
            raise ConfigError("payoff.kind: the american scenario supports put payoffs only")
        if kind == "rolling":
            roll = top.block("roll", required=True)
            sc.roll = (roll.number("T", positive=True), roll.number("T1", positive=True))
            roll.finish()
            _guard(RollSpec, "roll", *sc.roll)
        T = model.number("T", sc.roll[0] if sc.roll else None, positive=True)
        sc.model = _guard(
            DefaultableModel, "model", model.number("r", nonneg=True),
            model.number("sigma", positive=True), T,
            _intensity(model.block("market_intensity", required=True)),
            _intensity(model.block("buyer_intensity", required=True)))
        model.finish()
        d1 = Settings()
        sc.settings = _guard(
            Settings, "grid",
            M=grid.number("M", d1.M, positive=True, integer=True),
            N=grid.number("N", d1.N, positive=True, integer=True),
            s_max=grid.optional_number("s_max", positive=True),
            scheme=solver.string("scheme", d1.scheme, ("implicit", "crank-nicolson")),
            omega=solver.number("omega", d1.omega, positive=True),
            tol=solver.number("tol", d1.tol, positive=True),
            max_iter=solver.number("max_iter", d1.max_iter, positive=True, integer=True),
            derivative_order=solver.number("derivative_order", d1.derivative_order,
                                           integer=True))
        if sc.settings.derivative_order not in (2, 4):
            raise ConfigError("solver.derivative_order: must be 2 or 4")
        if not 0.0 < sc.settings.omega < 2.0:
            raise ConfigError("solver.omega: must lie in (0, 2)")
        mc = top.block("monte_carlo")
        if mc.data:
            sc.mc = {"paths": mc.number("paths", 100_000, positive=True, integer=True),
                     "threshold": mc.number("threshold", positive=True),
                     "direction": mc.string("direction", "below", ("below", "above")),
                     "spot": mc.number("spot", positive=True)}
            if sc.mc["paths"] < 1000:
                raise ConfigError("monte_carlo.paths: at least 1000 paths are required")
            mc.finish()
    grid.finish()
    solver.finish()
    top.finish()
    return sc


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    return parse(data, path.stem)
