"""Scenario records: JSON parsing, validation, serialization and presets."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .dcea import DceaConfig, EstimatorState, Order
from .models import (RobotModel, SinusoidDisturbance, TargetSpec, example_disturbance,
                     example_target, no_disturbance, ramp_sine_target, static_target)
from .simulate import HybridState, random_initial_state
from .topology import Topology, build_topology, paper_topology

PAPER = "paper-example"
SWEEP_PARAMETERS = ("h", "alpha", "beta")
U64 = 2**64


class ConfigError(ValueError):
    """Invalid scenario; carries the offending field path and source line if known."""

    def __init__(self, message: str, field: Optional[str] = None,
                 line: Optional[int] = None):
        self.message = message
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class DceaSpec:
    order: str = "first"
    alpha: float = 0.9
    beta: float = 1.1
    h: float = 0.1
    kp: Any = 200.0
    kd: Any = 300.0


@dataclass
class HorizonSpec:
    t_end: float = 50.0
    dt: Optional[float] = None


@dataclass
class SweepSpec:
    parameter: str
    values: list


@dataclass
class Scenario:
    name: str
    topology: Any = PAPER
    robots: Any = PAPER
    target: Any = PAPER
    disturbance: Any = PAPER
    dcea: DceaSpec = field(default_factory=DceaSpec)
    horizon: HorizonSpec = field(default_factory=HorizonSpec)
    init: Any = field(default_factory=lambda: {"kind": "random", "low": -25.0, "high": 25.0})
    seed: int = 0
    outputs: str = "out"
    sweep: Optional[SweepSpec] = None

    # builders

    def build_topology(self) -> Topology:
        if self.topology == PAPER:
            return paper_topology()
        return build_topology(self.topology)

    def build_models(self, n: int) -> list:
        if self.robots == PAPER:
            return [RobotModel()] * n
        blocks = self.robots if isinstance(self.robots, list) else [self.robots] * n
        if len(blocks) != n:
            raise ValueError(f"need 1 or {n} robot blocks, got {len(blocks)}")
        return [RobotModel(**b) for b in blocks]

    def build_target(self) -> TargetSpec:
        if self.target == PAPER:
            return example_target()
        kind = self.target.get("kind")
        if kind == "static":
            return static_target(self.target["position"])
        if kind == "ramp-sine":
            return ramp_sine_target(*(self.target[k] for k in
                                      ("offset", "slope", "amplitude", "frequency", "phase")))
        raise ValueError(f"unknown target kind {kind!r}")

    def build_disturbance(self) -> SinusoidDisturbance:
        if self.disturbance == PAPER:
            return example_disturbance()
        if self.disturbance in (None, "none"):
            return no_disturbance(2)
        d = self.disturbance
        return SinusoidDisturbance(tuple(d["amplitude"]), tuple(d["frequency"]),
                                   tuple(d["phase"]))

    def build_cfg(self, n: int, **override) -> DceaConfig:
        d = {**asdict(self.dcea), **override}
        return DceaConfig.uniform(d["order"], d["alpha"], d["beta"], d["h"], n,
                                  2, np.asarray(d["kp"], float), np.asarray(d["kd"], float))

    def initial_state(self, n: int, target: TargetSpec, seed: Optional[int] = None
                      ) -> HybridState:
        seed = self.seed if seed is None else seed
        init = self.init
        if init["kind"] == "random":
            return random_initial_state(n, 2, np.random.default_rng(seed),
                                        init["low"], init["high"])
        if init["kind"] == "at-target":
            p = np.tile(target.position_fn(0.0), (n, 1))
            v = np.tile(target.velocity_fn(0.0), (n, 1))
            return HybridState(0.0, p, v, EstimatorState(p, v))
        raise ValueError(f"unknown init kind {init['kind']!r}")

    def with_dcea(self, **changes) -> "Scenario":
        return replace(self, dcea=replace(self.dcea, **changes))

    def validate(self) -> "Scenario":
        """Build every component once so bad values fail before any run."""
        if not 0 <= self.seed < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
        topo = _guard("topology", self.build_topology)
        n = topo.n
        _guard("robots", lambda: self.build_models(n))
        target = _guard("target", self.build_target)
        _guard("disturbance", self.build_disturbance)
        _guard("dcea", lambda: self.build_cfg(n))
        _guard("init", lambda: self.initial_state(n, target))
        hz = self.horizon
        if not (math.isfinite(hz.t_end) and hz.t_end > 0):
            raise ConfigError("t_end must be positive and finite", "horizon.t_end")
        if hz.dt is not None and not (math.isfinite(hz.dt) and hz.dt > 0):
            raise ConfigError("dt must be positive and finite", "horizon.dt")
        if hz.dt is not None:
            ratio = self.dcea.h / hz.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise ConfigError("dt must divide h", "horizon.dt")
        if self.sweep is not None:
            if self.sweep.parameter not in SWEEP_PARAMETERS:
                raise ConfigError(f"parameter must be one of {SWEEP_PARAMETERS}",
                                  "sweep.parameter")
            check_sweep_values(self.sweep.values)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _guard(name, fn):
    try:
        return fn()
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc), name) from exc


def check_sweep_values(values) -> list:
    if not isinstance(values, (list, tuple)) or len(values) == 0:
        raise ConfigError("sweep values must be a non-empty list", "sweep.values")
    out = []
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"sweep value {v!r} is not a number", "sweep.values")
        if not (math.isfinite(v) and v > 0):
            raise ConfigError(f"sweep value {v!r} must be positive and finite",
                              "sweep.values")
        out.append(float(v))
    return out


# parsing

_TOP_KEYS = {f for f in Scenario.__dataclass_fields__}


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _num(value, path, text, positive=True, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path,
                          _line_of(text, path.split(".")[-1]))
    value = float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(f"expected a positive finite number, got {value!r}", path,
                          _line_of(text, path.split(".")[-1]))
    return value


def _floats(value, path, text):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected numbers or nested arrays of numbers", path,
                          _line_of(text, path.split(".")[-1])) from None
    return arr.tolist()


def _section(raw, key, cls, text):
    block = raw.get(key, {})
    if not isinstance(block, dict):
        raise ConfigError("expected an object", key, _line_of(text, key))
    unknown = set(block) - set(cls.__dataclass_fields__)
    if unknown:
        bad = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{bad}'", f"{key}.{bad}", _line_of(text, bad))
    return block


def scenario_from_dict(raw: dict, text: Optional[str] = None) -> Scenario:
    """Parse and validate; errors point at the offending field and, given the
    source text, its line."""
    try:
        return _scenario_from_dict(raw, text)
    except ConfigError as exc:
        if exc.line is None and exc.field is not None:
            raise ConfigError(exc.message, exc.field,
                              _line_of(text, exc.field.split(".")[-1])) from exc
        raise


def _scenario_from_dict(raw: dict, text: Optional[str]) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        bad = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{bad}'", bad, _line_of(text, bad))
    if "name" not in raw or not isinstance(raw["name"], str):
        raise ConfigError("a string 'name' is required", "name", _line_of(text, "name"))

    d = _section(raw, "dcea", DceaSpec, text)
    defaults = DceaSpec()
    try:
        order = Order.parse(d.get("order", defaults.order)).value
    except ValueError as exc:
        raise ConfigError(str(exc), "dcea.order", _line_of(text, "order")) from None
    dcea = DceaSpec(
        order=order,
        alpha=_num(d.get("alpha", defaults.alpha), "dcea.alpha", text),
        beta=_num(d.get("beta", defaults.beta), "dcea.beta", text),
        h=_num(d.get("h", defaults.h), "dcea.h", text),
        kp=_floats(d.get("kp", defaults.kp), "dcea.kp", text),
        kd=_floats(d.get("kd", defaults.kd), "dcea.kd", text),
    )
    hz = _section(raw, "horizon", HorizonSpec, text)
    horizon = HorizonSpec(_num(hz.get("t_end", 50.0), "horizon.t_end", text),
                          _num(hz.get("dt"), "horizon.dt", text, allow_none=True))

    topo = raw.get("topology", PAPER)
    if topo != PAPER:
        if isinstance(topo, str):
            raise ConfigError(f"unknown topology preset {topo!r}", "topology",
                              _line_of(text, "topology"))
        topo = _floats(topo, "topology", text)

    sweep = raw.get("sweep")
    if sweep is not None:
        if not isinstance(sweep, dict) or set(sweep) != {"parameter", "values"}:
            raise ConfigError("sweep needs exactly 'parameter' and 'values'", "sweep",
                              _line_of(text, "sweep"))
        sweep = SweepSpec(sweep["parameter"], check_sweep_values(sweep["values"]))

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer", "seed", _line_of(text, "seed"))
    outputs = raw.get("outputs", "out")
    if not isinstance(outputs, str):
        raise ConfigError("outputs must be a path string", "outputs",
                          _line_of(text, "outputs"))

    sc = Scenario(
        name=raw["name"],
        topology=topo,
        robots=_normalize_json(raw.get("robots", PAPER)),
        target=_normalize_json(raw.get("target", PAPER)),
        disturbance=_normalize_json(raw.get("disturbance", PAPER)),
        dcea=dcea,
        horizon=horizon,
        init=_normalize_json(raw.get("init", {"kind": "random", "low": -25.0,
                                              "high": 25.0})),
        seed=seed,
        outputs=outputs,
        sweep=sweep,
    )
    return sc.validate()


def _normalize_json(value):
    """Ints become floats inside numeric payloads so round trips compare equal."""
    if isinstance(value, dict):
        return {k: _normalize_json(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_normalize_json(v) for v in value]
    if isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def parse_scenario(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    return scenario_from_dict(raw, text)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


# presets

def _paper(name, order, alpha, beta, h, t_end, sweep=None) -> Scenario:
    return Scenario(name=name, dcea=DceaSpec(order, alpha, beta, h),
                    horizon=HorizonSpec(t_end), sweep=sweep, outputs=name)


def _equilibrium() -> Scenario:
    return Scenario(
        name="equilibrium",
        target={"kind": "static", "position": [math.pi / 2, 0.0]},
        disturbance="none",
        dcea=DceaSpec("first", 0.9, 1.1, 0.1),
        horizon=HorizonSpec(10.0),
        init={"kind": "at-target"},
        outputs="equilibrium",
    )


PRESETS = {
    "example1-stable": lambda: _paper("example1-stable", "first", 0.9, 1.1, 0.1, 50.0),
    "example1-boundary": lambda: _paper("example1-boundary", "first", 1.17, 1.17, 0.1, 50.0),
    "example1-unstable": lambda: _paper("example1-unstable", "first", 1.18, 1.18, 0.1, 50.0),
    "example2-sweep": lambda: _paper("example2-sweep", "first", 0.9, 1.1, 0.1, 50.0,
                                     SweepSpec("h", [0.05, 0.1, 0.5])),
    "example3-sweep": lambda: _paper("example3-sweep", "second", 1.1, 0.9, 0.45, 400.0,
                                     SweepSpec("h", [0.1, 0.45, 0.5])),
    "equilibrium": _equilibrium,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
