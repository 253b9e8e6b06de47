"""JSON scenario files: schema, parsing, canonical emission and the
embedded case fixtures."""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import jsonschema

from .control import ConverterConfig, FrtOverrides, Strategy
from .core import GridModel, PerUnitBase
from .errors import DomainError, GfmSatError, ScenarioError
from .network import EVENT_KINDS, NODE_ROLES, Branch, FaultEvent, NetworkModel, Node, Shunt
from .simulation import CHANNELS, EXTRA_CHANNELS, SOLVER_MODES, ScenarioSpec

FIXTURES = ("case1-single", "case2-three-converter", "case3-ieee9")

_COMPLEX = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        {
            "type": "object",
            "properties": {"mag": {"type": "number", "minimum": 0}, "angle": {"type": "number"}},
            "required": ["mag", "angle"],
            "additionalProperties": False,
        },
    ]
}

_CONVERTER_PARAMS = {
    "eta": {"type": "number", "minimum": 0},
    "alpha": {"type": "number", "minimum": 0},
    "varphi": {"type": "number", "minimum": 0, "maximum": math.pi / 2},
    "p_star": {"type": "number"},
    "q_star": {"type": "number"},
    "v_star": {"type": "number", "exclusiveMinimum": 0},
    "z_v": _COMPLEX,
    "i_lim": {"type": "number", "exclusiveMinimum": 0},
    "tau": {"type": "number", "exclusiveMinimum": 0},
    "v_sat": {"type": "number", "minimum": 0},
    "exit_hysteresis": {"type": "number", "minimum": 0, "maximum": 1},
    "min_dwell": {"type": "number", "minimum": 0},
    "rating": {"type": "number", "exclusiveMinimum": 0},
    "frt_overrides": {
        "oneOf": [
            {"type": "null"},
            {
                "type": "object",
                "properties": {"p_star": {"type": "number"}, "q_star": {"type": "number"}, "z_v": _COMPLEX},
                "additionalProperties": False,
            },
        ]
    },
}

_STRATEGIES = [s.value for s in Strategy]

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["network", "converters"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "metadata": {"type": "object"},
        "provenance": {"type": "object"},
        "base": {
            "type": "object",
            "properties": {
                "voltage": {"type": "number", "exclusiveMinimum": 0},
                "power": {"type": "number", "exclusiveMinimum": 0},
                "frequency_hz": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "grid": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["node"],
                    "properties": {
                        "node": {"type": "string"},
                        "v_g": {"type": "number", "minimum": 0},
                        "theta_g": {"type": "number"},
                        "frequency_hz": {"type": "number", "exclusiveMinimum": 0},
                    },
                    "additionalProperties": False,
                },
            ]
        },
        "network": {
            "type": "object",
            "required": ["nodes"],
            "additionalProperties": False,
            "properties": {
                "nodes": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["id"],
                        "properties": {"id": {"type": "string"}, "role": {"enum": list(NODE_ROLES)}},
                        "additionalProperties": False,
                    },
                },
                "branches": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "from", "to", "z"],
                        "properties": {
                            "id": {"type": "string"},
                            "from": {"type": "string"},
                            "to": {"type": "string"},
                            "z": _COMPLEX,
                        },
                        "additionalProperties": False,
                    },
                },
                "shunts": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "node", "y"],
                        "properties": {"id": {"type": "string"}, "node": {"type": "string"}, "y": _COMPLEX},
                        "additionalProperties": False,
                    },
                },
            },
        },
        "strategy": {"enum": _STRATEGIES},
        "converter_defaults": {
            "type": "object",
            "properties": _CONVERTER_PARAMS,
            "additionalProperties": False,
        },
        "converters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "node"],
                "properties": {
                    "id": {"type": "string"},
                    "node": {"type": "string"},
                    "strategy": {"enum": _STRATEGIES},
                    **_CONVERTER_PARAMS,
                },
                "additionalProperties": False,
            },
        },
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "time"],
                "properties": {
                    "kind": {"enum": list(EVENT_KINDS)},
                    "time": {"type": "number", "minimum": 0},
                    "location": {"type": ["string", "null"]},
                    "parameter": {"oneOf": [{"type": "null"}, _COMPLEX]},
                },
                "additionalProperties": False,
            },
        },
        "solver": {
            "type": "object",
            "properties": {
                "mode": {"enum": list(SOLVER_MODES)},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "settle_time": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "channels": {
                    "type": "array",
                    "items": {"enum": list(CHANNELS + EXTRA_CHANNELS)},
                    "uniqueItems": True,
                },
                "log_rate": {"type": "number", "exclusiveMinimum": 0},
            },
            "additionalProperties": False,
        },
        "expected": {
            "type": "object",
            "propertyNames": {"enum": _STRATEGIES},
            "additionalProperties": {"enum": ["STABLE", "UNSTABLE-ANGLE-DRIFT", "INCONCLUSIVE"]},
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)

_SOLVER_DEFAULTS = {"mode": "exact-limiter", "dt": 1e-4, "t_end": 6.0, "settle_time": 1.0}
_OUTPUT_DEFAULTS = {"channels": list(CHANNELS), "log_rate": 1000.0}
_BASE_DEFAULTS = {"voltage": 690.0, "power": 2.0e6, "frequency_hz": 50.0}
_CONVERTER_DEFAULTS = {
    f.name: f.default for f in fields(ConverterConfig)
    if f.name not in ("omega_base",)
}


@dataclass(frozen=True, eq=False)
class ScenarioFile:
    """A parsed scenario: the engine spec plus everything the file carries
    beyond it (base, ids, expected verdicts, metadata, applied defaults)."""

    spec: ScenarioSpec
    base: PerUnitBase
    converter_ids: tuple[str, ...]
    name: str = ""
    description: str = ""
    expected: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    defaults_applied: tuple[str, ...] = ()

    @property
    def provisional(self) -> bool:
        return bool(self.metadata.get("provisional", False))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def parse_complex(value, pointer: str = "") -> complex:
    if isinstance(value, bool):
        raise ScenarioError("expected a complex value", pointer)
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, dict) and set(value) == {"mag", "angle"}:
        return complex(value["mag"] * math.cos(value["angle"]), value["mag"] * math.sin(value["angle"]))
    raise ScenarioError("expected a number, [re, im] or {mag, angle}", pointer)


def emit_complex(z: complex) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def validate(doc: dict) -> None:
    """Raise :class:`ScenarioError` with a JSON pointer for the first
    (most relevant) schema violation."""
    err = jsonschema.exceptions.best_match(_VALIDATOR.iter_errors(doc))
    if err is not None:
        raise ScenarioError(err.message, _pointer(err.absolute_path))


def _converter_config(entry: dict, defaults: dict, ptr: str, applied: list[str]) -> ConverterConfig:
    kw = {}
    for name, default in _CONVERTER_DEFAULTS.items():
        if name in entry:
            val = entry[name]
        elif name in defaults:
            val = defaults[name]
        else:
            applied.append(f"{ptr}/{name}")
            val = default
        if name == "z_v" and val is not None:
            val = parse_complex(val, f"{ptr}/{name}")
        if name == "frt_overrides" and val is not None:
            z = val.get("z_v")
            val = FrtOverrides(val.get("p_star"), val.get("q_star"),
                               None if z is None else parse_complex(z, f"{ptr}/frt_overrides/z_v"))
        kw[name] = val
    return kw


def scenario_from_dict(doc: dict, source: str = "<dict>") -> ScenarioFile:
    validate(doc)
    applied: list[str] = []

    def section(key, defaults):
        given = doc.get(key) or {}
        out = {}
        for k, v in defaults.items():
            if k in given:
                out[k] = given[k]
            else:
                out[k] = v
                applied.append(f"/{key}/{k}")
        return out

    base_d = section("base", _BASE_DEFAULTS)
    solver = section("solver", _SOLVER_DEFAULTS)
    outputs = section("outputs", _OUTPUT_DEFAULTS)
    w_base = 2.0 * math.pi * base_d["frequency_hz"]
    base = PerUnitBase(base_d["voltage"], base_d["power"], w_base)

    net = doc["network"]
    try:
        nodes = [Node(n["id"], n.get("role", "junction")) for n in net["nodes"]]
        branches = [Branch(b["id"], b["from"], b["to"], parse_complex(b["z"], f"/network/branches/{i}/z"))
                    for i, b in enumerate(net.get("branches", []))]
        shunts = [Shunt(s["id"], s["node"], parse_complex(s["y"], f"/network/shunts/{i}/y"))
                  for i, s in enumerate(net.get("shunts", []))]
        network = NetworkModel(nodes, branches, shunts)
    except ScenarioError:
        raise
    except GfmSatError as exc:
        raise ScenarioError(str(exc), "/network") from exc
    node_ids = set(network.node_ids)

    grid_doc = doc.get("grid")
    grid = None
    grid_node = None
    if grid_doc is not None:
        grid_node = grid_doc["node"]
        if grid_node not in node_ids:
            raise ScenarioError(f"grid node {grid_node!r} is not in the network", "/grid/node")
        for k, v in (("v_g", 1.0), ("theta_g", 0.0), ("frequency_hz", base_d["frequency_hz"])):
            if k not in grid_doc:
                applied.append(f"/grid/{k}")
        w_g = 2.0 * math.pi * grid_doc.get("frequency_hz", base_d["frequency_hz"])
        grid = GridModel(grid_doc.get("v_g", 1.0), grid_doc.get("theta_g", 0.0), w_g, w_base)

    defaults = doc.get("converter_defaults", {})
    global_strategy = doc.get("strategy")
    if global_strategy is None:
        applied.append("/strategy")
        global_strategy = Strategy.SATURATION_INFORMED.value
    cfgs, strategies, terminals, ids = [], [], [], []
    for i, c in enumerate(doc["converters"]):
        ptr = f"/converters/{i}"
        if c["node"] not in node_ids:
            raise ScenarioError(f"converter {c['id']!r} sits on unknown node {c['node']!r}", f"{ptr}/node")
        kw = _converter_config(c, defaults, ptr, applied)
        try:
            cfgs.append(ConverterConfig(omega_base=w_base, **kw))
        except GfmSatError as exc:
            raise ScenarioError(str(exc), ptr) from exc
        strategies.append(c.get("strategy", global_strategy))
        terminals.append(c["node"])
        ids.append(c["id"])
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate converter ids", "/converters")

    branch_ids = {b.id for b in network.branches}
    events = []
    for i, e in enumerate(doc.get("events", [])):
        ptr = f"/events/{i}"
        kind, loc = e["kind"], e.get("location")
        par = e.get("parameter")
        if kind == "grid-voltage-step":
            if grid is None:
                raise ScenarioError("grid-voltage-step in an islanded scenario", ptr)
            if not isinstance(par, (int, float)) or isinstance(par, bool) or par < 0:
                raise ScenarioError("grid-voltage-step needs a nonnegative real parameter", f"{ptr}/parameter")
            par = float(par)
        elif kind in ("shunt-fault-apply", "shunt-fault-clear"):
            if loc not in node_ids:
                raise ScenarioError(f"event location {loc!r} is not a node", f"{ptr}/location")
            if par is not None:
                par = parse_complex(par, f"{ptr}/parameter")
        elif loc not in branch_ids:
            raise ScenarioError(f"event location {loc!r} is not a branch", f"{ptr}/location")
        events.append(FaultEvent(kind, float(e["time"]), loc, par))

    try:
        spec = ScenarioSpec(
            network=network,
            converters=tuple(cfgs),
            strategies=tuple(strategies),
            terminals=tuple(terminals),
            grid=grid,
            grid_node=grid_node,
            events=tuple(events),
            dt=float(solver["dt"]),
            t_end=float(solver["t_end"]),
            solver_mode=solver["mode"],
            log_rate=float(outputs["log_rate"]),
            outputs=tuple(outputs["channels"]),
            settle_time=float(solver["settle_time"]),
            name=doc.get("name", ""),
        )
    except DomainError as exc:
        raise ScenarioError(str(exc), "") from exc
    return ScenarioFile(spec, base, tuple(ids), doc.get("name", ""), doc.get("description", ""),
                        dict(doc.get("expected", {})), dict(doc.get("metadata", {})), tuple(applied))


def load_scenario(source) -> ScenarioFile:
    """Load a scenario from a path or from the name of an embedded fixture."""
    if isinstance(source, str) and source in FIXTURES:
        text = resources.files("gfmsat.cases").joinpath(f"{source}.json").read_text()
        where = source
    else:
        p = Path(source)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read {p}: {exc.strerror or exc}", "") from exc
        where = str(p)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{where}: invalid JSON ({exc.msg} at line {exc.lineno})", "") from exc
    return scenario_from_dict(doc, where)


def parse_scenario(source) -> ScenarioSpec:
    return load_scenario(source).spec


def _emit_event(e: FaultEvent) -> dict:
    out = {"kind": e.kind, "time": e.time, "location": e.location}
    if e.parameter is None:
        out["parameter"] = None
    elif e.kind == "grid-voltage-step":
        out["parameter"] = float(e.parameter)
    else:
        out["parameter"] = emit_complex(e.parameter)
    return out


def _emit_converter(cid: str, node: str, strategy: Strategy, c: ConverterConfig) -> dict:
    out = {"id": cid, "node": node, "strategy": strategy.value}
    for name in _CONVERTER_DEFAULTS:
        val = getattr(c, name)
        if name == "z_v":
            val = emit_complex(val)
        elif name == "frt_overrides" and val is not None:
            val = {"p_star": val.p_star, "q_star": val.q_star,
                   "z_v": None if val.z_v is None else emit_complex(val.z_v)}
            val = {k: v for k, v in val.items() if v is not None}
        out[name] = val
    return out


def scenario_to_dict(sf: ScenarioFile) -> dict:
    """Fully resolved canonical document; parsing it reproduces ``sf.spec``."""
    spec = sf.spec
    net = spec.network
    doc = {
        "name": sf.name,
        "description": sf.description,
        "metadata": copy.deepcopy(sf.metadata),
        "base": {"voltage": sf.base.voltage_base, "power": sf.base.power_base,
                 "frequency_hz": sf.base.frequency_base / (2.0 * math.pi)},
        "grid": None,
        "network": {
            "nodes": [{"id": n.id, "role": n.role} for n in net.nodes],
            "branches": [{"id": b.id, "from": b.from_node, "to": b.to_node, "z": emit_complex(b.z)}
                         for b in net.branches],
            "shunts": [{"id": s.id, "node": s.node, "y": emit_complex(s.y)} for s in net.shunts],
        },
        "converters": [_emit_converter(i, t, s, c) for i, t, s, c in
                       zip(sf.converter_ids, spec.terminals, spec.strategies, spec.converters)],
        "events": [_emit_event(e) for e in spec.events],
        "solver": {"mode": spec.solver_mode, "dt": spec.dt, "t_end": spec.t_end,
                   "settle_time": spec.settle_time},
        "outputs": {"channels": list(spec.outputs), "log_rate": spec.log_rate},
        "expected": dict(sf.expected),
        "provenance": {"defaults_applied": list(sf.defaults_applied)},
    }
    if spec.grid is not None:
        doc["grid"] = {"node": spec.grid_node, "v_g": spec.grid.v_g, "theta_g": spec.grid.theta_g,
                       "frequency_hz": spec.grid.omega_g / (2.0 * math.pi)}
    return doc


def dumps(doc: dict) -> str:
    """Canonical JSON text (sorted keys, fixed indentation)."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
