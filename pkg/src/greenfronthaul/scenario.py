"""Scenario documents: schema, validation and the resolved run configuration."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .energy import PowerModel
from .engine import RandomSpec
from .topology import NodeKind, Topology, load_topology, validate
from .traffic import CbrFlowSpec, ProbeFlowSpec

SCHEMA_VERSION = "greenfronthaul/scenario-1"


class ScenarioError(ValueError):
    """Parse or validation failure; ``location`` names the offending field."""

    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


_RV = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dist": {"enum": ["fixed", "uniform"]},
        "value": {"type": "number", "minimum": 0},
        "low": {"type": "number", "minimum": 0},
        "high": {"type": "number", "minimum": 0},
    },
    "required": ["dist"],
}
_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PAIR = {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "name", "t_end"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "seed": {"type": "integer"},
        "t_end": _POS,
        "topology": {"anyOf": [{"type": "string"}, {"type": "object"}]},
        "flows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["type", "src", "dst"],
                "additionalProperties": False,
                "properties": {
                    "type": {"enum": ["probe", "cbr"]},
                    "id": {"type": "string"},
                    "src": {"type": "string"},
                    "dst": {"type": "string"},
                    "vlan": {"type": "integer"},
                    "interval": _POS,
                    "size": {"type": "integer", "exclusiveMinimum": 0},
                    "payload_size": {"type": "integer", "exclusiveMinimum": 0},
                    "offered_load": _POS,
                    "start": _NONNEG,
                    "stop": _NONNEG,
                    "window": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {"before": _NONNEG, "after": _POS},
                        "required": ["before", "after"],
                    },
                },
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["mode"],
            "properties": {
                "mode": {"enum": ["none", "daynight", "periodic"]},
                "pair": _PAIR,
                "n_cycles": {"type": "integer", "minimum": 0},
                "period": _POS,
                "off_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "t_rec": _NONNEG,
                "cycle": _POS,
                "phase": _NONNEG,
            },
        },
        "latency": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lit_processing": _RV,
                "sdn_processing": _RV,
                "controller_link": _RV,
                "flowmod_channel": _NONNEG,
                "install": _NONNEG,
                "transition": _NONNEG,
            },
        },
        "dataplane": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "overhead": {"type": "integer", "minimum": 0},
                "control_size": {"type": "integer", "exclusiveMinimum": 0},
                "tap": {"type": "string"},
                "packet_log": {"type": "boolean"},
            },
        },
        "power": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _NONNEG for k in ("p_olt_on", "p_olt_off", "p_onu_on", "p_onu_off")},
        },
        "metrics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bin_width": _POS,
                "measured_flow": {"type": "string"},
                "probe_flow": {"type": "string"},
                "vlan": {"type": "integer"},
            },
        },
    },
}


@dataclass(frozen=True)
class Command:
    time: float
    action: str  # "sleep" | "wake"
    onu: str
    lc: str


@dataclass
class Scenario:
    name: str
    topology: Topology
    t_end: float
    seed: int = 1
    flows: list = field(default_factory=list)
    schedule: dict = field(default_factory=lambda: {"mode": "none"})
    lit_processing: RandomSpec = RandomSpec.uniform(6e-3, 36e-3)
    sdn_processing: RandomSpec = RandomSpec.uniform(6e-3, 36e-3)
    controller_link: RandomSpec = RandomSpec.fixed(1e-3)
    flowmod_channel: float = 100e-6
    install_latency: float = 50e-6
    transition_time: float = 1e-3
    overhead: int = 54
    control_size: int = 128
    tap: str = "L2SW"
    packet_log: bool = False
    power: PowerModel = PowerModel()
    bin_width: float = 10e-3
    measured_flow: str | None = None
    probe_flow: str | None = None
    vlan: int = 2
    topology_ref: object = "reference"
    description: str = ""

    def commands(self) -> list[Command]:
        return schedule_commands(self.schedule, self.t_end)

    @property
    def tunnel_delay(self) -> float:
        """Largest one-way LC-to-L2SW link delay; excluded from reconfiguration times."""
        t = self.topology
        delays = [l.propagation_delay for l in t.links
                  if {t.kind(l.a), t.kind(l.b)} == {NodeKind.OLT_LINE_CARD,
                                                    NodeKind.AGGREGATION_L2_SWITCH}]
        return max(delays, default=0.0)

    def to_dict(self) -> dict:
        """Fully resolved document; loading it back reproduces the run exactly."""
        flows = []
        for f in self.flows:
            if isinstance(f, ProbeFlowSpec):
                d = {"type": "probe", "id": f.flow_id, "src": f.src, "dst": f.dst,
                     "vlan": f.vlan_id, "interval": f.interval, "size": f.size, "start": f.start}
                if f.stop is not None:
                    d["stop"] = f.stop
                if f.window is not None:
                    d["window"] = {"before": f.window[0], "after": f.window[1]}
                elif f.windows:
                    raise ValueError("explicit probe windows cannot be serialized")
            else:
                d = {"type": "cbr", "id": f.flow_id, "src": f.src, "dst": f.dst,
                     "vlan": f.vlan_id, "payload_size": f.payload_size,
                     "offered_load": f.offered_load, "start": f.start}
                if f.stop is not None:
                    d["stop"] = f.stop
            flows.append(d)
        metrics = {"bin_width": self.bin_width, "vlan": self.vlan}
        if self.measured_flow:
            metrics["measured_flow"] = self.measured_flow
        if self.probe_flow:
            metrics["probe_flow"] = self.probe_flow
        doc = {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "t_end": self.t_end,
            "topology": self.topology.to_dict(),
            "flows": flows,
            "schedule": dict(self.schedule),
            "latency": {
                "lit_processing": self.lit_processing.to_dict(),
                "sdn_processing": self.sdn_processing.to_dict(),
                "controller_link": self.controller_link.to_dict(),
                "flowmod_channel": self.flowmod_channel,
                "install": self.install_latency,
                "transition": self.transition_time,
            },
            "dataplane": {"overhead": self.overhead, "control_size": self.control_size,
                          "tap": self.tap, "packet_log": self.packet_log},
            "power": {"p_olt_on": self.power.p_olt_on, "p_olt_off": self.power.p_olt_off,
                      "p_onu_on": self.power.p_onu_on, "p_onu_off": self.power.p_onu_off},
            "metrics": metrics,
        }
        if self.description:
            doc["description"] = self.description
        return doc


def schedule_commands(schedule: dict, t_end: float) -> list[Command]:
    mode = schedule.get("mode", "none")
    if mode == "none":
        return []
    onu, lc = schedule.get("pair", ["ONU2", "LC2"])
    phase = schedule.get("phase", 0.0)
    out = []
    if mode == "daynight":
        period = schedule["period"]
        off = schedule.get("off_fraction", 0.25) * period
        for k in range(schedule["n_cycles"]):
            base = k * period + phase
            out.append(Command(base, "sleep", onu, lc))
            if base + off < t_end:
                out.append(Command(base + off, "wake", onu, lc))
    elif mode == "periodic":
        t_rec = schedule["t_rec"]
        cycle = schedule["cycle"]
        if t_rec == 0:
            return []
        k = 0
        while k * cycle + phase < t_end:
            base = k * cycle + phase
            out.append(Command(base, "sleep", onu, lc))
            if base + t_rec < t_end:
                out.append(Command(base + t_rec, "wake", onu, lc))
            k += 1
    return [c for c in out if c.time < t_end]


def _loc(err: jsonschema.ValidationError) -> str:
    parts = []
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else (("." if parts else "") + str(p)))
    return "".join(parts) or "<root>"


def parse_scenario(doc: dict, source: str = "<scenario>") -> Scenario:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ScenarioError(f"{source}:{_loc(e)}", e.message)

    topo_ref = doc.get("topology", "reference")
    try:
        topology = load_topology(topo_ref)
    except Exception as exc:  # noqa: BLE001 - any load failure is a validation failure
        raise ScenarioError(f"{source}:topology", str(exc)) from exc
    report = validate(topology)
    if not report:
        raise ScenarioError(f"{source}:topology", "; ".join(report.violations))

    def node(loc: str, name: str) -> str:
        if name not in topology:
            raise ScenarioError(f"{source}:{loc}", f"unknown node {name!r}")
        return name

    t_end = float(doc["t_end"])
    dp = doc.get("dataplane", {})
    overhead = int(dp.get("overhead", 54))
    sched = dict(doc.get("schedule", {"mode": "none"}))
    if sched["mode"] != "none":
        pair = sched.setdefault("pair", ["ONU2", "LC2"])
        node("schedule.pair[0]", pair[0])
        node("schedule.pair[1]", pair[1])
        if topology.kind(pair[0]) != NodeKind.ONU or topology.kind(pair[1]) != NodeKind.OLT_LINE_CARD:
            raise ScenarioError(f"{source}:schedule.pair", "pair must be (Onu, OltLineCard)")
        sched.setdefault("phase", 0.0005)
    if sched["mode"] == "daynight":
        for k in ("n_cycles", "period"):
            if k not in sched:
                raise ScenarioError(f"{source}:schedule.{k}", "required for daynight mode")
        sched.setdefault("off_fraction", 0.25)
        if sched["n_cycles"] * sched["period"] > t_end + 1e-9:
            raise ScenarioError(f"{source}:schedule", "n_cycles * period exceeds t_end")
    if sched["mode"] == "periodic":
        for k in ("t_rec", "cycle"):
            if k not in sched:
                raise ScenarioError(f"{source}:schedule.{k}", "required for periodic mode")
        if sched["t_rec"] >= sched["cycle"]:
            raise ScenarioError(f"{source}:schedule.t_rec", "t_rec must be shorter than cycle")
    commands = schedule_commands(sched, t_end)

    flows = []
    for i, f in enumerate(doc.get("flows", [])):
        loc = f"flows[{i}]"
        src = node(f"{loc}.src", f["src"])
        dst = node(f"{loc}.dst", f["dst"])
        if src == dst:
            raise ScenarioError(f"{source}:{loc}", "src and dst must differ")
        try:
            if f["type"] == "probe":
                windows = ()
                if "window" in f:
                    w = f["window"]
                    windows = tuple((max(0.0, c.time - w["before"]), min(t_end, c.time + w["after"]))
                                    for c in commands)
                spec = ProbeFlowSpec(src, dst, f.get("interval", 1e-3), f.get("vlan", 2),
                                     f.get("size", 64), f.get("start", 0.0), f.get("stop"),
                                     windows, f.get("id", ""),
                                     (f["window"]["before"], f["window"]["after"])
                                     if "window" in f else None)
            else:
                spec = CbrFlowSpec(src, dst, f.get("payload_size", 1400),
                                   f.get("offered_load", 20e6), f.get("vlan", 2), overhead,
                                   f.get("start", 0.0), f.get("stop"), f.get("id", ""))
        except ValueError as exc:
            raise ScenarioError(f"{source}:{loc}", str(exc)) from exc
        flows.append(spec)
    ids = [f.flow_id for f in flows]
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"{source}:flows", "duplicate flow ids")

    lat = doc.get("latency", {})
    defaults = Scenario("", topology, 1.0)
    try:
        rvs = {k: RandomSpec.from_dict(lat[k]) if k in lat else getattr(defaults, k)
               for k in ("lit_processing", "sdn_processing", "controller_link")}
        power = PowerModel(**doc.get("power", {}))
    except (ValueError, KeyError) as exc:
        raise ScenarioError(f"{source}:latency/power", str(exc)) from exc

    met = doc.get("metrics", {})
    for key in ("measured_flow", "probe_flow"):
        if key in met and met[key] not in ids:
            raise ScenarioError(f"{source}:metrics.{key}", f"unknown flow {met[key]!r}")
    tap = dp.get("tap", "L2SW")
    node("dataplane.tap", tap)

    return Scenario(
        name=doc["name"],
        topology=topology,
        t_end=t_end,
        seed=int(doc.get("seed", 1)),
        flows=flows,
        schedule=sched,
        lit_processing=rvs["lit_processing"],
        sdn_processing=rvs["sdn_processing"],
        controller_link=rvs["controller_link"],
        flowmod_channel=float(lat.get("flowmod_channel", defaults.flowmod_channel)),
        install_latency=float(lat.get("install", defaults.install_latency)),
        transition_time=float(lat.get("transition", defaults.transition_time)),
        overhead=overhead,
        control_size=int(dp.get("control_size", defaults.control_size)),
        tap=tap,
        packet_log=bool(dp.get("packet_log", False)),
        power=power,
        bin_width=float(met.get("bin_width", defaults.bin_width)),
        measured_flow=met.get("measured_flow"),
        probe_flow=met.get("probe_flow"),
        vlan=int(met.get("vlan", 2)),
        topology_ref=topo_ref,
        description=doc.get("description", ""),
    )


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario file, or a bundled one by name (e.g. ``daynight``)."""
    path = Path(ref)
    if not path.exists():
        name = str(ref)
        if not name.endswith(".json"):
            name = name if name.endswith(".scenario") else name + ".scenario"
            name += ".json"
        bundled = resources.files("greenfronthaul.data").joinpath(name)
        if not bundled.is_file():
            raise ScenarioError(str(ref), "no such scenario file or bundled scenario")
        text, source = bundled.read_text(), name
    else:
        text, source = path.read_text(encoding="utf-8"), str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    return parse_scenario(doc, source)


def with_overrides(doc: dict, **changes) -> dict:
    out = copy.deepcopy(doc)
    out.update(changes)
    return out
