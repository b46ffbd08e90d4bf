"""Node/link graph of the fronthaul and its VLAN path declarations."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable


class NodeKind(str, Enum):
    UE_HOST = "UeHost"
    ACCESS_SWITCH = "AccessSwitch"
    ONU = "Onu"
    OLT_LINE_CARD = "OltLineCard"
    TUNNEL_ENDPOINT = "TunnelEndpoint"
    AGGREGATION_L2_SWITCH = "AggregationL2Switch"
    AGGREGATION_SWITCH = "AggregationSwitch"
    NF_SERVER = "NfServer"
    LIT_CONTROLLER = "LitController"
    SDN_CONTROLLER = "SdnController"


SWITCH_KINDS = frozenset(
    {NodeKind.ACCESS_SWITCH, NodeKind.AGGREGATION_L2_SWITCH, NodeKind.AGGREGATION_SWITCH}
)
# two-port devices that pass frames straight through
TRANSPARENT_KINDS = frozenset({NodeKind.ONU, NodeKind.OLT_LINE_CARD, NodeKind.TUNNEL_ENDPOINT})
POWER_MANAGED_KINDS = frozenset({NodeKind.ONU, NodeKind.OLT_LINE_CARD})
CONTROLLER_KINDS = frozenset({NodeKind.LIT_CONTROLLER, NodeKind.SDN_CONTROLLER})

DEFAULT_BUFFER_LIMIT = 262142


class TopologyError(Exception):
    pass


class MissingLink(TopologyError):
    def __init__(self, hop_index: int, a: str, b: str):
        super().__init__(f"no link joins hop {hop_index} ({a}) and hop {hop_index + 1} ({b})")
        self.hop_index = hop_index
        self.pair = (a, b)


class VlanStatus(str, Enum):
    ACTIVE = "Active"
    SUPERSEDED = "Superseded"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    label: str = ""

    def __post_init__(self):
        if not self.label:
            object.__setattr__(self, "label", self.id)


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    capacity: float  # bit/s
    propagation_delay: float = 0.0  # s
    buffer_limit: int = DEFAULT_BUFFER_LIMIT  # bytes, per direction
    out_of_band: bool = False

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    def other(self, node: str) -> str:
        if node == self.a:
            return self.b
        if node == self.b:
            return self.a
        raise KeyError(node)

    def joins(self, x: str, y: str) -> bool:
        return {x, y} == {self.a, self.b}


@dataclass(frozen=True)
class VlanPath:
    vlan_id: int
    hops: tuple[str, ...]
    status: VlanStatus = VlanStatus.ACTIVE
    name: str = ""
    ue: str | None = None  # host whose bearer rides this VLAN

    def __post_init__(self):
        object.__setattr__(self, "hops", tuple(self.hops))
        object.__setattr__(self, "status", VlanStatus(self.status))


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    vlans: tuple[VlanPath, ...] = ()
    _by_id: dict = field(init=False, repr=False, compare=False)
    _adj: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "vlans", tuple(self.vlans))
        by_id = {}
        for n in self.nodes:
            if n.id in by_id:
                raise TopologyError(f"duplicate node id {n.id!r}")
            by_id[n.id] = n
        adj: dict[str, dict[str, Link]] = {n.id: {} for n in self.nodes}
        for link in self.links:
            for end in link.endpoints:
                if end not in adj:
                    raise TopologyError(f"link {link.a}-{link.b} names unknown node {end!r}")
            # first declared link wins for parallel pairs; validate() reports the rest
            adj[link.a].setdefault(link.b, link)
            adj[link.b].setdefault(link.a, link)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_adj", adj)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._by_id

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise TopologyError(f"unknown node {node_id!r}") from None

    def kind(self, node_id: str) -> NodeKind:
        return self.node(node_id).kind

    def label(self, node_id: str) -> str:
        return self.node(node_id).label

    def nodes_of_kind(self, *kinds: NodeKind) -> list[str]:
        return [n.id for n in self.nodes if n.kind in kinds]

    def neighbors(self, node_id: str) -> list[str]:
        """Neighbours ordered by label, so every traversal is deterministic."""
        return sorted(self._adj[node_id], key=lambda n: (self._by_id[n].label, n))

    def link_between(self, a: str, b: str) -> Link | None:
        return self._adj.get(a, {}).get(b)

    def vlan(self, vlan_id: int, status: VlanStatus | None = VlanStatus.ACTIVE) -> VlanPath:
        for v in self.vlans:
            if v.vlan_id == vlan_id and (status is None or v.status == status):
                return v
        raise TopologyError(f"no VLAN {vlan_id} with status {status}")

    def with_vlans(self, vlans: Iterable[VlanPath]) -> "Topology":
        return replace(self, vlans=tuple(vlans))

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "kind": n.kind.value, "label": n.label} for n in self.nodes],
            "links": [
                {
                    "a": l.a,
                    "b": l.b,
                    "capacity": l.capacity,
                    "propagation_delay": l.propagation_delay,
                    "buffer_limit": l.buffer_limit,
                    "out_of_band": l.out_of_band,
                }
                for l in self.links
            ],
            "vlans": [
                {
                    "vlan_id": v.vlan_id,
                    "name": v.name,
                    "hops": list(v.hops),
                    "status": v.status.value,
                    "ue": v.ue,
                }
                for v in self.vlans
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        nodes = [Node(d["id"], NodeKind(d["kind"]), d.get("label", "")) for d in doc["nodes"]]
        links = [
            Link(
                d["a"],
                d["b"],
                float(d["capacity"]),
                float(d.get("propagation_delay", 0.0)),
                int(d.get("buffer_limit", DEFAULT_BUFFER_LIMIT)),
                bool(d.get("out_of_band", False)),
            )
            for d in doc["links"]
        ]
        vlans = [
            VlanPath(int(d["vlan_id"]), tuple(d["hops"]), VlanStatus(d.get("status", "Active")),
                     d.get("name", ""), d.get("ue"))
            for d in doc.get("vlans", [])
        ]
        return cls(nodes, links, vlans)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        # truthy when valid, mirrors "empty report iff valid"
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate(topology: Topology) -> ValidationReport:
    """Collect every invariant violation; never raises."""
    out: list[str] = []
    t = topology

    for kind in (NodeKind.LIT_CONTROLLER, NodeKind.SDN_CONTROLLER):
        count = len(t.nodes_of_kind(kind))
        if count != 1:
            out.append(f"expected exactly one {kind.value}, found {count}")

    seen_pairs = set()
    for link in t.links:
        name = f"link {link.a}-{link.b}"
        if link.a == link.b:
            out.append(f"{name}: endpoints not distinct")
        if not link.capacity > 0:
            out.append(f"{name}: capacity must be > 0")
        if not link.propagation_delay >= 0:
            out.append(f"{name}: propagation_delay must be >= 0")
        if not link.buffer_limit > 0:
            out.append(f"{name}: buffer_limit must be > 0")
        pair = frozenset(link.endpoints)
        if pair in seen_pairs:
            out.append(f"{name}: parallel link")
        seen_pairs.add(pair)

    for onu in t.nodes_of_kind(NodeKind.ONU):
        lcs = [n for n in t.neighbors(onu) if t.kind(n) == NodeKind.OLT_LINE_CARD]
        if len(lcs) != 1:
            out.append(f"{onu}: linked to {len(lcs)} OltLineCards, expected 1")

    for n in t.nodes_of_kind(*TRANSPARENT_KINDS):
        if len(t.neighbors(n)) > 2:
            out.append(f"{n}: pass-through device has more than two ports")

    for lit in t.nodes_of_kind(NodeKind.LIT_CONTROLLER):
        nbrs = t.neighbors(lit)
        if not any(t.kind(x) == NodeKind.AGGREGATION_L2_SWITCH for x in nbrs):
            out.append(f"{lit}: no in-band link to an AggregationL2Switch")
        for sdn in t.nodes_of_kind(NodeKind.SDN_CONTROLLER):
            link = t.link_between(lit, sdn)
            if link is None or not link.out_of_band:
                out.append(f"{lit}-{sdn}: controller channel must be an out-of-band link")

    for v in t.vlans:
        name = v.name or f"VLAN{v.vlan_id}"
        if not v.hops:
            out.append(f"{name}: empty hop list")
            continue
        unknown = [h for h in v.hops if h not in t]
        if unknown:
            out.append(f"{name}: unknown hops {unknown}")
            continue
        if t.kind(v.hops[0]) != NodeKind.ONU:
            out.append(f"{name}: first hop {v.hops[0]} is not an access node")
        if t.kind(v.hops[-1]) != NodeKind.NF_SERVER:
            out.append(f"{name}: last hop {v.hops[-1]} is not an NfServer")
        for i, (a, b) in enumerate(zip(v.hops, v.hops[1:])):
            if t.link_between(a, b) is None:
                out.append(f"{name}: hop pair ({a}, {b}) at index {i} lacks a link")
        if v.ue is not None and v.ue not in t:
            out.append(f"{name}: unknown bearer host {v.ue}")

    active = {}
    for v in t.vlans:
        if v.status == VlanStatus.ACTIVE:
            if v.vlan_id in active:
                out.append(f"VLAN {v.vlan_id}: more than one Active path")
            active[v.vlan_id] = v
    return ValidationReport(out)


def path_links(topology: Topology, path: VlanPath | Iterable[str]) -> list[Link]:
    hops = path.hops if isinstance(path, VlanPath) else tuple(path)
    links = []
    for i, (a, b) in enumerate(zip(hops, hops[1:])):
        link = topology.link_between(a, b) if a in topology else None
        if link is None:
            raise MissingLink(i, a, b)
        links.append(link)
    return links


def build_reference_topology(
    tunnel_delay: float = 0.0,
    pon_delay: float = 100e-6,
    aggregation_capacity: float = 1e9,
    aggregation_delay: float = 5e-6,
    buffer_limit: int = DEFAULT_BUFFER_LIMIT,
) -> Topology:
    """The two-ONU, two-line-card fronthaul with a three-switch aggregation mesh.

    Each GRE tunnel is folded into the LC-L2SW link (100 Mb/s). The PON hop
    is 1 Gb/s with 20 km of fiber by default.
    """
    K = NodeKind
    nodes = [
        Node("UE1", K.UE_HOST),
        Node("UE2", K.UE_HOST),
        Node("ASW", K.ACCESS_SWITCH),
        Node("ONU1", K.ONU),
        Node("ONU2", K.ONU),
        Node("LC1", K.OLT_LINE_CARD),
        Node("LC2", K.OLT_LINE_CARD),
        Node("L2SW", K.AGGREGATION_L2_SWITCH),
        Node("s1", K.AGGREGATION_SWITCH),
        Node("s2", K.AGGREGATION_SWITCH),
        Node("s3", K.AGGREGATION_SWITCH),
        Node("NF1", K.NF_SERVER),
        Node("NF2", K.NF_SERVER),
        Node("LIT", K.LIT_CONTROLLER, "LitSDNCtrler"),
        Node("SDN", K.SDN_CONTROLLER, "SDNCtrler"),
    ]
    gig, local = 1e9, 1e-6

    def mk(a, b, cap, delay, oob=False):
        return Link(a, b, cap, delay, buffer_limit, oob)

    links = [
        mk("UE1", "ASW", gig, local),
        mk("UE2", "ASW", gig, local),
        mk("ASW", "ONU1", gig, local),
        mk("ASW", "ONU2", gig, local),
        mk("ONU1", "LC1", gig, pon_delay),
        mk("ONU2", "LC2", gig, pon_delay),
        mk("LC1", "L2SW", 100e6, tunnel_delay),
        mk("LC2", "L2SW", 100e6, tunnel_delay),
        mk("L2SW", "s1", aggregation_capacity, aggregation_delay),
        mk("L2SW", "s2", aggregation_capacity, aggregation_delay),
        mk("s1", "s3", aggregation_capacity, aggregation_delay),
        mk("s2", "s3", aggregation_capacity, aggregation_delay),
        mk("s1", "NF1", gig, local),
        mk("s3", "NF2", gig, local),
        mk("L2SW", "LIT", gig, local),
        mk("LIT", "SDN", gig, local, oob=True),
    ]
    vlans = [
        VlanPath(1, ("ONU1", "LC1", "L2SW", "s1", "NF1"), name="VLAN1", ue="UE1"),
        VlanPath(2, ("ONU2", "LC2", "L2SW", "s2", "s3", "NF2"), name="VLAN2a", ue="UE2"),
    ]
    return Topology(nodes, links, vlans)


def load_topology(ref: str | dict | Path) -> Topology:
    """Resolve a topology reference: a bundled name, a JSON path, or an inline dict."""
    if isinstance(ref, dict):
        return Topology.from_dict(ref)
    ref = str(ref)
    if ref == "reference":
        text = resources.files("greenfronthaul.data").joinpath("reference_topology.json").read_text()
        return Topology.from_dict(json.loads(text))
    return Topology.from_dict(json.loads(Path(ref).read_text()))
