"""OLT agent, aggregation-node controller and aggregation-network controller.

Each actor consumes one message at a time and returns the messages it emits,
stamped with their send time. Delivery (in-band packets, out-of-band channel,
switch control channel) is the runtime's job; see ``simulation.Network``.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from .dataplane import DataPlane, FlowEntry, PowerLevel, entries_for_path
from .engine import RandomSpec
from .topology import NodeKind, Topology, VlanPath, VlanStatus

# nodes a rerouted VLAN may transit
_TRANSIT_KINDS = frozenset({NodeKind.ONU, NodeKind.OLT_LINE_CARD, NodeKind.TUNNEL_ENDPOINT,
                            NodeKind.AGGREGATION_L2_SWITCH, NodeKind.AGGREGATION_SWITCH})


class ControlPlaneError(Exception):
    pass


class NoPathAvailable(ControlPlaneError):
    pass


class UnknownDevice(ControlPlaneError):
    pass


class MsgKind(str, Enum):
    SLEEP_COMMAND = "SleepCommand"
    WAKE_COMMAND = "WakeCommand"
    OLT_NOTIFY = "OltNotify"
    FLOW_MOD = "FlowMod"
    TRIGGER = "Trigger"
    ACK = "Ack"


@dataclass
class ControlMessage:
    kind: MsgKind
    sender: str
    receiver: str
    payload: dict = field(default_factory=dict)
    sent_at: int = 0  # ns

    def to_record(self) -> dict:
        body = {}
        for k, v in self.payload.items():
            if k == "entries":
                v = [e.to_dict() for e in v]
            elif k == "paths":
                v = {str(vid): list(h) for vid, h in v.items()}
            elif isinstance(v, (set, frozenset, tuple)):
                v = sorted(v)
            body[k] = v
        return {"msg": self.kind.value, "src": self.sender, "dst": self.receiver, "body": body}


def _next_name(name: str) -> str:
    if len(name) >= 2 and name[-1].isalpha() and name[-2].isdigit():
        return name[:-1] + chr(ord(name[-1]) + 1)
    return name + "'"


def compute_reroute(topology: Topology, vlan_id: int, off_devices: Iterable[str],
                    current: VlanPath | None = None) -> VlanPath:
    """Minimum-hop path from a surviving access node to the VLAN's NF server.

    The current path is returned unchanged when it avoids ``off_devices``.
    Among equal-length candidates the lexicographically smallest label
    sequence wins.
    """
    off = set(off_devices)
    if current is None:
        current = topology.vlan(vlan_id)
    if not off.intersection(current.hops):
        return current
    dest = current.hops[-1]
    if dest in off:
        raise NoPathAvailable(f"VLAN {vlan_id}: NF server {dest} is off")

    def allowed(n: str) -> bool:
        return n not in off and (n == dest or topology.kind(n) in _TRANSIT_KINDS)

    dist = {dest: 0}
    frontier = deque([dest])
    while frontier:
        u = frontier.popleft()
        for v in topology.neighbors(u):
            if v not in dist and allowed(v):
                dist[v] = dist[u] + 1
                frontier.append(v)

    sources = [n for n in topology.nodes_of_kind(NodeKind.ONU) if n in dist]
    if not sources:
        raise NoPathAvailable(f"VLAN {vlan_id}: no surviving access node reaches {dest}")
    src = min(sources, key=lambda n: (dist[n], topology.label(n)))
    hops = [src]
    while hops[-1] != dest:
        d = dist[hops[-1]]
        hops.append(next(v for v in topology.neighbors(hops[-1]) if dist.get(v) == d - 1))
    return VlanPath(vlan_id, tuple(hops), VlanStatus.ACTIVE, _next_name(current.name), current.ue)


class PathRegistry:
    """One controller's view of declared and currently active VLAN paths."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.original = {v.vlan_id: v for v in topology.vlans if v.status == VlanStatus.ACTIVE}
        self.current = dict(self.original)
        self.superseded: list[VlanPath] = []

    def commit(self, path: VlanPath) -> None:
        old = self.current.get(path.vlan_id)
        if old is not None and old.hops != path.hops:
            self.superseded.append(VlanPath(old.vlan_id, old.hops, VlanStatus.SUPERSEDED,
                                            old.name, old.ue))
        self.current[path.vlan_id] = VlanPath(path.vlan_id, path.hops, VlanStatus.ACTIVE,
                                              path.name, path.ue)

    def target(self, vlan_id: int, direction: str, off: set[str]) -> VlanPath:
        if direction == "wake":
            orig = self.original[vlan_id]
            if not off.intersection(orig.hops):
                return orig
        return compute_reroute(self.topology, vlan_id, off, self.current[vlan_id])

    def topology_view(self) -> Topology:
        return self.topology.with_vlans(list(self.current.values()) + self.superseded)


class OltAgent:
    """OLT management agent: powers ONU/LC pairs and signals the LitController in-band."""

    def __init__(self, topology: Topology, dp: DataPlane, lit: str):
        self.topology = topology
        self.dp = dp
        self.lit = lit
        self.paths = PathRegistry(topology)
        self.episode = 0
        self.notify_port: dict[int, str] = {}
        self.held: dict[int, set[int]] = {}  # episode -> VLANs whose bearer is parked
        self.asw = topology.nodes_of_kind(NodeKind.ACCESS_SWITCH)

    def _signal_lc(self, devices: set[str]) -> str | None:
        lcs = [n for n in self.topology.nodes_of_kind(NodeKind.OLT_LINE_CARD)
               if n not in devices and self.dp.is_on(n)]
        return min(lcs, key=self.topology.label) if lcs else None

    def _notify(self, direction: str, devices: list[str], at: int, episode: int) -> ControlMessage:
        return ControlMessage(MsgKind.OLT_NOTIFY, "OLT", self.lit,
                              {"direction": direction, "devices": list(devices), "episode": episode},
                              at)

    def _park(self, vlans: set[int]) -> None:
        for vid in sorted(vlans):
            ue = self.paths.original[vid].ue
            if ue is not None:
                self.dp.pause(ue, self.topology.neighbors(ue)[0])

    def olt_handle_sleep(self, onu: str, lc: str, at: int) -> list[ControlMessage]:
        devices = [onu, lc]
        for d in devices:
            if d not in self.topology:
                raise UnknownDevice(d)
        levels = [self.dp.level(d, at) for d in devices]
        if all(lv == PowerLevel.OFF for lv in levels):
            self.dp.sim.record("warning", what="sleep on already-Off pair", devices=devices)
            return []
        for d in devices:
            self.dp.set_power(d, PowerLevel.OFF, at)
        self.episode += 1
        affected = {vid for vid, p in self.paths.current.items() if set(devices) & set(p.hops)}
        self.held[self.episode] = affected
        self._park(affected)
        return [self._notify("sleep", devices, at, self.episode)]

    def olt_handle_wake(self, onu: str, lc: str, at: int) -> tuple[int, list[ControlMessage]]:
        """Power the pair on; the notify is sent once both devices are On.

        Returns (notify send time, messages).
        """
        devices = [onu, lc]
        for d in devices:
            if d not in self.topology:
                raise UnknownDevice(d)
        if all(self.dp.level(d, at) == PowerLevel.ON for d in devices):
            self.dp.sim.record("warning", what="wake on already-On pair", devices=devices)
            return at, []
        done = max(self.dp.set_power(d, PowerLevel.ON, at) for d in devices)
        self.episode += 1
        affected = {vid for vid, p in self.paths.original.items()
                    if set(devices) & set(p.hops) and self.paths.current[vid].hops != p.hops}
        self.held[self.episode] = affected
        self._park(affected)
        return done, [self._notify("wake", devices, done, self.episode)]

    def olt_handle_ack(self, msg: ControlMessage, at: int) -> list[ControlMessage]:
        """Reconfiguration finished: re-home parked bearers onto their new access node."""
        episode = msg.payload["episode"]
        paths = msg.payload.get("paths", {})
        for vid, hops in sorted(paths.items()):
            old = self.paths.current[vid]
            self.paths.commit(VlanPath(vid, tuple(hops), VlanStatus.ACTIVE, old.name, old.ue))
        for vid in sorted(self.held.pop(episode, set()) | set(paths)):
            path = self.paths.current[vid]
            ue = path.ue
            if ue is None:
                continue
            for asw in self.asw:
                if self.topology.link_between(asw, ue) is None:
                    continue
                self.dp.tables[asw].replace_vlan(
                    vid, [FlowEntry(ue, vid, path.hops[0]), FlowEntry(path.hops[0], vid, ue)])
            self.dp.resume(ue, self.topology.neighbors(ue)[0])
        self.dp.sim.record("reconfig_done", episode=episode,
                           vlans=sorted(int(v) for v in paths))
        return []


class LitController:
    """Aggregation-node controller: owns the L2SW, forwards work to the SdnController."""

    def __init__(self, topology: Topology, node: str, sdn: str, l2sw: str,
                 processing_delay: RandomSpec, rng: random.Random):
        self.topology = topology
        self.node = node
        self.sdn = sdn
        self.l2sw = l2sw
        self.processing_delay = processing_delay
        self.rng = rng
        self.paths = PathRegistry(topology)
        self.known_device_states: dict[str, PowerLevel] = {
            n: PowerLevel.ON for n in topology.nodes_of_kind(NodeKind.ONU, NodeKind.OLT_LINE_CARD)
        }
        self.pending_reconfigs: set[int] = set()
        self._waiting: dict[int, dict] = {}  # episode -> outstanding acks + reply info

    @property
    def off_devices(self) -> set[str]:
        return {n for n, s in self.known_device_states.items() if s != PowerLevel.ON}

    def lit_handle_notify(self, msg: ControlMessage, at: int) -> list[ControlMessage]:
        if msg.kind != MsgKind.OLT_NOTIFY:
            raise ControlPlaneError(f"expected OltNotify, got {msg.kind}")
        devices = msg.payload["devices"]
        for d in devices:
            if d not in self.known_device_states:
                raise UnknownDevice(d)
        direction = msg.payload["direction"]
        state = PowerLevel.OFF if direction == "sleep" else PowerLevel.ON
        for d in devices:
            self.known_device_states[d] = state
        off = self.off_devices
        episode = msg.payload["episode"]
        send_at = at + self.processing_delay.sample_ns(self.rng)

        if direction == "sleep":
            vlans = sorted(v for v, p in self.paths.current.items() if set(devices) & set(p.hops))
        else:
            vlans = sorted(v for v, p in self.paths.original.items()
                           if set(devices) & set(p.hops) and self.paths.current[v].hops != p.hops)
        out = []
        flowmods = 0
        for vid in vlans:
            target = self.paths.target(vid, direction, off)
            self.pending_reconfigs.add(vid)
            new = entries_for_path(target.hops, vid, self.topology,
                                   kinds={NodeKind.AGGREGATION_L2_SWITCH}).get(self.l2sw, [])
            old = entries_for_path(self.paths.current[vid].hops, vid, self.topology,
                                   kinds={NodeKind.AGGREGATION_L2_SWITCH}).get(self.l2sw, [])
            self.paths.commit(target)
            if set(new) != set(old):
                flowmods += 1
                out.append(ControlMessage(MsgKind.FLOW_MOD, self.node, self.l2sw,
                                          {"switch": self.l2sw, "vlan": vid, "entries": new,
                                           "episode": episode}, send_at))
        self._waiting[episode] = {"flowmods": flowmods, "sdn": False, "vlans": vlans,
                                  "reply_to": msg.sender, "paths": {}}
        out.append(ControlMessage(MsgKind.TRIGGER, self.node, self.sdn,
                                  {"direction": direction, "devices": devices, "vlans": vlans,
                                   "off": sorted(off), "episode": episode}, send_at))
        return out

    def lit_handle_ack(self, msg: ControlMessage, at: int) -> list[ControlMessage]:
        """Collect FlowMod acks from the L2SW and the completion ack from the SdnController."""
        episode = msg.payload["episode"]
        w = self._waiting.get(episode)
        if w is None:
            return []
        if msg.sender == self.sdn:
            w["sdn"] = True
            w["paths"] = msg.payload.get("paths", {})
        else:
            w["flowmods"] -= 1
        if w["sdn"] and w["flowmods"] == 0:
            del self._waiting[episode]
            self.pending_reconfigs.difference_update(w["vlans"])
            return [ControlMessage(MsgKind.ACK, self.node, w["reply_to"],
                                   {"episode": episode, "vlans": w["vlans"], "paths": w["paths"]},
                                   at)]
        return []


class SdnController:
    """Aggregation-network controller: reroutes VLANs across s1..sN, NF side first."""

    def __init__(self, topology: Topology, node: str, processing_delay: RandomSpec,
                 rng: random.Random):
        self.topology = topology
        self.node = node
        self.processing_delay = processing_delay
        self.rng = rng
        self.paths = PathRegistry(topology)
        self.pending_reconfigs: set[int] = set()
        self._queues: dict[int, deque] = {}
        self._reply: dict[int, dict] = {}

    def plan(self, vlan_id: int, direction: str, off: set[str]) -> tuple[VlanPath, list[tuple]]:
        """New path and ordered (switch, entries) updates; installs NF side first, removals last."""
        old = self.paths.current[vlan_id]
        new = self.paths.target(vlan_id, direction, off)
        if new.hops == old.hops:
            return new, []
        kinds = {NodeKind.AGGREGATION_SWITCH}
        new_e = entries_for_path(new.hops, vlan_id, self.topology, kinds)
        old_e = entries_for_path(old.hops, vlan_id, self.topology, kinds)
        steps = []
        for node in reversed(new.hops):
            if node in new_e and set(new_e[node]) != set(old_e.get(node, [])):
                steps.append((node, new_e[node]))
        for node in reversed(old.hops):
            if node in old_e and node not in new_e:
                steps.append((node, []))
        return new, steps

    def sdn_handle_trigger(self, msg: ControlMessage, at: int) -> list[ControlMessage]:
        if msg.kind != MsgKind.TRIGGER:
            raise ControlPlaneError(f"expected Trigger, got {msg.kind}")
        send_at = at + self.processing_delay.sample_ns(self.rng)
        episode = msg.payload["episode"]
        off = set(msg.payload["off"])
        queue = deque()
        paths = {}
        for vid in msg.payload["vlans"]:
            new, steps = self.plan(vid, msg.payload["direction"], off)
            self.paths.commit(new)
            self.pending_reconfigs.add(vid)
            paths[vid] = new.hops
            for switch, entries in steps:
                queue.append(ControlMessage(MsgKind.FLOW_MOD, self.node, switch,
                                            {"switch": switch, "vlan": vid, "entries": entries,
                                             "episode": episode}, send_at))
        self._queues[episode] = queue
        self._reply[episode] = {"to": msg.sender, "vlans": list(msg.payload["vlans"]),
                                "paths": paths}
        return self._next(episode, send_at)

    def sdn_handle_ack(self, msg: ControlMessage, at: int) -> list[ControlMessage]:
        return self._next(msg.payload["episode"], at)

    def _next(self, episode: int, at: int) -> list[ControlMessage]:
        queue = self._queues.get(episode)
        if queue is None:
            return []
        if queue:
            fm = queue.popleft()
            fm.sent_at = at
            return [fm]
        del self._queues[episode]
        reply = self._reply.pop(episode)
        self.pending_reconfigs.difference_update(reply["vlans"])
        return [ControlMessage(MsgKind.ACK, self.node, reply["to"],
                               {"episode": episode, "vlans": reply["vlans"],
                                "paths": reply["paths"]}, at)]

