"""Packet forwarding: flow tables, drop-tail egress queues, device power states."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from heapq import heappush
from typing import Callable, Iterable, NamedTuple

from .engine import NS, Simulator, to_ns
from .topology import (
    POWER_MANAGED_KINDS,
    SWITCH_KINDS,
    TRANSPARENT_KINDS,
    Link,
    NodeKind,
    Topology,
)

# packet kinds
PROBE_REQUEST = "ProbeRequest"
PROBE_REPLY = "ProbeReply"
CBR = "Cbr"
CONTROL = "Control"

# drop reasons
NO_MATCH = "NoMatch"
DEVICE_OFF = "DeviceOff"
BUFFER_FULL = "BufferFull"
NOT_FOR_ME = "NotForMe"
ACTION_DROP = "ActionDrop"

_PASS, _SWITCH, _ENDPOINT = 0, 1, 2


class DataplaneError(Exception):
    pass


class DeviceOff(DataplaneError):
    pass


class TransitionInProgress(DataplaneError):
    pass


class Packet:
    __slots__ = ("pid", "seq", "flow_id", "vlan_id", "size", "created_at", "kind",
                 "src", "dst", "payload", "hop_epoch")

    def __init__(self, pid, seq, flow_id, vlan_id, size, created_at, kind, src, dst, payload=None):
        if size <= 0:
            raise ValueError("packet size must be > 0")
        if created_at < 0:
            raise ValueError("created_at must be >= 0")
        self.pid = pid
        self.seq = seq
        self.flow_id = flow_id
        self.vlan_id = vlan_id
        self.size = size
        self.created_at = created_at  # ns
        self.kind = kind
        self.src = src
        self.dst = dst
        self.payload = payload
        self.hop_epoch = 0

    def __repr__(self):
        return f"Packet({self.kind} {self.flow_id}#{self.seq} vlan={self.vlan_id} {self.size}B)"


@dataclass(frozen=True)
class FlowEntry:
    """Match (ingress port, VLAN) -> output port, or drop when ``output`` is None.

    ``in_port=None`` matches any ingress port.
    """

    in_port: str | None
    vlan_id: int
    output: str | None
    priority: int = 100

    @property
    def match(self) -> tuple[str | None, int]:
        return (self.in_port, self.vlan_id)

    def to_dict(self) -> dict:
        return {"in_port": self.in_port, "vlan": self.vlan_id, "output": self.output,
                "priority": self.priority}


class FlowTable:
    def __init__(self):
        self._entries: dict[tuple, FlowEntry] = {}
        self._best: dict[tuple, FlowEntry] = {}

    def __len__(self):
        return len(self._entries)

    def entries(self) -> frozenset[FlowEntry]:
        return frozenset(self._entries.values())

    def install(self, entry: FlowEntry) -> None:
        self._entries[(entry.in_port, entry.vlan_id, entry.priority)] = entry
        self._reindex()

    def replace_vlan(self, vlan_id: int, entries: Iterable[FlowEntry]) -> None:
        """Drop every entry for ``vlan_id`` and install ``entries`` in its place."""
        self._entries = {k: e for k, e in self._entries.items() if e.vlan_id != vlan_id}
        for e in entries:
            if e.vlan_id != vlan_id:
                raise ValueError(f"entry {e} does not belong to VLAN {vlan_id}")
            self._entries[(e.in_port, e.vlan_id, e.priority)] = e
        self._reindex()

    def vlan_entries(self, vlan_id: int) -> list[FlowEntry]:
        return sorted((e for e in self._entries.values() if e.vlan_id == vlan_id),
                      key=lambda e: (e.in_port or "", e.priority))

    def _reindex(self):
        best: dict[tuple, FlowEntry] = {}
        for e in self._entries.values():
            cur = best.get(e.match)
            if cur is None or e.priority > cur.priority:
                best[e.match] = e
        self._best = best

    def lookup(self, in_port: str, vlan_id: int) -> FlowEntry | None:
        exact = self._best.get((in_port, vlan_id))
        wild = self._best.get((None, vlan_id))
        if exact is None:
            return wild
        if wild is None or exact.priority >= wild.priority:
            return exact
        return wild


class PowerLevel(str, Enum):
    ON = "On"
    OFF = "Off"
    TURNING_ON = "TurningOn"
    TURNING_OFF = "TurningOff"


@dataclass(frozen=True)
class PowerState:
    state: PowerLevel
    transition_remaining: float = 0.0  # s

    def __post_init__(self):
        steady = self.state in (PowerLevel.ON, PowerLevel.OFF)
        if steady != (self.transition_remaining == 0):
            raise ValueError("transition_remaining must be 0 iff the state is steady")


@dataclass
class _PowerTrack:
    before: PowerLevel = PowerLevel.ON
    target: PowerLevel = PowerLevel.ON
    start: int = 0
    end: int = 0
    epoch: int = 0  # bumped whenever the device leaves On

    def level(self, t: int) -> PowerLevel:
        if t < self.start:
            return self.before
        if t < self.end:
            return PowerLevel.TURNING_OFF if self.target == PowerLevel.OFF else PowerLevel.TURNING_ON
        return self.target


class Accepted(NamedTuple):
    departure: int  # ns, end of serialization
    arrival: int  # ns, at the far end of the link


class Dropped(NamedTuple):
    reason: str


@dataclass
class EgressQueue:
    link: Link
    src: str
    dst: str
    capacity: float
    prop_ns: int
    limit: int
    occupancy: int = 0
    busy_until: int = 0
    paused: bool = False
    fifo: deque = field(default_factory=deque)  # (finish_ns, size)
    held: list = field(default_factory=list)  # packets parked while paused
    max_occupancy: int = 0
    ser_cache: dict = field(default_factory=dict)

    def serialization_ns(self, size: int) -> int:
        return round(size * 8 * NS / self.capacity)

    def purge(self, now: int) -> None:
        fifo = self.fifo
        while fifo and fifo[0][0] <= now:
            self.occupancy -= fifo.popleft()[1]


def enqueue(queue: EgressQueue, packet: Packet, at: int) -> Accepted | Dropped:
    """Drop-tail admission; on acceptance returns departure and far-end arrival in ns."""
    queue.purge(at)
    size = packet.size
    if queue.occupancy + size > queue.limit:
        return Dropped(BUFFER_FULL)
    queue.occupancy += size
    if queue.occupancy > queue.max_occupancy:
        queue.max_occupancy = queue.occupancy
    if queue.paused:
        queue.held.append(packet)
        return Accepted(-1, -1)
    start = at if at > queue.busy_until else queue.busy_until
    finish = start + round(size * 8 * NS / queue.capacity)
    queue.busy_until = finish
    queue.fifo.append((finish, size))
    return Accepted(finish, finish + queue.prop_ns)


@dataclass
class FlowStats:
    created: int = 0
    delivered: int = 0
    dropped: int = 0
    delay_sum_ns: int = 0
    drops_by_reason: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"created": self.created, "delivered": self.delivered, "dropped": self.dropped,
                "delay_sum_ns": self.delay_sum_ns,
                "drops_by_reason": dict(sorted(self.drops_by_reason.items()))}


class DataPlane:
    """All data-plane state of one run, mutated only from simulator events."""

    def __init__(
        self,
        topology: Topology,
        sim: Simulator,
        install_latency: float = 50e-6,
        transition_time: float = 1e-3,
        tap_node: str | None = None,
        tap_kinds: Iterable[str] = (PROBE_REQUEST, PROBE_REPLY, CONTROL),
        packet_log: bool = False,
    ):
        self.topology = topology
        self.sim = sim
        self.install_latency_ns = to_ns(install_latency)
        self.transition_ns = to_ns(transition_time)
        self.tap_node = tap_node
        self.tap_kinds = frozenset(tap_kinds)
        self.packet_log = packet_log
        self.queues: dict[tuple[str, str], EgressQueue] = {}
        for link in topology.links:
            for a, b in ((link.a, link.b), (link.b, link.a)):
                self.queues[(a, b)] = EgressQueue(link, a, b, link.capacity,
                                                  to_ns(link.propagation_delay), link.buffer_limit)
        self.tables: dict[str, FlowTable] = {
            n: FlowTable() for n in topology.nodes_of_kind(*SWITCH_KINDS)
        }
        self.power: dict[str, _PowerTrack] = {}
        for n in topology.nodes:
            self.power[n.id] = _PowerTrack()
        self._kind = {n.id: n.kind for n in topology.nodes}
        self._role = {n.id: _PASS if n.kind in TRANSPARENT_KINDS
                      else _SWITCH if n.kind in SWITCH_KINDS else _ENDPOINT
                      for n in topology.nodes}
        # nodes On with no transition started or pending; others need a time check
        self._steady_on = set(self._kind)
        self._other_port = {}
        for n in topology.nodes_of_kind(*TRANSPARENT_KINDS):
            nbrs = topology.neighbors(n)
            if len(nbrs) == 2:
                self._other_port[(n, nbrs[0])] = nbrs[1]
                self._other_port[(n, nbrs[1])] = nbrs[0]
        self.handlers: dict[str, Callable[[Packet, str], None]] = {}
        self.stats: dict[str, FlowStats] = {}
        self._pid = 0
        self.on_power_change: list[Callable[[str, PowerLevel], None]] = []

    # -- power --------------------------------------------------------------

    def level(self, node: str, t: int | None = None) -> PowerLevel:
        return self.power[node].level(self.sim.now if t is None else t)

    def is_on(self, node: str, t: int | None = None) -> bool:
        return self.level(node, t) == PowerLevel.ON

    def power_state(self, node: str) -> PowerState:
        track = self.power[node]
        lvl = track.level(self.sim.now)
        remaining = 0.0 if lvl in (PowerLevel.ON, PowerLevel.OFF) else (track.end - self.sim.now) / NS
        return PowerState(lvl, remaining)

    def set_power(self, device: str, target: PowerLevel | str, at: int | None = None) -> int:
        """Start a power transition; returns the ns time the target state is reached."""
        target = PowerLevel(target)
        if target not in (PowerLevel.ON, PowerLevel.OFF):
            raise ValueError("target must be On or Off")
        if self._kind[device] not in POWER_MANAGED_KINDS:
            raise DataplaneError(f"{device} is not an ONU or OLT line card")
        at = self.sim.now if at is None else at
        track = self.power[device]
        if at < track.end:
            raise TransitionInProgress(f"{device} is mid-transition until {track.end} ns")
        current = track.level(at)
        if current == target:
            return at
        self._begin(device, current, target, at, at + self.transition_ns)
        return at + self.transition_ns

    def force_state(self, node: str, target: PowerLevel | str) -> None:
        """Set any node's power level instantly at the current time (no transition)."""
        target = PowerLevel(target)
        now = self.sim.now
        self._begin(node, self.power[node].level(now), target, now, now)

    def _begin(self, node, current, target, start, end):
        self._steady_on.discard(node)
        self.power[node] = _PowerTrack(current, target, start, end, self.power[node].epoch)
        if start == self.sim.now:
            self._leave(node, current, target)
        else:
            self.sim.at(start, self._leave, node, current, target)
        if end == start:
            if start == self.sim.now:
                self._reached(node, target)
            else:
                self.sim.at(end, self._reached, node, target)
        else:
            self.sim.at(end, self._reached, node, target)

    def _leave(self, node, current, target):
        if current == PowerLevel.ON:
            self.power[node].epoch += 1
        lvl = self.power[node].level(self.sim.now)
        self.sim.record("power", node=node, state=lvl.value)

    def _reached(self, node, target):
        if self.power[node].end != self.sim.now or self.power[node].target != target:
            return
        if target == PowerLevel.ON:
            self._steady_on.add(node)
        if self.power[node].start != self.power[node].end:
            self.sim.record("power", node=node, state=target.value)
        for cb in self.on_power_change:
            cb(node, target)

    # -- flow tables --------------------------------------------------------

    def _check_switch(self, switch: str, at: int):
        if switch not in self.tables:
            raise DataplaneError(f"{switch} is not a switch")
        if not self.is_on(switch, at):
            raise DeviceOff(f"{switch} is not On")

    def install_flow(self, switch: str, entry: FlowEntry, at: int | None = None,
                     latency: int | None = None) -> int:
        """Install one entry; returns the ns time it takes effect."""
        at = self.sim.now if at is None else at
        self._check_switch(switch, at)
        done = at + (self.install_latency_ns if latency is None else latency)
        if done == self.sim.now:
            self.tables[switch].install(entry)
        else:
            self.sim.at(done, self.tables[switch].install, entry)
        return done

    def apply_flowmod(self, switch: str, vlan_id: int, entries: Iterable[FlowEntry],
                      at: int | None = None, on_done: Callable[[], None] | None = None) -> int:
        """Replace the VLAN's entries on ``switch`` after the install latency."""
        at = self.sim.now if at is None else at
        self._check_switch(switch, at)
        entries = tuple(entries)
        done = at + self.install_latency_ns

        def apply():
            self.tables[switch].replace_vlan(vlan_id, entries)
            self.sim.record("flowmod", switch=switch, vlan=vlan_id, entries=len(entries))
            if on_done is not None:
                on_done()

        if done == self.sim.now:
            apply()
        else:
            self.sim.at(done, apply)
        return done

    def forward(self, switch: str, packet: Packet, ingress_port: str) -> tuple[str, str]:
        """Match-action decision: ``("output", port)`` or ``("drop", reason)``."""
        if not self.is_on(switch):
            return ("drop", DEVICE_OFF)
        if packet.kind == CONTROL and self.topology.link_between(switch, packet.dst) is not None:
            return ("output", packet.dst)
        entry = self.tables[switch].lookup(ingress_port, packet.vlan_id)
        if entry is None:
            return ("drop", NO_MATCH)
        if entry.output is None:
            return ("drop", ACTION_DROP)
        return ("output", entry.output)

    def snapshot_tables(self) -> dict[str, frozenset[FlowEntry]]:
        return {sw: t.entries() for sw, t in self.tables.items()}

    # -- packets ------------------------------------------------------------

    def new_packet(self, flow_id, seq, vlan_id, size, kind, src, dst, payload=None) -> Packet:
        self._pid += 1
        pkt = Packet(self._pid, seq, flow_id, vlan_id, size, self.sim.now, kind, src, dst, payload)
        st = self.stats.get(flow_id)
        if st is None:
            st = self.stats[flow_id] = FlowStats()
        st.created += 1
        if self.packet_log or kind != CBR:
            self.sim.record("create", pid=pkt.pid, flow=flow_id, seq=seq, kind=kind, node=src,
                            vlan=vlan_id, size=size)
        return pkt

    def send(self, node: str, port: str, pkt: Packet) -> bool:
        """Put ``pkt`` on the egress queue from ``node`` toward ``port``."""
        q = self.queues[(node, port)]
        sim = self.sim
        if q.paused:
            res = enqueue(q, pkt, sim.now)
            if res.__class__ is Dropped:
                self.drop(pkt, node, BUFFER_FULL)
                return False
            pkt.hop_epoch = self.power[node].epoch
            return True
        # inlined enqueue(): this is the hottest path of a run
        now = sim.now
        fifo = q.fifo
        occ = q.occupancy
        while fifo and fifo[0][0] <= now:
            occ -= fifo.popleft()[1]
        size = pkt.size
        if occ + size > q.limit:
            q.occupancy = occ
            self.drop(pkt, node, BUFFER_FULL)
            return False
        occ += size
        q.occupancy = occ
        if occ > q.max_occupancy:
            q.max_occupancy = occ
        ser = q.ser_cache.get(size)
        if ser is None:
            ser = q.ser_cache[size] = q.serialization_ns(size)
        busy = q.busy_until
        finish = (busy if busy > now else now) + ser
        q.busy_until = finish
        fifo.append((finish, size))
        pkt.hop_epoch = self.power[node].epoch
        if self.packet_log:
            sim.record("enqueue", pid=pkt.pid, flow=pkt.flow_id, node=node, port=port)
        seq = sim._seq
        sim._seq = seq + 1
        heappush(sim._queue, (finish + q.prop_ns, seq, self._arrive, (pkt, port, node)))
        return True

    def pause(self, node: str, port: str) -> None:
        self.queues[(node, port)].paused = True

    def resume(self, node: str, port: str) -> None:
        q = self.queues[(node, port)]
        if not q.paused:
            return
        q.paused = False
        held, q.held = q.held, []
        now = self.sim.now
        # held bytes were counted at admission; re-admit them as transmissions
        q.occupancy -= sum(p.size for p in held)
        for pkt in held:
            res = enqueue(q, pkt, now)
            pkt.hop_epoch = self.power[node].epoch
            self.sim.at(res.arrival, self._arrive, pkt, port, node)

    def drop(self, pkt: Packet, node: str, reason: str) -> None:
        st = self.stats[pkt.flow_id]
        st.dropped += 1
        st.drops_by_reason[reason] = st.drops_by_reason.get(reason, 0) + 1
        if self.packet_log or pkt.kind != CBR:
            self.sim.record("drop", pid=pkt.pid, flow=pkt.flow_id, seq=pkt.seq, kind=pkt.kind,
                            node=node, reason=reason)

    def deliver(self, pkt: Packet, node: str) -> None:
        st = self.stats[pkt.flow_id]
        st.delivered += 1
        delay = self.sim.now - pkt.created_at
        st.delay_sum_ns += delay
        if self.packet_log or pkt.kind != CBR:
            self.sim.record("deliver", pid=pkt.pid, flow=pkt.flow_id, seq=pkt.seq, kind=pkt.kind,
                            node=node, delay=delay)

    def _arrive(self, pkt: Packet, node: str, in_port: str) -> None:
        power = self.power
        if power[in_port].epoch != pkt.hop_epoch:
            # sender left On while this packet was queued or on the wire
            self.drop(pkt, node, DEVICE_OFF)
            return
        if node not in self._steady_on and power[node].level(self.sim.now) != PowerLevel.ON:
            self.drop(pkt, node, DEVICE_OFF)
            return
        if node == self.tap_node and pkt.kind in self.tap_kinds:
            self._tap(pkt, node, in_port)
        if pkt.dst == node:
            handler = self.handlers.get(node)
            self.deliver(pkt, node)
            if handler is not None:
                handler(pkt, in_port)
            return
        role = self._role[node]
        if role == _PASS:
            out = self._other_port.get((node, in_port))
            if out is None:
                self.drop(pkt, node, NO_MATCH)
                return
            self.send(node, out, pkt)
        elif role == _SWITCH:
            if pkt.kind == CONTROL:
                verdict, out = self.forward(node, pkt, in_port)
                if verdict == "drop":
                    self.drop(pkt, node, out)
                    return
                self.send(node, out, pkt)
                return
            entry = self.tables[node].lookup(in_port, pkt.vlan_id)
            if entry is None:
                self.drop(pkt, node, NO_MATCH)
            elif entry.output is None:
                self.drop(pkt, node, ACTION_DROP)
            else:
                self.send(node, entry.output, pkt)
        else:
            self.drop(pkt, node, NOT_FOR_ME)

    def _tap(self, pkt: Packet, node: str, in_port: str) -> None:
        if pkt.kind == CONTROL:
            p = pkt.payload
            self.sim.record("tap", node=node, kind=pkt.kind, flow=pkt.flow_id, seq=pkt.seq,
                            vlan=pkt.vlan_id, port=in_port, ctrl=p.get("msg"),
                            direction=p.get("direction"), episode=p.get("episode"))
        else:
            self.sim.record("tap", node=node, kind=pkt.kind, flow=pkt.flow_id, seq=pkt.seq,
                            vlan=pkt.vlan_id, port=in_port)

    def in_flight(self) -> dict[str, int]:
        """Packets on wires or parked in queues, per flow."""
        out: dict[str, int] = {}
        for _, _, fn, args in self.sim.pending():
            if getattr(fn, "__func__", None) is DataPlane._arrive and fn.__self__ is self:
                fid = args[0].flow_id
                out[fid] = out.get(fid, 0) + 1
        for q in self.queues.values():
            for p in q.held:
                out[p.flow_id] = out.get(p.flow_id, 0) + 1
        return out


def entries_for_path(hops: list[str] | tuple[str, ...], vlan_id: int, topology: Topology,
                     kinds=SWITCH_KINDS) -> dict[str, list[FlowEntry]]:
    """Bidirectional per-switch entries that carry ``vlan_id`` along ``hops``."""
    out: dict[str, list[FlowEntry]] = {}
    for i in range(1, len(hops) - 1):
        node = hops[i]
        if topology.kind(node) not in kinds:
            continue
        prev, nxt = hops[i - 1], hops[i + 1]
        out[node] = [FlowEntry(prev, vlan_id, nxt), FlowEntry(nxt, vlan_id, prev)]
    return out


PACKET_EVENTS = ("create", "enqueue", "drop", "deliver")
PACKET_LOG_COLUMNS = ["t_s", "ev", "pid", "flow", "seq", "kind", "node", "port", "reason",
                      "delay_s"]


def write_packet_log_csv(records: Iterable[dict], path) -> int:
    """Stream the packet events of a run log to CSV; returns the row count."""
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PACKET_LOG_COLUMNS)
        for r in records:
            if r["ev"] not in PACKET_EVENTS:
                continue
            delay = r.get("delay")
            w.writerow([f"{r['t'] / NS:.9f}", r["ev"], r.get("pid", ""), r.get("flow", ""),
                        r.get("seq", ""), r.get("kind", ""), r.get("node", ""), r.get("port", ""),
                        r.get("reason", ""), "" if delay is None else f"{delay / NS:.9f}"])
            n += 1
    return n
