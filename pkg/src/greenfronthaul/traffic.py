"""Workload generators: 1 ms echo probes and constant-bit-rate UDP-like flows."""

from __future__ import annotations

from dataclasses import dataclass, field

from .dataplane import CBR, PROBE_REPLY, PROBE_REQUEST, DataPlane, Packet
from .engine import NS, to_ns

DEFAULT_OVERHEAD = 54  # bytes per CBR frame: Ethernet + IP + UDP + GRE
DEFAULT_PROBE_SIZE = 64


class UnknownNode(ValueError):
    pass


@dataclass(frozen=True)
class ProbeFlowSpec:
    src: str
    dst: str
    interval: float = 1e-3
    vlan_id: int = 2
    size: int = DEFAULT_PROBE_SIZE
    start: float = 0.0
    stop: float | None = None
    # optional (start, stop) activity windows in seconds; overrides start/stop
    windows: tuple[tuple[float, float], ...] = ()
    flow_id: str = ""
    # (before, after) around schedule commands that produced ``windows``
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.interval > 0:
            raise ValueError("probe interval must be > 0")
        if self.size <= 0:
            raise ValueError("probe size must be > 0")
        object.__setattr__(self, "windows", tuple(tuple(w) for w in self.windows))
        if not self.flow_id:
            object.__setattr__(self, "flow_id", f"probe:{self.src}>{self.dst}")


@dataclass(frozen=True)
class CbrFlowSpec:
    src: str
    dst: str
    payload_size: int = 1400
    offered_load: float = 20e6  # bit/s at payload level
    vlan_id: int = 2
    overhead: int = DEFAULT_OVERHEAD
    start: float = 0.0
    stop: float | None = None
    flow_id: str = ""

    def __post_init__(self):
        if self.payload_size <= 0:
            raise ValueError("payload_size must be > 0")
        if not self.offered_load > 0:
            raise ValueError("offered_load must be > 0")
        if self.overhead < 0:
            raise ValueError("overhead must be >= 0")
        if not self.flow_id:
            object.__setattr__(self, "flow_id", f"cbr:{self.src}>{self.dst}")

    @property
    def period(self) -> float:
        return self.payload_size * 8 / self.offered_load

    @property
    def wire_size(self) -> int:
        return self.payload_size + self.overhead

    @property
    def wire_load(self) -> float:
        return self.offered_load * self.wire_size / self.payload_size


def _check_endpoints(dp: DataPlane, src: str, dst: str) -> str:
    topo = dp.topology
    for n in (src, dst):
        if n not in topo:
            raise UnknownNode(f"unknown node {n!r}")
    if src == dst:
        raise UnknownNode(f"flow source and destination are both {src!r}")
    nbrs = topo.neighbors(src)
    if len(nbrs) != 1:
        raise UnknownNode(f"{src!r} must be a single-homed host")
    return nbrs[0]


def install_echo_responder(dp: DataPlane, node: str) -> None:
    """Make ``node`` answer every ProbeRequest with an immediate ProbeReply."""
    previous = dp.handlers.get(node)

    def handler(pkt: Packet, in_port: str) -> None:
        if pkt.kind == PROBE_REQUEST:
            reply = dp.new_packet(pkt.flow_id, pkt.seq, pkt.vlan_id, pkt.size, PROBE_REPLY,
                                  node, pkt.src)
            dp.send(node, in_port, reply)
        elif previous is not None:
            previous(pkt, in_port)

    dp.handlers[node] = handler


@dataclass
class FlowHandle:
    spec: object
    first_hop: str
    sent: int = 0
    departures: list[int] = field(default_factory=list)
    keep_departures: bool = False
    stopped: bool = False

    @property
    def flow_id(self) -> str:
        return self.spec.flow_id

    def stop(self) -> None:
        self.stopped = True


def start_probe_flow(dp: DataPlane, spec: ProbeFlowSpec, t_end: float | None = None) -> FlowHandle:
    first = _check_endpoints(dp, spec.src, spec.dst)
    install_echo_responder(dp, spec.dst)
    handle = FlowHandle(spec, first)
    step = to_ns(spec.interval)
    windows = spec.windows or ((spec.start, spec.stop if spec.stop is not None else t_end),)
    spans = []
    for lo, hi in windows:
        if hi is None:
            raise ValueError("probe flow needs a stop time")
        spans.append((to_ns(lo), to_ns(hi)))
    spans.sort()
    sim = dp.sim

    def emit(span_idx: int, k: int) -> None:
        if handle.stopped:
            return
        lo, hi = spans[span_idx]
        handle.sent += 1
        pkt = dp.new_packet(spec.flow_id, handle.sent, spec.vlan_id, spec.size, PROBE_REQUEST,
                            spec.src, spec.dst)
        dp.send(spec.src, first, pkt)
        nxt = lo + (k + 1) * step
        if nxt < hi:
            sim.at(nxt, emit, span_idx, k + 1)
        else:
            _arm(span_idx + 1)

    def _arm(span_idx: int) -> None:
        while span_idx < len(spans):
            lo, hi = spans[span_idx]
            lo = max(lo, sim.now)
            if lo < hi:
                spans[span_idx] = (lo, hi)
                sim.at(lo, emit, span_idx, 0)
                return
            span_idx += 1

    _arm(0)
    return handle


def start_cbr_flow(dp: DataPlane, spec: CbrFlowSpec, t_end: float | None = None,
                   keep_departures: bool = False) -> FlowHandle:
    """Emit ``payload_size`` packets at exactly ``payload_size*8/offered_load`` spacing."""
    first = _check_endpoints(dp, spec.src, spec.dst)
    handle = FlowHandle(spec, first, keep_departures=keep_departures)
    start = to_ns(spec.start)
    stop = spec.stop if spec.stop is not None else t_end
    stop_ns = to_ns(stop) if stop is not None else None
    bits = spec.payload_size * 8 * NS
    load = spec.offered_load
    size = spec.wire_size
    sim = dp.sim
    src, fid, vlan = spec.src, spec.flow_id, spec.vlan_id
    new_packet, send = dp.new_packet, dp.send

    def emit(k: int) -> None:
        if handle.stopped:
            return
        handle.sent += 1
        if handle.keep_departures:
            handle.departures.append(sim.now)
        send(src, first, new_packet(fid, handle.sent, vlan, size, CBR, src, spec.dst))
        nxt = start + round((k + 1) * bits / load)
        if stop_ns is None or nxt < stop_ns:
            sim.at(nxt, emit, k + 1)

    if stop_ns is None or start < stop_ns:
        sim.at(start, emit, 0)
    return handle
