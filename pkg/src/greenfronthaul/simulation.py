"""Wires topology, data plane, controllers and traffic into one seeded run."""

from __future__ import annotations

from dataclasses import dataclass, field

from .controlplane import (
    ControlMessage,
    ControlPlaneError,
    LitController,
    MsgKind,
    OltAgent,
    SdnController,
)
from .dataplane import CONTROL, DataPlane, FlowEntry, FlowStats, Packet, entries_for_path
from .engine import EventLog, Simulator, to_ns
from .scenario import Scenario
from .topology import NodeKind
from .traffic import CbrFlowSpec, FlowHandle, ProbeFlowSpec, start_cbr_flow, start_probe_flow

CONTROL_FLOW = "control"


@dataclass
class RunResult:
    scenario: Scenario
    log: EventLog
    stats: dict[str, FlowStats]
    in_flight: dict[str, int]
    network: "Network" = field(repr=False)

    def conservation(self) -> dict[str, bool]:
        out = {}
        for fid, st in self.stats.items():
            out[fid] = st.created == st.delivered + st.dropped + self.in_flight.get(fid, 0)
        return out

    @property
    def conservation_ok(self) -> bool:
        return all(self.conservation().values())


class Network:
    def __init__(self, scenario: Scenario):
        self.scenario = sc = scenario
        self.topology = topo = sc.topology
        self.sim = Simulator(sc.seed)
        self.dp = DataPlane(topo, self.sim, install_latency=sc.install_latency,
                            transition_time=sc.transition_time, tap_node=sc.tap,
                            packet_log=sc.packet_log)
        lit = topo.nodes_of_kind(NodeKind.LIT_CONTROLLER)[0]
        sdn = topo.nodes_of_kind(NodeKind.SDN_CONTROLLER)[0]
        l2sw = next(n for n in topo.neighbors(lit)
                    if topo.kind(n) == NodeKind.AGGREGATION_L2_SWITCH)
        self.lit_node, self.sdn_node, self.l2sw = lit, sdn, l2sw
        self.olt = OltAgent(topo, self.dp, lit)
        self.lit = LitController(topo, lit, sdn, l2sw, sc.lit_processing, self.sim.rng)
        self.sdn = SdnController(topo, sdn, sc.sdn_processing, self.sim.rng)
        self._ctrl_seq = 0
        self.flows: dict[str, FlowHandle] = {}
        self._provision()
        self.dp.handlers[lit] = self._lit_packet
        for lc in topo.nodes_of_kind(NodeKind.OLT_LINE_CARD):
            self.dp.handlers[lc] = self._olt_packet

    def _provision(self) -> None:
        topo = self.topology
        for v in topo.vlans:
            if v.status.value != "Active":
                continue
            for switch, entries in entries_for_path(v.hops, v.vlan_id, topo).items():
                for e in entries:
                    self.dp.tables[switch].install(e)
            if v.ue is not None:
                asw = topo.neighbors(v.ue)[0]
                if asw in self.dp.tables:
                    self.dp.tables[asw].install(FlowEntry(v.ue, v.vlan_id, v.hops[0]))
                    self.dp.tables[asw].install(FlowEntry(v.hops[0], v.vlan_id, v.ue))

    # -- message transport ----------------------------------------------------

    def dispatch(self, msgs: list[ControlMessage]) -> None:
        for m in msgs:
            if m.sent_at > self.sim.now:
                self.sim.at(m.sent_at, self._transmit, m)
            else:
                self._transmit(m)

    def _transmit(self, m: ControlMessage) -> None:
        sim = self.sim
        sim.record("ctrl", phase="send", **m.to_record())
        kind = m.kind
        if kind == MsgKind.OLT_NOTIFY:
            lc = self.olt._signal_lc(set(m.payload["devices"]))
            if lc is None:
                sim.record("reconfig_failed", episode=m.payload["episode"],
                           reason="no powered line card for in-band signaling")
                return
            m.sender = lc
            self._inband(lc, self.l2sw, m)
        elif kind == MsgKind.ACK and m.sender == self.lit_node and m.receiver != self.sdn_node:
            self._inband(self.lit_node, self.l2sw, m)
        elif kind == MsgKind.FLOW_MOD:
            sim.after(to_ns(self.scenario.flowmod_channel), self._flowmod_arrive, m)
        else:
            # LitController <-> SdnController, dedicated out-of-band link
            delay = self.scenario.controller_link.sample_ns(sim.rng)
            sim.after(delay, self._oob_arrive, m)

    def _inband(self, node: str, port: str, m: ControlMessage) -> None:
        self._ctrl_seq += 1
        pkt = self.dp.new_packet(CONTROL_FLOW, self._ctrl_seq, 0, self.scenario.control_size,
                                 CONTROL, node, m.receiver,
                                 {"msg": m.kind.value, "direction": m.payload.get("direction"),
                                  "episode": m.payload.get("episode"), "message": m})
        self.dp.send(node, port, pkt)

    def _recv(self, m: ControlMessage) -> None:
        self.sim.record("ctrl", phase="recv", **m.to_record())

    def _guard(self, fn, m: ControlMessage) -> None:
        try:
            self.dispatch(fn(m, self.sim.now))
        except ControlPlaneError as exc:
            self.sim.record("reconfig_failed", episode=m.payload.get("episode"),
                            reason=f"{type(exc).__name__}: {exc}")

    def _lit_packet(self, pkt: Packet, in_port: str) -> None:
        if pkt.kind != CONTROL:
            return
        m = pkt.payload["message"]
        self._recv(m)
        if m.kind == MsgKind.OLT_NOTIFY:
            self._guard(self.lit.lit_handle_notify, m)

    def _olt_packet(self, pkt: Packet, in_port: str) -> None:
        if pkt.kind != CONTROL:
            return
        m = pkt.payload["message"]
        self._recv(m)
        if m.kind == MsgKind.ACK:
            self._guard(self.olt.olt_handle_ack, m)

    def _oob_arrive(self, m: ControlMessage) -> None:
        self._recv(m)
        if m.receiver == self.sdn_node:
            if m.kind == MsgKind.TRIGGER:
                self._guard(self.sdn.sdn_handle_trigger, m)
            else:
                self._guard(self.sdn.sdn_handle_ack, m)
        elif m.kind == MsgKind.ACK:
            self._guard(self.lit.lit_handle_ack, m)

    def _flowmod_arrive(self, m: ControlMessage) -> None:
        self._recv(m)
        p = m.payload

        def acked():
            ack = ControlMessage(MsgKind.ACK, p["switch"], m.sender,
                                 {"episode": p["episode"], "of": "FlowMod", "switch": p["switch"]},
                                 self.sim.now)
            self.sim.after(to_ns(self.scenario.flowmod_channel), self._flowmod_ack, ack)

        try:
            self.dp.apply_flowmod(p["switch"], p["vlan"], p["entries"], on_done=acked)
        except Exception as exc:  # noqa: BLE001 - a failed install is logged, never fatal
            self.sim.record("reconfig_failed", episode=p["episode"], reason=str(exc))

    def _flowmod_ack(self, ack: ControlMessage) -> None:
        self._recv(ack)
        if ack.receiver == self.lit_node:
            self._guard(self.lit.lit_handle_ack, ack)
        else:
            self._guard(self.sdn.sdn_handle_ack, ack)

    # -- schedule ---------------------------------------------------------------

    def _command(self, action: str, onu: str, lc: str) -> None:
        now = self.sim.now
        self.sim.record("command", action=action, onu=onu, lc=lc)
        try:
            if action == "sleep":
                self.dispatch(self.olt.olt_handle_sleep(onu, lc, now))
            else:
                _, msgs = self.olt.olt_handle_wake(onu, lc, now)
                self.dispatch(msgs)
        except Exception as exc:  # noqa: BLE001 - keep the run alive, log the failure
            self.sim.record("command_failed", action=action, reason=f"{type(exc).__name__}: {exc}")

    def start(self) -> None:
        sc = self.scenario
        self.sim.record("run_start", name=sc.name, seed=sc.seed, t_end=to_ns(sc.t_end))
        for c in sc.commands():
            self.sim.at(to_ns(c.time), self._command, c.action, c.onu, c.lc)
        for spec in sc.flows:
            if isinstance(spec, ProbeFlowSpec):
                self.flows[spec.flow_id] = start_probe_flow(self.dp, spec, sc.t_end)
            elif isinstance(spec, CbrFlowSpec):
                self.flows[spec.flow_id] = start_cbr_flow(self.dp, spec, sc.t_end)

    def finish(self) -> RunResult:
        sim = self.sim
        in_flight = self.dp.in_flight()
        for fid in sorted(self.dp.stats):
            st = self.dp.stats[fid]
            sim.record("flow_summary", flow=fid, in_flight=in_flight.get(fid, 0), **st.to_dict())
        sim.record("run_end", events=sim.executed)
        return RunResult(self.scenario, sim.log, self.dp.stats, in_flight, self)


def run(scenario: Scenario) -> RunResult:
    """Execute one scenario to ``t_end``; equal scenarios give byte-identical logs."""
    net = Network(scenario)
    net.start()
    net.sim.run(to_ns(scenario.t_end))
    return net.finish()
