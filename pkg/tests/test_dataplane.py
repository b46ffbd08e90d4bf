import csv

import pytest
from hypothesis import given, settings, strategies as st

from greenfronthaul.dataplane import (
    BUFFER_FULL,
    CBR,
    DEVICE_OFF,
    NO_MATCH,
    PROBE_REQUEST,
    Accepted,
    DataPlane,
    DeviceOff,
    Dropped,
    EgressQueue,
    FlowEntry,
    FlowTable,
    PowerLevel,
    TransitionInProgress,
    enqueue,
    entries_for_path,
    write_packet_log_csv,
)
from greenfronthaul.engine import NS, Simulator
from greenfronthaul.topology import Link, path_links


def provision(dp, topo):
    for v in topo.vlans:
        for sw, entries in entries_for_path(v.hops, v.vlan_id, topo).items():
            for e in entries:
                dp.tables[sw].install(e)
        dp.tables["ASW"].install(FlowEntry(v.ue, v.vlan_id, v.hops[0]))
        dp.tables["ASW"].install(FlowEntry(v.hops[0], v.vlan_id, v.ue))


def queue(capacity=100e6, limit=262142, prop_ns=0):
    return EgressQueue(Link("a", "b", capacity), "a", "b", capacity, prop_ns, limit)


class _Pkt:
    def __init__(self, size):
        self.size = size


def test_serialization_1454_at_100mbps():
    # 1454 B * 8 / 1e8 b/s = 116.32 us
    res = enqueue(queue(), _Pkt(1454), 0)
    assert res == Accepted(116_320, 116_320)


def test_back_to_back_fifo():
    q = queue(prop_ns=7)
    first = enqueue(q, _Pkt(1454), 0)
    second = enqueue(q, _Pkt(1454), 0)
    assert second.departure - first.departure == 116_320
    assert second.arrival == second.departure + 7


def test_full_buffer_drops():
    q = queue(limit=3000)
    assert isinstance(enqueue(q, _Pkt(1454), 0), Accepted)
    assert isinstance(enqueue(q, _Pkt(1454), 0), Accepted)
    assert enqueue(q, _Pkt(1454), 0) == Dropped(BUFFER_FULL)
    # once the first frame has left, room frees up
    assert isinstance(enqueue(q, _Pkt(1454), 116_320), Accepted)


def test_occupancy_equal_limit_drops():
    q = queue(limit=1454)
    enqueue(q, _Pkt(1454), 0)
    assert q.occupancy == q.limit
    assert enqueue(q, _Pkt(1), 0) == Dropped(BUFFER_FULL)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 200_000), st.integers(40, 1500)), max_size=80),
       st.integers(1500, 20_000))
def test_queue_never_exceeds_limit_and_is_fifo(arrivals, limit):
    q = queue(limit=limit)
    t = 0
    departures = []
    for gap, size in arrivals:
        t += gap
        res = enqueue(q, _Pkt(size), t)
        assert q.occupancy <= limit
        if isinstance(res, Accepted):
            assert res.departure >= t + q.serialization_ns(size)
            departures.append(res.departure)
    assert departures == sorted(departures)


def test_install_latency(dp, sim):
    sim.at(NS, lambda: None)
    sim.run()
    done = dp.install_flow("s1", FlowEntry("L2SW", 9, "NF1"))
    assert done == 1_000_050_000
    assert dp.tables["s1"].lookup("L2SW", 9) is None
    sim.run()
    assert dp.tables["s1"].lookup("L2SW", 9).output == "NF1"


def test_install_zero_latency_immediate(dp):
    dp.install_flow("s1", FlowEntry("L2SW", 9, "NF1"), latency=0)
    assert dp.tables["s1"].lookup("L2SW", 9) is not None


def test_install_on_off_switch(dp):
    dp.force_state("s1", PowerLevel.OFF)
    with pytest.raises(DeviceOff):
        dp.install_flow("s1", FlowEntry("L2SW", 9, "NF1"))


def test_forward_vlan2a_at_l2sw(dp, topo):
    provision(dp, topo)
    pkt = dp.new_packet("f", 1, 2, 64, PROBE_REQUEST, "UE2", "NF2")
    assert dp.forward("L2SW", pkt, "LC2") == ("output", "s2")
    assert dp.forward("L2SW", pkt, "s2") == ("output", "LC2")


def test_forward_unknown_vlan(dp, topo):
    provision(dp, topo)
    pkt = dp.new_packet("f", 1, 99, 64, PROBE_REQUEST, "UE2", "NF2")
    assert dp.forward("L2SW", pkt, "LC2") == ("drop", NO_MATCH)


def test_forward_off_switch(dp, topo):
    provision(dp, topo)
    dp.force_state("L2SW", PowerLevel.OFF)
    pkt = dp.new_packet("f", 1, 2, 64, PROBE_REQUEST, "UE2", "NF2")
    assert dp.forward("L2SW", pkt, "LC2") == ("drop", DEVICE_OFF)


def test_flow_table_wildcard_and_priority():
    t = FlowTable()
    t.install(FlowEntry(None, 5, "x", priority=10))
    t.install(FlowEntry("p", 5, "y", priority=100))
    assert t.lookup("p", 5).output == "y"
    assert t.lookup("q", 5).output == "x"
    t.replace_vlan(5, [])
    assert t.lookup("p", 5) is None


def test_set_power_transition(dp, sim):
    sim.at(10 * NS, lambda: None)
    sim.run()
    done = dp.set_power("ONU2", "Off")
    assert done == 10_001_000_000
    assert dp.level("ONU2") == PowerLevel.TURNING_OFF
    assert dp.power_state("ONU2").transition_remaining == pytest.approx(1e-3)
    with pytest.raises(TransitionInProgress):
        dp.set_power("ONU2", "On")
    sim.run()
    assert dp.level("ONU2", done) == PowerLevel.OFF


def test_set_power_noop_on_already_on():
    topo_sim = Simulator()
    from greenfronthaul.topology import build_reference_topology
    dp = DataPlane(build_reference_topology(), topo_sim, transition_time=0)
    assert dp.set_power("LC1", "On", 5) == 5


def test_set_power_rejects_non_managed(dp):
    from greenfronthaul.dataplane import DataplaneError
    with pytest.raises(DataplaneError):
        dp.set_power("s1", "Off")


def analytic_delay_ns(topo, hops, size):
    total = 0
    for link in path_links(topo, hops):
        total += round(size * 8 * NS / link.capacity) + round(link.propagation_delay * NS)
    return total


def test_single_packet_delay_equals_analytic_sum(dp, topo, sim):
    provision(dp, topo)
    hops = ["UE2", "ASW", "ONU2", "LC2", "L2SW", "s2", "s3", "NF2"]
    pkt = dp.new_packet("one", 1, 2, 1454, CBR, "UE2", "NF2")
    dp.send("UE2", "ASW", pkt)
    sim.run()
    assert dp.stats["one"].delivered == 1
    assert dp.stats["one"].delay_sum_ns == analytic_delay_ns(topo, hops, 1454)


def test_in_flight_packet_dropped_when_sender_turns_off(dp, topo, sim):
    provision(dp, topo)
    pkt = dp.new_packet("f", 1, 2, 1454, CBR, "UE2", "NF2")
    dp.send("UE2", "ASW", pkt)
    # the frame is on the ONU2-LC2 fiber (100 us) around t = 30 us
    sim.at(30_000, dp.force_state, "ONU2", PowerLevel.OFF)
    sim.run()
    st_ = dp.stats["f"]
    assert (st_.delivered, st_.dropped) == (0, 1)
    assert st_.drops_by_reason == {DEVICE_OFF: 1}


def test_arrival_at_off_device_dropped(dp, topo, sim):
    provision(dp, topo)
    dp.set_power("LC2", "Off")
    sim.at(2_000_000, lambda: dp.send("UE2", "ASW",
                                      dp.new_packet("f", 1, 2, 64, CBR, "UE2", "NF2")))
    sim.run()
    assert dp.stats["f"].drops_by_reason == {DEVICE_OFF: 1}


def test_conservation_with_in_flight(dp, topo, sim):
    provision(dp, topo)
    for k in range(50):
        sim.at(k * 10_000, lambda: dp.send("UE1", "ASW",
                                           dp.new_packet("f", 0, 1, 1454, CBR, "UE1", "NF1")))
    sim.run(300_000)
    st_ = dp.stats["f"]
    inflight = dp.in_flight().get("f", 0)
    assert inflight > 0
    assert st_.created == st_.delivered + st_.dropped + inflight


def test_zero_loss_below_capacity(dp, topo, sim):
    provision(dp, topo)
    period = 200_000  # 1454 B every 200 us = 58 Mb/s < 100 Mb/s tunnel
    for k in range(500):
        sim.at(k * period, lambda: dp.send("UE2", "ASW",
                                           dp.new_packet("f", 0, 2, 1454, CBR, "UE2", "NF2")))
    sim.run()
    assert dp.stats["f"].dropped == 0
    assert dp.stats["f"].delivered == 500


def test_fifo_delivery_order(topo):
    sim = Simulator()
    dp = DataPlane(topo, sim, packet_log=True)
    provision(dp, topo)
    for k in range(40):
        sim.at(k * 5_000, lambda k=k: dp.send(
            "UE1", "ASW", dp.new_packet("f", k, 1, 200 + 37 * (k % 9), CBR, "UE1", "NF1")))
    sim.run()
    seqs = [r["seq"] for r in sim.log if r["ev"] == "deliver"]
    assert seqs == list(range(40))


def test_pause_holds_then_resumes(dp, topo, sim):
    provision(dp, topo)
    dp.pause("UE2", "ASW")
    for k in range(3):
        dp.send("UE2", "ASW", dp.new_packet("f", k, 2, 1454, CBR, "UE2", "NF2"))
    assert dp.in_flight() == {"f": 3}
    sim.at(5_000_000, dp.resume, "UE2", "ASW")
    sim.run()
    assert dp.stats["f"].delivered == 3


def test_packet_log_csv(tmp_path, topo):
    sim = Simulator()
    dp = DataPlane(topo, sim, packet_log=True)
    provision(dp, topo)
    dp.send("UE1", "ASW", dp.new_packet("f", 1, 1, 100, CBR, "UE1", "NF1"))
    dp.send("UE1", "ASW", dp.new_packet("g", 1, 77, 100, CBR, "UE1", "NF1"))
    sim.run()
    out = tmp_path / "p.csv"
    n = write_packet_log_csv(sim.log, out)
    rows = list(csv.DictReader(open(out, encoding="utf-8")))
    assert n == len(rows)
    assert {r["ev"] for r in rows} == {"create", "enqueue", "deliver", "drop"}
    assert [r["reason"] for r in rows if r["ev"] == "drop"] == [NO_MATCH]
