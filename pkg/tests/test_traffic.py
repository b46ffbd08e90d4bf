import math

import pytest
from hypothesis import given, settings, strategies as st

from greenfronthaul.dataplane import DataPlane
from greenfronthaul.engine import NS, Simulator
from greenfronthaul.topology import build_reference_topology
from greenfronthaul.traffic import (
    CbrFlowSpec,
    ProbeFlowSpec,
    UnknownNode,
    start_cbr_flow,
    start_probe_flow,
)

from test_dataplane import provision


def network(tap=None):
    topo = build_reference_topology()
    sim = Simulator(1)
    dp = DataPlane(topo, sim, tap_node=tap)
    provision(dp, topo)
    return dp, sim


def test_cbr_periods():
    # 1400 B * 8 bit / rate
    assert CbrFlowSpec("UE1", "NF1", 1400, 20e6).period == pytest.approx(560e-6)
    assert CbrFlowSpec("UE1", "NF1", 1400, 100e6).period == pytest.approx(112e-6)


def test_cbr_wire_size_and_load():
    spec = CbrFlowSpec("UE2", "NF2", 1400, 100e6)
    assert spec.wire_size == 1454
    assert spec.wire_load == pytest.approx(100e6 * 1454 / 1400)


def test_cbr_zero_load_rejected():
    with pytest.raises(ValueError):
        CbrFlowSpec("UE1", "NF1", 1400, 0)


def test_probe_count_over_10ms():
    dp, sim = network()
    h = start_probe_flow(dp, ProbeFlowSpec("UE2", "NF2", 1e-3, stop=10e-3, flow_id="p"))
    sim.run()
    assert h.sent == 10
    assert dp.stats["p"].created == 20  # 10 requests + 10 replies
    assert dp.stats["p"].delivered == 20


def test_probe_unreachable_conserves():
    dp, sim = network()
    h = start_probe_flow(dp, ProbeFlowSpec("UE2", "NF2", 1e-3, vlan_id=42, stop=10e-3,
                                           flow_id="p"))
    sim.run()
    st_ = dp.stats["p"]
    assert h.sent == 10
    assert st_.delivered == 0
    assert st_.created == st_.dropped == 10


def test_src_equals_dst_rejected():
    dp, _ = network()
    with pytest.raises(UnknownNode):
        start_probe_flow(dp, ProbeFlowSpec("UE2", "UE2", stop=1))
    with pytest.raises(UnknownNode):
        start_cbr_flow(dp, CbrFlowSpec("UE9", "NF2"), 1)


def test_probe_seq_contiguous_across_windows():
    dp, sim = network()
    spec = ProbeFlowSpec("UE2", "NF2", 1e-3, windows=((0.0, 0.005), (0.1, 0.103)), flow_id="p")
    start_probe_flow(dp, spec)
    seqs = []
    orig = dp.new_packet

    def spy(flow_id, seq, *a, **k):
        if a[2] == "ProbeRequest":
            seqs.append((sim.now, seq))
        return orig(flow_id, seq, *a, **k)

    dp.new_packet = spy
    sim.run()
    assert [s for _, s in seqs] == list(range(1, 9))
    assert [t for t, _ in seqs][5] == 100_000_000


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1e6, 20e6, 33.3e6, 80e6, 100e6]), st.integers(64, 1500),
       st.floats(0.001, 0.05))
def test_cbr_count_and_spacing(load, payload, duration):
    dp, sim = network()
    spec = CbrFlowSpec("UE1", "NF1", payload, load, vlan_id=1, flow_id="c")
    h = start_cbr_flow(dp, spec, duration, keep_departures=True)
    sim.run(round(duration * NS))
    expected = duration / spec.period
    assert abs(h.sent - math.floor(expected)) <= 1
    exact = payload * 8 * NS / load
    for k, t in enumerate(h.departures):
        assert t == round(k * exact)
    gaps = {b - a for a, b in zip(h.departures, h.departures[1:])}
    assert all(abs(g - exact) <= 1 for g in gaps)


def test_cbr_below_capacity_no_loss():
    dp, sim = network()
    start_cbr_flow(dp, CbrFlowSpec("UE1", "NF1", 1400, 80e6, vlan_id=1, flow_id="c"), 0.2)
    sim.run()
    st_ = dp.stats["c"]
    assert st_.dropped == 0 and st_.delivered == st_.created


def test_cbr_over_capacity_loses_overhead_share():
    dp, sim = network()
    start_cbr_flow(dp, CbrFlowSpec("UE1", "NF1", 1400, 100e6, vlan_id=1, flow_id="c"), 5.0)
    sim.run()
    st_ = dp.stats["c"]
    # wire load 103.86 Mb/s into a 100 Mb/s tunnel: 1 - 1400/1454 once the buffer fills
    assert st_.dropped / st_.created == pytest.approx(1 - 1400 / 1454, abs=0.01)
