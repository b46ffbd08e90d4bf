import pytest
from hypothesis import assume, given, strategies as st

from greenfronthaul.energy import (
    DutyCycle,
    PowerModel,
    duty_cycle_from_power_log,
    energy_savings,
    power_all_on,
    power_one_pair_off,
)

REFERENCE = PowerModel(6.0, 4.2, 3.2, 2.3)


def test_reference_power_levels():
    assert power_all_on(REFERENCE) == pytest.approx(18.4, abs=1e-12)
    assert power_one_pair_off(REFERENCE) == pytest.approx(15.7, abs=1e-12)


def test_power_trivial_cases():
    zero = PowerModel(0, 0, 0, 0)
    assert power_all_on(zero) == 0
    assert power_one_pair_off(zero) == 0
    assert power_all_on(PowerModel(1, 0, 0, 0)) == 2
    same = PowerModel(6, 6, 3.2, 3.2)
    assert power_one_pair_off(same) == power_all_on(same)


def test_reference_savings():
    # 1 - (18*18.4 + 6*15.7) / (18.4*24), evaluated by hand
    expected = 1 - (18 * 18.4 + 6 * 15.7) / (18.4 * 24)
    assert expected == pytest.approx(0.0366848, abs=1e-7)
    assert energy_savings(REFERENCE, DutyCycle(18 * 3600, 6 * 3600)) == pytest.approx(expected, abs=1e-12)


def test_savings_edges():
    assert energy_savings(REFERENCE, DutyCycle(10, 0)) == 0
    assert energy_savings(PowerModel(6, 0, 3.2, 0), DutyCycle(0, 5)) == pytest.approx(0.5)
    assert energy_savings(PowerModel(6, 0, 3.2, 0), DutyCycle(0, 5)) < 1
    assert energy_savings(PowerModel(0, 0, 0, 0), DutyCycle(1, 1)) == 0


def test_invalid_models_rejected():
    with pytest.raises(ValueError):
        PowerModel(6, 7, 3.2, 2.3)
    with pytest.raises(ValueError):
        PowerModel(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        DutyCycle(0, 0)
    with pytest.raises(ValueError):
        DutyCycle(-1, 2)


watts = st.floats(0.01, 100, allow_nan=False)
frac = st.floats(0, 1)
dur = st.one_of(st.just(0.0), st.floats(1e-6, 1e6))


@st.composite
def models(draw):
    olt_on, onu_on = draw(watts), draw(watts)
    return PowerModel(olt_on, olt_on * draw(frac), onu_on, onu_on * draw(frac))


@given(models(), dur, dur)
def test_eta_bounds(m, t_on, t_off):
    assume(t_on + t_off > 0)
    eta = energy_savings(m, DutyCycle(t_on, t_off))
    assert -1e-12 <= eta < 1


@given(models(), dur, dur, dur)
def test_eta_monotone_in_t_off(m, t_on, a, b):
    assume(t_on + min(a, b) > 0)
    lo, hi = sorted((a, b))
    assert energy_savings(m, DutyCycle(t_on, lo)) <= energy_savings(m, DutyCycle(t_on, hi)) + 1e-12


@given(models(), watts, dur, dur)
def test_eta_monotone_in_olt_gap(m, extra, t_on, t_off):
    assume(t_on + t_off > 0)
    wider = PowerModel(m.p_olt_on + extra, m.p_olt_off, m.p_onu_on, m.p_onu_off)
    # same off power, larger on power: compare the saving per pair-off second
    gap = lambda x: (x.p_olt_on - x.p_olt_off) / power_all_on(x)  # noqa: E731
    assume(gap(wider) >= gap(m))
    d = DutyCycle(t_on, t_off)
    assert energy_savings(m, d) <= energy_savings(wider, d) + 1e-12


@given(models(), dur, dur, st.floats(1e-3, 1e3))
def test_eta_scale_invariant(m, t_on, t_off, k):
    assume(t_on + t_off > 0)
    a = energy_savings(m, DutyCycle(t_on, t_off))
    b = energy_savings(m, DutyCycle(k * t_on, k * t_off))
    assert a == pytest.approx(b, abs=1e-12)


def test_duty_cycle_from_log_bills_transitions_on():
    ns = 1_000_000_000
    recs = [
        {"t": 10 * ns, "ev": "power", "node": "ONU2", "state": "TurningOff"},
        {"t": 10 * ns + 1_000_000, "ev": "power", "node": "ONU2", "state": "Off"},
        {"t": 40 * ns, "ev": "power", "node": "ONU2", "state": "TurningOn"},
        {"t": 40 * ns + 1_000_000, "ev": "power", "node": "ONU2", "state": "On"},
        {"t": 50 * ns, "ev": "power", "node": "LC2", "state": "Off"},
    ]
    d = duty_cycle_from_power_log(recs, "ONU2", 100 * ns)
    assert d.t_off == pytest.approx(29.999)
    assert d.t_on == pytest.approx(70.001)


def test_duty_cycle_open_off_interval():
    ns = 1_000_000_000
    recs = [{"t": 90 * ns, "ev": "power", "node": "ONU2", "state": "Off"}]
    d = duty_cycle_from_power_log(recs, "ONU2", 100 * ns)
    assert (d.t_on, d.t_off) == (90, 10)
