"""Average energy savings of sleeping one LC-ONU pair out of two."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PowerModel:
    """Per-device wattages. Defaults: 6/4.2 W OLT line card, 3.2/2.3 W ONU."""

    p_olt_on: float = 6.0
    p_olt_off: float = 4.2
    p_onu_on: float = 3.2
    p_onu_off: float = 2.3

    def __post_init__(self):
        for name in ("p_olt_on", "p_olt_off", "p_onu_on", "p_onu_off"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.p_olt_off > self.p_olt_on:
            raise ValueError("p_olt_off must not exceed p_olt_on")
        if self.p_onu_off > self.p_onu_on:
            raise ValueError("p_onu_off must not exceed p_onu_on")


@dataclass(frozen=True)
class DutyCycle:
    t_on: float
    t_off: float

    def __post_init__(self):
        if self.t_on < 0 or self.t_off < 0:
            raise ValueError("durations must be >= 0")
        if not self.t_on + self.t_off > 0:
            raise ValueError("t_on + t_off must be > 0")


def power_all_on(m: PowerModel) -> float:
    return 2 * (m.p_olt_on + m.p_onu_on)


def power_one_pair_off(m: PowerModel) -> float:
    return m.p_olt_on + m.p_onu_on + m.p_olt_off + m.p_onu_off


def energy_savings(m: PowerModel, d: DutyCycle) -> float:
    """Fractional saving relative to keeping both pairs on for the whole cycle."""
    p_on = power_all_on(m)
    p_off = power_one_pair_off(m)
    if p_on == 0:
        return 0.0
    return 1 - (d.t_on * p_on + d.t_off * p_off) / (p_on * (d.t_on + d.t_off))


def duty_cycle_from_power_log(records, device: str, t_end_ns: int) -> DutyCycle:
    """Aggregate Off time of ``device`` from ``power`` log records.

    Transition periods count as On, so only time spent fully Off is credited.
    """
    off_ns = 0
    off_since = None
    for r in records:
        if r["ev"] != "power" or r["node"] != device:
            continue
        if r["state"] == "Off" and off_since is None:
            off_since = r["t"]
        elif r["state"] != "Off" and off_since is not None:
            off_ns += r["t"] - off_since
            off_since = None
    if off_since is not None:
        off_ns += max(0, t_end_ns - off_since)
    return DutyCycle((t_end_ns - off_ns) / 1e9, off_ns / 1e9)
