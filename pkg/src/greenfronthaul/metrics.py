"""Capture-tap post-processing: reconfiguration times, PMF, one-way delay and loss."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .energy import PowerModel, duty_cycle_from_power_log, energy_savings
from .engine import NS, EventLog


class MetricsError(Exception):
    pass


class NoTapData(MetricsError):
    pass


class EmptySamples(MetricsError):
    pass


class UnknownFlow(MetricsError):
    pass


@dataclass(frozen=True)
class CaptureRecord:
    tap_node: str
    time: float
    kind: str
    flow_id: str
    seq: int
    port: str
    ctrl: str | None = None
    direction: str | None = None
    episode: int | None = None
    vlan: int | None = None


@dataclass(frozen=True)
class ReconfigSample:
    episode_index: int
    trigger_seen_at: float
    first_reply_at: float
    duration: float


class ReconfigSamples(list):
    """Paired samples; ``incomplete`` lists episode indices with no reply."""

    def __init__(self, samples=(), incomplete=()):
        super().__init__(samples)
        self.incomplete = list(incomplete)


@dataclass(frozen=True)
class Histogram:
    bin_edges: tuple[float, ...]
    probabilities: tuple[float, ...]

    def mass_between(self, lo: float, hi: float) -> float:
        """Mass of bins lying inside [lo, hi)."""
        tol = 1e-12
        return sum(p for a, b, p in zip(self.bin_edges, self.bin_edges[1:], self.probabilities)
                   if a >= lo - tol and b <= hi + tol)


@dataclass(frozen=True)
class OneWayStats:
    flow_id: str
    created: int
    delivered: int
    dropped: int
    in_flight: int
    mean_delay: float | None  # s; None when nothing was delivered
    loss_ratio: float


def capture(log: EventLog | Iterable[dict], tap: str) -> list[CaptureRecord]:
    out = []
    for r in log:
        if r["ev"] == "tap" and r["node"] == tap:
            out.append(CaptureRecord(tap, r["t"] / NS, r["kind"], r["flow"], r["seq"], r["port"],
                                     r.get("ctrl"), r.get("direction"), r.get("episode"),
                                     r.get("vlan")))
    return out


def reconfiguration_times(log: EventLog | Iterable[dict], tap: str = "L2SW", *,
                          vlan: int | None = None, flow: str | None = None,
                          direction: str | None = "sleep", tunnel_delay: float = 0.0,
                          tunnel_crossings: int = 2) -> ReconfigSamples:
    """Pair each OltNotify seen at the tap with the next ProbeReply seen there.

    An episode whose next trigger arrives before any reply is incomplete.
    ``tunnel_delay * tunnel_crossings`` is removed from every duration.
    """
    records = capture(log, tap)
    if not records:
        raise NoTapData(f"no capture records at {tap!r}")
    triggers = [i for i, r in enumerate(records) if r.ctrl == "OltNotify"]
    samples, incomplete = [], []
    index = 0
    for n, i in enumerate(triggers):
        trig = records[i]
        if direction is not None and trig.direction != direction:
            continue
        stop = triggers[n + 1] if n + 1 < len(triggers) else len(records)
        reply = None
        for r in records[i + 1:stop]:
            if r.kind != "ProbeReply" or r.time <= trig.time:
                continue
            if vlan is not None and r.vlan != vlan:
                continue
            if flow is not None and r.flow_id != flow:
                continue
            reply = r
            break
        if reply is None:
            incomplete.append(index)
        else:
            duration = reply.time - trig.time - tunnel_delay * tunnel_crossings
            samples.append(ReconfigSample(index, trig.time, reply.time, duration))
        index += 1
    return ReconfigSamples(samples, incomplete)


def ground_truth_intervals(log: EventLog | Iterable[dict], tap: str = "L2SW",
                           direction: str | None = "sleep") -> dict[int, float]:
    """Per episode id: OltNotify at the tap to completion of the reroute (bearer restored)."""
    seen = {}
    done = {}
    for r in log:
        if r["ev"] == "tap" and r["node"] == tap and r.get("ctrl") == "OltNotify":
            if direction is None or r.get("direction") == direction:
                seen[r["episode"]] = r["t"]
        elif r["ev"] == "reconfig_done":
            done[r["episode"]] = r["t"]
    return {ep: (done[ep] - t) / NS for ep, t in seen.items() if ep in done}


def pmf(samples: Sequence[float], bin_width: float = 10e-3) -> Histogram:
    """Normalised histogram with bins anchored at zero: [k*w, (k+1)*w)."""
    if len(samples) == 0:
        raise EmptySamples("pmf of no samples")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    # guard against 0.06/0.01 == 5.999...
    idx = [math.floor(s / bin_width + 1e-9) for s in samples]
    lo, hi = min(idx), max(idx)
    counts = [0] * (hi - lo + 1)
    for k in idx:
        counts[k - lo] += 1
    n = len(samples)
    edges = tuple((lo + j) * bin_width for j in range(hi - lo + 2))
    return Histogram(edges, tuple(c / n for c in counts))


def one_way_stats(log: EventLog | Iterable[dict], flow_id: str) -> OneWayStats:
    """Mean delay over delivered packets and dropped/created loss ratio."""
    summary = None
    created = delivered = dropped = 0
    delay_sum = 0
    seen = False
    for r in log:
        ev = r["ev"]
        if ev == "flow_summary" and r["flow"] == flow_id:
            summary = r
        elif r.get("flow") == flow_id and ev in ("create", "deliver", "drop"):
            seen = True
            if ev == "create":
                created += 1
            elif ev == "deliver":
                delivered += 1
                delay_sum += r["delay"]
            else:
                dropped += 1
    in_flight = 0
    if summary is not None:
        created, delivered, dropped = summary["created"], summary["delivered"], summary["dropped"]
        delay_sum, in_flight = summary["delay_sum_ns"], summary["in_flight"]
    elif not seen:
        raise UnknownFlow(flow_id)
    else:
        in_flight = created - delivered - dropped
    mean = delay_sum / delivered / NS if delivered else None
    loss = dropped / created if created else 0.0
    return OneWayStats(flow_id, created, delivered, dropped, in_flight, mean, loss)


def energy_report(log: EventLog | Iterable[dict], power_model: PowerModel, device: str,
                  t_end: float) -> float:
    """Savings for the on/off time ``device`` actually spent in the run."""
    duty = duty_cycle_from_power_log(list(log), device, round(t_end * NS))
    return energy_savings(power_model, duty)


@dataclass
class MetricsReport:
    reconfig_samples: list[ReconfigSample]
    incomplete: list[int]
    pmf: Histogram | None
    one_way: dict[str, OneWayStats]
    conservation_ok: bool
    eta: float
    extra: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path, trec: float | None = None,
              load_mbps: float | None = None, measured_flow: str | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "reconfig.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "duration_ms"])
            for s in self.reconfig_samples:
                w.writerow([s.episode_index, f"{s.duration * 1e3:.6f}"])
        with open(out / "pmf.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_start_ms", "probability"])
            if self.pmf is not None:
                for edge, p in zip(self.pmf.bin_edges, self.pmf.probabilities):
                    w.writerow([f"{edge * 1e3:.3f}", f"{p:.6f}"])
        with open(out / "flows.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["flow", "created", "delivered", "dropped", "in_flight",
                        "mean_delay_ms", "loss_pct"])
            for fid in sorted(self.one_way):
                s = self.one_way[fid]
                w.writerow([fid, s.created, s.delivered, s.dropped, s.in_flight,
                            "" if s.mean_delay is None else f"{s.mean_delay * 1e3:.6f}",
                            f"{s.loss_ratio * 100:.6f}"])
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trec_s", "load_mbps", "mean_delay_ms", "loss_pct", "eta",
                        "conservation_ok"])
            m = self.one_way.get(measured_flow) if measured_flow else None
            w.writerow([
                "" if trec is None else f"{trec:g}",
                "" if load_mbps is None else f"{load_mbps:g}",
                "" if m is None or m.mean_delay is None else f"{m.mean_delay * 1e3:.6f}",
                "" if m is None else f"{m.loss_ratio * 100:.6f}",
                f"{self.eta:.6f}",
                int(self.conservation_ok),
            ])


def report_from_log(scenario, log: EventLog | Iterable[dict]) -> MetricsReport:
    """Every number here is recomputed from ``log``; ``scenario`` only names what to measure."""
    sc = scenario
    log = log if isinstance(log, (EventLog, list)) else list(log)
    try:
        samples = reconfiguration_times(log, sc.tap, flow=sc.probe_flow, vlan=sc.vlan,
                                        tunnel_delay=sc.tunnel_delay)
    except NoTapData:
        samples = ReconfigSamples()
    hist = pmf([s.duration for s in samples], sc.bin_width) if samples else None
    flows = sorted({r["flow"] for r in log if r["ev"] == "flow_summary"})
    one_way = {f: one_way_stats(log, f) for f in flows}
    conservation = all(
        s.created == s.delivered + s.dropped + s.in_flight for s in one_way.values())
    device = sc.schedule.get("pair", ["ONU2", "LC2"])[0]
    eta = energy_report(log, sc.power, device, sc.t_end)
    return MetricsReport(list(samples), samples.incomplete, hist, one_way, conservation, eta)


def build_report(result) -> MetricsReport:
    return report_from_log(result.scenario, result.log)
