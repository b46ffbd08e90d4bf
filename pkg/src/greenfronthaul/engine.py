"""Deterministic discrete-event scheduler.

Time is integer nanoseconds. Events run in (time, seq) order; seq is a global
counter, so same-time events run in insertion order.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

NS = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(round(seconds * NS))


def to_s(ns: int) -> float:
    return ns / NS


class TimeInPast(Exception):
    pass


@dataclass(frozen=True)
class RandomSpec:
    """A scalar random variable in seconds: ``fixed`` or ``uniform``."""

    dist: str = "fixed"
    value: float = 0.0
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.dist not in ("fixed", "uniform"):
            raise ValueError(f"unsupported distribution {self.dist!r}")
        if self.dist == "uniform" and not (0 <= self.low <= self.high):
            raise ValueError("uniform needs 0 <= low <= high")
        if self.dist == "fixed" and self.value < 0:
            raise ValueError("fixed value must be >= 0")

    @classmethod
    def fixed(cls, value: float) -> "RandomSpec":
        return cls("fixed", value=value)

    @classmethod
    def uniform(cls, low: float, high: float) -> "RandomSpec":
        return cls("uniform", low=low, high=high)

    @classmethod
    def from_dict(cls, d: dict) -> "RandomSpec":
        dist = d.get("dist", "fixed")
        if dist == "uniform":
            return cls.uniform(float(d["low"]), float(d["high"]))
        if dist == "fixed":
            return cls.fixed(float(d["value"]))
        raise ValueError(f"unsupported distribution {dist!r}")

    def to_dict(self) -> dict:
        if self.dist == "uniform":
            return {"dist": "uniform", "low": self.low, "high": self.high}
        return {"dist": "fixed", "value": self.value}

    def sample_ns(self, rng: random.Random) -> int:
        if self.dist == "fixed":
            return to_ns(self.value)
        return to_ns(rng.uniform(self.low, self.high))

    @property
    def mean(self) -> float:
        return self.value if self.dist == "fixed" else (self.low + self.high) / 2


class EventLog:
    """Append-only list of flat records, each stamped with ``t`` in ns."""

    def __init__(self, records: list[dict] | None = None):
        self.records: list[dict] = records if records is not None else []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[dict]:
        return iter(self.records)

    def of(self, ev: str) -> list[dict]:
        return [r for r in self.records if r["ev"] == ev]

    def to_ndjson(self) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "EventLog":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0
        self._queue: list[tuple] = []
        self._seq = 0
        self.rng = random.Random(seed)
        self.log = EventLog()
        self.executed = 0

    def at(self, time_ns: int, fn: Callable, *args: Any) -> int:
        """Schedule ``fn(*args)`` at ``time_ns``; returns the assigned seq."""
        if time_ns < self.now:
            raise TimeInPast(f"event at {time_ns} ns scheduled at {self.now} ns")
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._queue, (time_ns, seq, fn, args))
        return seq

    def after(self, delay_ns: int, fn: Callable, *args: Any) -> int:
        return self.at(self.now + delay_ns, fn, *args)

    schedule = at

    def record(self, ev: str, **fields: Any) -> None:
        fields["ev"] = ev
        fields["t"] = self.now
        self.log.records.append(fields)

    def pending(self) -> list[tuple]:
        return list(self._queue)

    def run(self, until_ns: int | None = None) -> None:
        """Execute events until the queue is empty or the next one is past ``until_ns``."""
        q = self._queue
        pop = heapq.heappop
        n = 0
        while q:
            if until_ns is not None and q[0][0] > until_ns:
                break
            t, _, fn, args = pop(q)
            self.now = t
            fn(*args)
            n += 1
        self.executed += n
        if until_ns is not None and self.now < until_ns:
            self.now = until_ns
