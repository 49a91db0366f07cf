"""Deterministic discrete-event core.

Fixed-point clock (integer microseconds), a (time, sequence)-ordered event
queue, latency/capacity link transmission, and constant-bit-rate traffic
sources. One engine instance is strictly single-threaded; independent
replicas with different seeds may run concurrently because nothing here is
shared.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

US_PER_MS = 1_000
US_PER_S = 1_000_000


def ms_to_us(ms: float) -> int:
    return round(ms * US_PER_MS)


def s_to_us(s: float) -> int:
    return round(s * US_PER_S)


def us_to_ms(us: int) -> float:
    return us / US_PER_MS


def us_to_s(us: int) -> float:
    return us / US_PER_S


def make_rng(seed, label: str = "") -> random.Random:
    """Independent, reproducible random stream for one named purpose.

    String seeding hashes via SHA-512 internally, so streams are stable
    across platforms and interpreter runs.
    """
    return random.Random(f"{seed}/{label}")


class EngineError(RuntimeError):
    """Engine misuse that signals a bug, e.g. scheduling into the past."""


class SimEvent(NamedTuple):
    time_us: int
    sequence: int
    kind: str
    data: tuple


class Packet(NamedTuple):
    flow: str
    seq: int
    src: str
    dst: str


class Engine:
    """Priority-queue event loop.

    Events dequeue in (time, sequence) order; the monotone sequence counter
    breaks same-time ties in scheduling order, which makes runs fully
    deterministic. Handlers are registered per event kind with ``on()``.
    """

    def __init__(self, record_log: bool = False):
        self.now_us = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self._handlers: dict[str, Callable] = {}
        self.log: list[SimEvent] | None = [] if record_log else None

    def on(self, kind: str, handler: Callable) -> None:
        self._handlers[kind] = handler

    def schedule(self, time_us: int, kind: str, data: tuple = ()) -> int:
        if time_us < self.now_us:
            raise EngineError(
                f"event {kind!r} scheduled at {time_us} us, before current "
                f"clock {self.now_us} us"
            )
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time_us, seq, kind, data))
        return seq

    def pending(self) -> int:
        return len(self._heap)

    def run_until(self, t_end_us: int):
        """Process every event with time <= t_end_us, in order.

        Returns the list of processed events when the engine records a log,
        otherwise the number of events processed (large runs skip the log to
        keep memory flat).
        """
        heap = self._heap
        handlers = self._handlers
        log = self.log
        segment = [] if log is not None else None
        count = 0
        while heap and heap[0][0] <= t_end_us:
            item = heapq.heappop(heap)
            self.now_us = item[0]
            if segment is not None:
                ev = SimEvent(*item)
                log.append(ev)
                segment.append(ev)
            count += 1
            handlers[item[2]](item[0], item[3])
        if t_end_us > self.now_us:
            self.now_us = t_end_us
        return segment if segment is not None else count


@dataclass
class LinkState:
    """Runtime state of one point-to-point link (or one VLAN attachment leg).

    Capacity is enforced as a minimum inter-departure spacing of 1/capacity
    per direction; there is no deeper queueing model.
    """

    latency_us: int
    min_spacing_us: int
    removed: bool = False
    dropped_on_removed: int = 0
    _last_departure: dict = field(default_factory=dict)

    @classmethod
    def from_spec(cls, latency_ms: float, capacity_pps: float) -> "LinkState":
        if latency_ms <= 0:
            raise ValueError(f"link latency must be positive, got {latency_ms} ms")
        if capacity_pps <= 0:
            raise ValueError(f"link capacity must be positive, got {capacity_pps} pkt/s")
        spacing = -(-US_PER_S // int(capacity_pps))  # ceil, keeps spacing >= 1/capacity
        return cls(latency_us=ms_to_us(latency_ms), min_spacing_us=spacing)

    def next_departure(self, direction, now_us: int) -> int:
        last = self._last_departure.get(direction)
        dep = now_us if last is None else max(now_us, last + self.min_spacing_us)
        self._last_departure[direction] = dep
        return dep


def transmit(engine: Engine, link: LinkState, direction, now_us: int,
             kind: str, data: tuple) -> int | None:
    """Send one packet over a link; schedules the far-end arrival event.

    Returns the arrival time, or None when the link has been removed (the
    packet is dropped and counted on the link).
    """
    if link.removed:
        link.dropped_on_removed += 1
        return None
    dep = link.next_departure(direction, now_us)
    arrival = dep + link.latency_us
    engine.schedule(arrival, kind, data)
    return arrival


@dataclass(frozen=True)
class HostFlow:
    """Constant-bit-rate traffic descriptor.

    Packets are emitted at exact 1/rate intervals from ``start_s``; the
    packet size is metadata only and has no behavioral effect.
    """

    flow_id: str
    src: str
    dst: str
    rate_pps: float
    start_s: float
    duration_s: float
    packet_size: int | None = None

    def __post_init__(self):
        if self.rate_pps <= 0:
            raise ValueError("flow rate must be positive")
        if self.duration_s <= 0:
            raise ValueError("flow duration must be positive")

    @property
    def packet_count(self) -> int:
        return round(self.rate_pps * self.duration_s)

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    def tick_us(self, k: int) -> int:
        # per-index rounding, no accumulated drift
        return s_to_us(self.start_s) + round(k * US_PER_S / self.rate_pps)


def cbr_generate(flow: HostFlow):
    """Yield (time_us, Packet) for every packet of a CBR flow, in order."""
    for k in range(flow.packet_count):
        yield flow.tick_us(k), Packet(flow.flow_id, k, flow.src, flow.dst)
