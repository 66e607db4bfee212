"""Discrete-event pub/sub bus standing in for the swarm's shared ROS topics.

Time advances in fixed control ticks. A published message is delivered on the
first tick at or after ``send_time + latency`` unless the seeded RNG drops it.
Per (sender, topic) delivery order always matches send order.
"""
from __future__ import annotations

import heapq
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

TICK = 0.1

TOPIC_POSE = "pose"
TOPIC_READY = "readiness"
TOPIC_ACK = "readiness_ack"
TOPIC_TARGET = "target"
TOPIC_ORBIT = "orbit_command"
TOPIC_CAPTURE = "capture"


class UnknownSender(KeyError):
    pass


@dataclass(frozen=True)
class PoseReport:
    position: tuple[float, float, float]
    yaw: float


@dataclass(frozen=True)
class Readiness:
    worker: str


@dataclass(frozen=True)
class Ack:
    worker: str


@dataclass(frozen=True)
class TargetAssignment:
    worker: str
    lat: float
    lon: float
    altitude: float
    yaw: float


@dataclass(frozen=True)
class OrbitCommand:
    start_time: float
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class BusMessage:
    topic: str
    sender: str
    payload: Any
    send_time: float


@dataclass
class BusConfig:
    latency: float = 0.0
    jitter: float = 0.0  # extra latency drawn uniformly from [0, jitter]
    drop_probability: float = 0.0
    seed: int = 0
    link_latency: dict[str, float] = field(default_factory=dict)
    link_drop: dict[str, float] = field(default_factory=dict)  # per sender, may be 1
    tick: float = TICK

    def __post_init__(self):
        if self.latency < 0 or self.jitter < 0:
            raise ValueError("latency must be non-negative")
        if not 0 <= self.drop_probability < 1:
            raise ValueError("drop probability must lie in [0, 1)")
        for p in self.link_drop.values():
            if not 0 <= p <= 1:
                raise ValueError("per-link drop probability must lie in [0, 1]")


def _summary(payload) -> str:
    if payload is None:
        return "-"
    if hasattr(payload, "__dataclass_fields__"):
        parts = []
        for name in payload.__dataclass_fields__:
            v = getattr(payload, name)
            if isinstance(v, float):
                v = f"{v:.9g}"
            elif isinstance(v, tuple):
                v = "(" + ",".join(f"{x:.9g}" if isinstance(x, float) else str(x) for x in v) + ")"
            parts.append(f"{name}={v}")
        return type(payload).__name__ + "{" + " ".join(parts) + "}"
    return str(payload)


@dataclass(frozen=True)
class TranscriptEntry:
    time: float
    event: str  # send | drop | deliver
    topic: str
    sender: str
    summary: str

    def line(self) -> str:
        return f"{self.time:.3f}\t{self.event}\t{self.topic}\t{self.sender}\t{self.summary}"


class MessageBus:
    """Single-owner event loop: agents publish, ``step`` advances one tick."""

    def __init__(self, config: BusConfig | None = None):
        self.config = config or BusConfig()
        self.tick_index = 0
        self._rng = np.random.default_rng(self.config.seed)
        self._senders: set[str] = set()
        self._last_send: dict[str, float] = {}
        self._last_delivery: dict[tuple[str, str], int] = {}
        self._queue: list = []
        self._seq = 0
        self._subscribers: dict[str, list[Callable[[BusMessage], None]]] = defaultdict(list)
        self._tickers: list[Callable[[float], None]] = []
        self.transcript: list[TranscriptEntry] = []

    @property
    def dt(self) -> float:
        return self.config.tick

    @property
    def now(self) -> float:
        return round(self.tick_index * self.config.tick, 9)

    def register(self, sender: str) -> None:
        self._senders.add(sender)

    def subscribe(self, topic: str, callback: Callable[[BusMessage], None]) -> None:
        self._subscribers[topic].append(callback)

    def add_ticker(self, callback: Callable[[float], None]) -> None:
        self._tickers.append(callback)

    def _delivery_tick(self, t: float) -> int:
        return int(math.ceil(round(t / self.config.tick, 9)))

    def publish(self, msg: BusMessage) -> None:
        if msg.sender not in self._senders:
            raise UnknownSender(msg.sender)
        last = self._last_send.get(msg.sender)
        if last is not None and msg.send_time < last:
            raise ValueError(f"send time went backwards for {msg.sender}")
        self._last_send[msg.sender] = msg.send_time
        cfg = self.config
        p_drop = cfg.link_drop.get(msg.sender, cfg.drop_probability)
        # draw both variates every time so one link's settings never shift another's stream
        u_drop, u_jit = self._rng.random(2)
        summary = _summary(msg.payload)
        self.transcript.append(TranscriptEntry(msg.send_time, "send", msg.topic, msg.sender, summary))
        if u_drop < p_drop:
            self.transcript.append(TranscriptEntry(msg.send_time, "drop", msg.topic, msg.sender, summary))
            return
        latency = cfg.link_latency.get(msg.sender, cfg.latency) + cfg.jitter * u_jit
        due = max(self._delivery_tick(msg.send_time + latency), self.tick_index)
        key = (msg.sender, msg.topic)
        due = max(due, self._last_delivery.get(key, due))
        self._last_delivery[key] = due
        heapq.heappush(self._queue, (due, self._seq, msg))
        self._seq += 1

    def _deliver_due(self) -> None:
        while self._queue and self._queue[0][0] <= self.tick_index:
            _, _, msg = heapq.heappop(self._queue)
            self.transcript.append(
                TranscriptEntry(self.now, "deliver", msg.topic, msg.sender, _summary(msg.payload)))
            for cb in list(self._subscribers[msg.topic]):
                cb(msg)

    def step(self) -> float:
        """Advance one tick: run every agent, then flush deliveries due by now."""
        self.tick_index += 1
        self._deliver_due()
        for ticker in list(self._tickers):
            ticker(self.now)
        self._deliver_due()
        return self.now

    def flush(self) -> None:
        """Deliver anything due at the current tick without advancing time."""
        self._deliver_due()

    def dump_transcript(self, path=None) -> str:
        text = "".join(e.line() + "\n" for e in self.transcript)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


@dataclass(frozen=True)
class BarrierResult:
    ready: bool
    time: float

    @property
    def status(self) -> str:
        return "ready" if self.ready else "timed_out"


def barrier_all_ready(bus: MessageBus, worker_ids, timeout: float,
                      on_ready: Callable[[float], None] | None = None,
                      manager: str = "manager") -> BarrierResult:
    """Step the bus until every worker's readiness has been delivered.

    The manager side acknowledges each readiness message so workers can stop
    re-broadcasting. ``on_ready`` runs at the ready tick (used to publish the
    orbit command) and never earlier.
    """
    waiting = set(worker_ids)
    heard: set[str] = set()
    bus.register(manager)

    def on_readiness(msg: BusMessage) -> None:
        worker = msg.payload.worker
        if worker in waiting:
            heard.add(worker)
            bus.publish(BusMessage(TOPIC_ACK, manager, Ack(worker), bus.now))

    bus.subscribe(TOPIC_READY, on_readiness)
    deadline = bus.now + timeout
    bus.flush()
    while heard != waiting:
        if bus.now + 1e-9 >= deadline:
            return BarrierResult(False, bus.now)
        bus.step()
    if on_ready is not None:
        on_ready(bus.now)
    return BarrierResult(True, bus.now)
