"""Deterministic discrete-event network simulator with fault injection.

There is a single virtual clock owned by the simulator; actors never
see wall-clock time, which is exactly what makes the signature scheme's
freedom from synchronization testable.  Events are processed in
``(time, insertion order)`` order, every random draw comes from a
stream split off the master seed by a stable name (actor id or link
id), and all timestamps and latencies are integers, so a ``(config,
seed)`` pair replays to a bit-identical trace.

Links may lose messages, delay them within a bounded range, go down for
outage windows, and -- on links explicitly named adversarial -- mutate
payloads in flight.  Every mutation is recorded so a post-run audit can
confirm the adversary stayed confined to its assigned links.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .metrics import MetricsLog


@dataclass
class NetMessage:
    src: str
    dst: str
    kind: str
    payload: Any
    sent_at: int = 0
    tampered: bool = False


@dataclass(frozen=True)
class SimEvent:
    time: int
    seq: int
    kind: str               # "deliver" | "timer"
    target: str
    message: NetMessage | None = None
    timer_tag: str = ""
    timer_data: Any = None

    def sort_key(self):
        return (self.time, self.seq)


@dataclass
class LinkSpec:
    loss: float = 0.0
    latency_min: int = 1
    latency_max: int = 1
    outages: list[tuple[int, int]] = field(default_factory=list)  # [start, end)
    tamper: Callable[[NetMessage], NetMessage] | None = None

    def in_outage(self, now: int) -> bool:
        return any(start <= now < end for start, end in self.outages)


@dataclass
class FaultPlan:
    """Per-link fault configuration plus byzantine actor assignments."""

    default_link: LinkSpec = field(default_factory=LinkSpec)
    links: dict[tuple[str, str], LinkSpec] = field(default_factory=dict)
    byzantine: dict[str, str] = field(default_factory=dict)  # id -> mode

    def link_for(self, src: str, dst: str) -> LinkSpec:
        return self.links.get((src, dst), self.default_link)

    def link_override(self, src: str, dst: str) -> LinkSpec:
        key = (src, dst)
        if key not in self.links:
            base = self.default_link
            self.links[key] = LinkSpec(
                loss=base.loss, latency_min=base.latency_min,
                latency_max=base.latency_max,
            )
        return self.links[key]


def inject_outage(plan: FaultPlan, link: tuple[str, str], start: int,
                  rounds: int, period: int) -> FaultPlan:
    """Add an outage swallowing exactly ``rounds`` broadcast instants.

    Broadcasts land on multiples of ``period``; the window opens just
    before the first covered instant and closes just after the last,
    so the following delivery observes a chain walk of ``rounds + 1``.
    """
    if rounds > 0:
        spec = plan.link_override(*link)
        spec.outages.append((start, start + rounds * period))
    return plan


class Actor:
    """Base class for simulation participants."""

    actor_id: str

    def handle(self, sim: "Simulator", msg: NetMessage) -> None:
        raise NotImplementedError

    def on_timer(self, sim: "Simulator", tag: str, data: Any) -> None:
        pass


class Simulator:
    def __init__(self, master_seed: int, faults: FaultPlan | None = None,
                 metrics: MetricsLog | None = None):
        self.master_seed = master_seed
        self.faults = faults or FaultPlan()
        self.metrics = metrics or MetricsLog()
        self.now = 0
        self.actors: dict[str, Actor] = {}
        self._heap: list[tuple[tuple[int, int], SimEvent]] = []
        self._seq = 0
        self._rngs: dict[str, random.Random] = {}
        self.tamper_audit: list[dict] = []
        self.dropped: list[dict] = []
        self.consistency_check: Callable[["Simulator"], None] | None = None

    # -- randomness ------------------------------------------------------

    def rng(self, name: str) -> random.Random:
        """Per-actor / per-link stream split from the master seed."""
        if name not in self._rngs:
            digest = hashlib.sha256(
                f"{self.master_seed}:{name}".encode()
            ).digest()
            self._rngs[name] = random.Random(int.from_bytes(digest, "big"))
        return self._rngs[name]

    # -- wiring ------------------------------------------------------------

    def add_actor(self, actor: Actor) -> None:
        self.actors[actor.actor_id] = actor

    def _push(self, event: SimEvent) -> None:
        heapq.heappush(self._heap, (event.sort_key(), event))

    def schedule_timer(self, actor_id: str, delay: int, tag: str,
                       data: Any = None) -> None:
        self._seq += 1
        self._push(SimEvent(time=self.now + delay, seq=self._seq,
                            kind="timer", target=actor_id, timer_tag=tag,
                            timer_data=data))

    def send(self, src: str, dst: str, kind: str, payload: Any) -> None:
        """Route one message through the (possibly faulty) link."""
        link = self.faults.link_for(src, dst)
        rng = self.rng(f"link:{src}->{dst}")
        msg = NetMessage(src=src, dst=dst, kind=kind, payload=payload,
                         sent_at=self.now)
        if link.in_outage(self.now):
            self.dropped.append({"time": self.now, "src": src, "dst": dst,
                                 "kind": kind, "cause": "outage"})
            return
        if link.loss > 0 and rng.random() < link.loss:
            self.dropped.append({"time": self.now, "src": src, "dst": dst,
                                 "kind": kind, "cause": "loss"})
            return
        if link.tamper is not None:
            mutated = link.tamper(msg)
            if mutated is not None and mutated is not msg:
                self.tamper_audit.append({
                    "time": self.now, "src": src, "dst": dst, "kind": kind,
                })
                msg = mutated
                msg.tampered = True
        latency = rng.randint(link.latency_min, link.latency_max)
        self._seq += 1
        self._push(SimEvent(time=self.now + latency, seq=self._seq,
                            kind="deliver", target=dst, message=msg))

    # -- main loop -----------------------------------------------------------

    def run(self, horizon: int) -> None:
        while self._heap:
            key, event = heapq.heappop(self._heap)
            if event.time > horizon:
                # past the horizon: drop the remainder deterministically
                self._heap.clear()
                self.now = horizon
                break
            self.now = event.time
            actor = self.actors.get(event.target)
            if actor is None:
                continue
            if event.kind == "deliver":
                actor.handle(self, event.message)
            else:
                actor.on_timer(self, event.timer_tag, event.timer_data)
            if self.consistency_check is not None:
                self.consistency_check(self)
