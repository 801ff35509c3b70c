"""Deterministic event timeline and actor scheduler.

Actors are generators resumed by the engine. A yielded value controls the
actor's next wakeup:

* ``int``    -- advance this actor by that many cycles.
* ``Ticket`` -- park until a device resolves the ticket; the actor resumes
  ``ticket.return_delay`` cycles after the resolution instant.
* ``SLEEP``  -- park until some component calls :meth:`Engine.wake`.

Events with equal timestamps are ordered by phase (device actors run before
plain actors) and then by insertion order, so every run is bit-reproducible.
"""

from __future__ import annotations

import heapq

SLEEP = object()

PHASE_DEVICE = 0
PHASE_ACTOR = 1


class DeadlockError(RuntimeError):
    """Raised when the timeline drains while non-daemon actors are parked."""


class Ticket:
    """Parking token for an actor waiting on an asynchronous status."""

    __slots__ = ("status", "return_delay", "waiter", "resolved_at")

    def __init__(self, return_delay: int):
        self.status = None
        self.return_delay = return_delay
        self.waiter = None
        self.resolved_at = None


class Event:
    """Heap record: (time, phase, seq) fixes a total deterministic order."""

    __slots__ = ("time", "phase", "seq", "actor_id")

    def __init__(self, time, phase, seq, actor_id):
        self.time = time
        self.phase = phase
        self.seq = seq
        self.actor_id = actor_id

    def __lt__(self, other):
        return (self.time, self.phase, self.seq) < (other.time, other.phase, other.seq)


class Engine:
    def __init__(self):
        self.now = 0
        self._heap: list[Event] = []
        self._seq = 0
        self._gens = {}
        self._phase = {}
        self._daemon = {}
        self._parked: set[int] = set()
        self._waiting: set[int] = set()
        self._done: set[int] = set()
        self._next_id = 0

    def spawn(self, gen, *, phase: int = PHASE_ACTOR, daemon: bool = False, at=None) -> int:
        aid = self._next_id
        self._next_id += 1
        self._gens[aid] = gen
        self._phase[aid] = phase
        self._daemon[aid] = daemon
        self._push(at if at is not None else self.now, phase, aid)
        return aid

    def _push(self, time, phase, aid):
        self._seq += 1
        heapq.heappush(self._heap, Event(time, phase, self._seq, aid))

    def wake(self, aid, at=None):
        """Unpark a sleeping actor. No-op if it is not parked."""
        if aid in self._parked:
            self._parked.discard(aid)
            self._push(max(at if at is not None else self.now, self.now), self._phase[aid], aid)

    def resolve(self, ticket: Ticket, status):
        ticket.status = status
        ticket.resolved_at = self.now
        if ticket.waiter is not None:
            aid = ticket.waiter
            ticket.waiter = None
            self._waiting.discard(aid)
            self._push(self.now + ticket.return_delay, self._phase[aid], aid)

    def done(self, aid) -> bool:
        return aid in self._done

    def run(self, until=None) -> int:
        while self._heap:
            if until is not None and self._heap[0].time > until:
                break
            ev = heapq.heappop(self._heap)
            if ev.actor_id in self._done:
                continue
            if ev.time < self.now:
                raise RuntimeError("time went backwards")
            self.now = ev.time
            self._step(ev.actor_id)
        if until is None:
            stuck = [a for a in (self._parked | self._waiting)
                     if not self._daemon[a] and a not in self._done]
            if stuck:
                raise DeadlockError(f"actors parked with empty timeline: {sorted(stuck)}")
        return self.now

    def _step(self, aid):
        gen = self._gens[aid]
        try:
            out = gen.send(None)
        except StopIteration:
            self._done.add(aid)
            return
        if out is SLEEP:
            self._parked.add(aid)
        elif isinstance(out, Ticket):
            if out.status is not None:
                # resolved before the actor parked: honour the original return leg
                at = max(self.now, out.resolved_at + out.return_delay)
                self._push(at, self._phase[aid], aid)
            else:
                out.waiter = aid
                self._waiting.add(aid)
        else:
            self._push(self.now + max(0, int(out)), self._phase[aid], aid)
