"""Wires one simulated machine together: timeline, fabric, routing device,
instruction layer, address map, queue registry and a bump allocator for
cacheable lines.  One System instance is one deterministic simulation."""

from __future__ import annotations

import random

from .endpoints import AddressMap, VlQueues
from .engine import Engine, PHASE_DEVICE, SLEEP
from .fabric import Fabric, SimConfig
from .isa import VlIsa
from .vlrd import VlrdDevice

PAGE = 4096


class System:
    def __init__(self, config: SimConfig | None = None, *, addr_map: AddressMap | None = None,
                 num_sqi: int | None = None, buf_entries: int = 256, seed: int = 0,
                 trace: bool = False):
        self.cfg = config or SimConfig()
        self.engine = Engine()
        self.fabric = Fabric(self.cfg, now_fn=lambda: self.engine.now, trace=trace)
        self.addr_map = addr_map or AddressMap()
        self.device = VlrdDevice(
            num_sqi=num_sqi if num_sqi is not None else self.addr_map.num_sqis,
            buf_entries=buf_entries,
            roundtrip=self.cfg.lat_vlrd_roundtrip,
            injector=self.fabric.inject_line,
            wake=self._wake_device,
        )
        self.isa = VlIsa(self)
        self.queues = VlQueues(self)
        self.rng = random.Random(seed)
        self.seed = seed
        self._alloc_cursor = 1 << 20
        self._class_counts: dict[int, list[int]] = {}
        self._device_aid = self.engine.spawn(self._device_actor(),
                                             phase=PHASE_DEVICE, daemon=True)

    # ------------------------------------------------------------------

    def alloc_lines(self, n: int, *, page_aligned: bool = True,
                    core: int | None = None) -> int:
        """Reserve n fresh 64 B lines of cacheable memory; returns the base.

        With ``core`` given, the page is chosen so that core's allocations
        balance across L1 set classes, which keeps a core's hot lines from
        piling into one associativity set.  Address space is free, so the
        allocator simply skips pages of overloaded classes.
        """
        if not page_aligned:
            base = self._alloc_cursor
            self._alloc_cursor += n * 64
            return base
        if self._alloc_cursor % PAGE:
            self._alloc_cursor += PAGE - self._alloc_cursor % PAGE
        classes = max(1, self.fabric.l1[0].num_sets // (PAGE // 64))
        if core is not None and classes > 1:
            counts = self._class_counts.setdefault(core, [0] * classes)
            want = counts.index(min(counts))
            while (self._alloc_cursor // PAGE) % classes != want:
                self._alloc_cursor += PAGE
            counts[want] += 1
        base = self._alloc_cursor
        self._alloc_cursor += n * 64
        return base

    def spawn(self, gen) -> int:
        return self.engine.spawn(gen)

    def run(self, until=None) -> int:
        return self.engine.run(until)

    def stats(self):
        return self.fabric.snapshot_stats()

    # ------------------------------------------------------------------

    def _wake_device(self, at):
        self.engine.wake(self._device_aid, at)

    def _device_actor(self):
        dev = self.device
        eng = self.engine
        while True:
            nxt = dev.next_event_time(eng.now)
            if nxt is None:
                yield SLEEP
            elif nxt > eng.now:
                yield nxt - eng.now
            else:
                dev.cycle(eng.now, resolve=eng.resolve)
                yield 1
