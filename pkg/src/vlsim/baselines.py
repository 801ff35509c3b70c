"""Software queues and locks running on the same fabric, used both to
reproduce the contention phenomena that motivate the hardware path and as
the comparison arm for the benchmark suite.

Two queue shapes share one interface:

* bounded: a classic CAS-claimed ring with head and tail words on separate
  lines and a lap tag in every slot;
* unbounded: a linked MPMC queue with a dummy head node and a node pool, so
  the cache footprint tracks occupancy and a backlog spills toward memory
  the way a lock-free library queue does.

All synchronization goes through fabric loads, stores and compare-and-swap,
so every coherence event the queues cause is counted.
"""

from __future__ import annotations

from .fabric import LINE, SimFault

_WORD = 8
_SEQ_OFF = 56          # ring slots: lap tag in the last word
_LEN_OFF = 54          # ring slots: payload length byte
_NEXT_OFF = 48         # linked nodes: next-pointer word
_NODE_LEN_OFF = 46     # linked nodes: payload length halfword
MAX_QUEUE_PAYLOAD = 46


def _word(data: bytes, off: int) -> int:
    return int.from_bytes(data[off:off + 8], "little")


class CasRingQueue:
    """Multi-producer multi-consumer queue synchronized with CAS.

    ``unbounded=True`` switches to the linked, pool-backed variant that
    never reports full.
    """

    def __init__(self, system, capacity: int = 256, *, unbounded: bool = False):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.sys = system
        self.capacity = capacity
        self.unbounded = unbounded
        self.head_line = system.alloc_lines(1)
        self.tail_line = system.alloc_lines(1)
        if unbounded:
            self.pool_line = system.alloc_lines(1)
            self._free_nodes: list[int] = []
            self._node_addrs: list[int] = []
            dummy = self._new_node_addr()
            self._init_words = {self.head_line: dummy, self.tail_line: dummy}
        else:
            self.slots = [system.alloc_lines(1) for _ in range(capacity)]
            self._init_words = {}
        self._initialized: set[int] = set()

    # lazily materialise initial head/tail words through a plain store so
    # construction itself costs nothing on the timeline
    def _ensure_init(self, core):
        for addr, val in self._init_words.items():
            if addr not in self._initialized:
                self.sys.fabric.core_store_word(core, addr, val)
                self._initialized.add(addr)

    def _new_node_addr(self) -> int:
        # quarantine a few freed nodes so a lagging peer never sees an
        # address recycled mid-operation (the usual counted-pointer fix)
        if len(self._free_nodes) > 8:
            return self._free_nodes.pop(0)
        addr = self.sys.alloc_lines(1)
        self._node_addrs.append(addr)
        return addr

    @property
    def footprint_lines(self) -> int:
        return len(self._node_addrs) if self.unbounded else self.capacity

    def addresses(self) -> set:
        """Every cacheable line this queue synchronizes or stores through."""
        if self.unbounded:
            return {self.head_line, self.tail_line, self.pool_line,
                    *self._node_addrs}
        return {self.head_line, self.tail_line, *self.slots}

    # ------------------------------------------------------------------

    def push(self, core: int, payload: bytes):
        """Generator. Returns "ok" or "full" (bounded mode only)."""
        if len(payload) > MAX_QUEUE_PAYLOAD:
            raise SimFault(f"payload over {MAX_QUEUE_PAYLOAD} bytes")
        self._ensure_init(core)
        if self.unbounded:
            return (yield from self._push_linked(core, payload))
        return (yield from self._push_ring(core, payload))

    def pop(self, core: int):
        """Generator. Returns payload bytes or None when empty."""
        self._ensure_init(core)
        if self.unbounded:
            return (yield from self._pop_linked(core))
        return (yield from self._pop_ring(core))

    # ---- bounded ring -------------------------------------------------

    def _push_ring(self, core, payload):
        fab = self.sys.fabric
        while True:
            data, lat = fab.core_load(core, self.tail_line)
            yield lat
            t = _word(data, 0)
            data, lat = fab.core_load(core, self.head_line)
            yield lat
            h = _word(data, 0)
            if t - h >= self.capacity:
                return "full"
            ok, lat = fab.core_rmw(core, self.tail_line, t, t + 1)
            yield lat
            if ok:
                break
        slot = self.slots[t % self.capacity]
        line = bytearray(LINE)
        line[:len(payload)] = payload
        line[_LEN_OFF] = len(payload)
        line[_SEQ_OFF:_SEQ_OFF + 8] = (t + 1).to_bytes(8, "little")
        lat = fab.core_store(core, slot, bytes(line))
        yield lat
        return "ok"

    def _pop_ring(self, core):
        fab = self.sys.fabric
        data, lat = fab.core_load(core, self.head_line)
        yield lat
        h = _word(data, 0)
        data, lat = fab.core_load(core, self.tail_line)
        yield lat
        t = _word(data, 0)
        if h >= t:
            return None
        slot = self.slots[h % self.capacity]
        data, lat = fab.core_load(core, slot)
        yield lat
        if _word(data, _SEQ_OFF) != h + 1:
            return None  # claimed but not yet published
        ok, lat = fab.core_rmw(core, self.head_line, h, h + 1)
        yield lat
        if not ok:
            return None  # another consumer won; caller retries
        return bytes(data[:data[_LEN_OFF]])

    # ---- unbounded linked queue ---------------------------------------

    def _push_linked(self, core, payload):
        fab = self.sys.fabric
        # claim a node from the pool (one shared pool-top word, CAS guarded)
        while True:
            data, lat = fab.core_load(core, self.pool_line)
            yield lat
            stamp = _word(data, 0)
            ok, lat = fab.core_rmw(core, self.pool_line, stamp, stamp + 1)
            yield lat
            if ok:
                break
        node = self._new_node_addr()
        line = bytearray(LINE)
        line[:len(payload)] = payload
        line[_NODE_LEN_OFF:_NODE_LEN_OFF + 2] = len(payload).to_bytes(2, "little")
        lat = fab.core_store(core, node, bytes(line))
        yield lat
        # swing the tail pointer to the new node, then link the predecessor
        while True:
            data, lat = fab.core_load(core, self.tail_line)
            yield lat
            t = _word(data, 0)
            ok, lat = fab.core_rmw(core, self.tail_line, t, node)
            yield lat
            if ok:
                break
        lat = fab.core_store_word(core, t + _NEXT_OFF, node)
        yield lat
        return "ok"

    def _pop_linked(self, core):
        fab = self.sys.fabric
        data, lat = fab.core_load(core, self.head_line)
        yield lat
        h = _word(data, 0)
        data, lat = fab.core_load(core, h)
        yield lat
        nxt = _word(data, _NEXT_OFF)
        if nxt == 0:
            return None
        ok, lat = fab.core_rmw(core, self.head_line, h, nxt)
        yield lat
        if not ok:
            return None
        data, lat = fab.core_load(core, nxt)
        yield lat
        n = int.from_bytes(data[_NODE_LEN_OFF:_NODE_LEN_OFF + 2], "little")
        payload = bytes(data[:n])
        # the old dummy returns to the pool
        while True:
            pdata, lat = fab.core_load(core, self.pool_line)
            yield lat
            stamp = _word(pdata, 0)
            ok, lat = fab.core_rmw(core, self.pool_line, stamp, stamp + 1)
            yield lat
            if ok:
                break
        self._free_nodes.append(h)
        return payload


# convenience wrappers matching the operation names used elsewhere

def cas_push(system, core, queue: CasRingQueue, payload: bytes):
    return queue.push(core, payload)


def cas_pop(system, core, queue: CasRingQueue):
    return queue.pop(core)


# ----------------------------------------------------------------------
# locks

LOCK_KINDS = ("cas_lock", "ticket_lock", "spin_lock")


class Lock:
    """One lock instance; the words live in a single shared line."""

    def __init__(self, system, kind: str = "cas_lock"):
        if kind not in LOCK_KINDS:
            raise ValueError(f"unknown lock kind {kind!r}")
        self.sys = system
        self.kind = kind
        self.line = system.alloc_lines(1)
        self.holder: int | None = None
        self._init_done = False

    def acquire(self, core: int):
        """Generator; returns the acquire latency in cycles."""
        fab = self.sys.fabric
        rng = self.sys.rng
        start = self.sys.engine.now
        if self.kind == "ticket_lock":
            while True:
                data, lat = fab.core_load(core, self.line)
                yield lat
                t = _word(data, 0)
                ok, lat = fab.core_rmw(core, self.line, t, t + 1)
                yield lat
                if ok:
                    break
                yield rng.randrange(1, 8)
            # low word is next-ticket; serving lives beside it at +8.
            # spin on serving until our ticket comes up
            while True:
                data, lat = fab.core_load(core, self.line)
                yield lat
                if _word(data, 8) == t:
                    break
                yield rng.randrange(2, 10)
        elif self.kind == "cas_lock":
            while True:
                data, lat = fab.core_load(core, self.line)
                yield lat
                if _word(data, 0) == 0:
                    ok, lat = fab.core_rmw(core, self.line, 0, 1)
                    yield lat
                    if ok:
                        break
                yield rng.randrange(2, 10)
        else:  # spin_lock: raw test-and-set, no read-before-write
            while True:
                ok, lat = fab.core_rmw(core, self.line, 0, 1)
                yield lat
                if ok:
                    break
                yield rng.randrange(1, 6)
        if self.holder is not None:
            raise SimFault(f"lock grabbed while held by core {self.holder}")
        self.holder = core
        return self.sys.engine.now - start

    def release(self, core: int):
        """Generator; mutual exclusion is checked, not assumed."""
        if self.holder != core:
            raise SimFault(f"release by core {core}, holder is {self.holder}")
        self.holder = None
        fab = self.sys.fabric
        if self.kind == "ticket_lock":
            data, lat = fab.core_load(core, self.line)
            yield lat
            serving = _word(data, 8)
            lat = fab.core_store_word(core, self.line + 8, serving + 1)
            yield lat
        else:
            lat = fab.core_store_word(core, self.line, 0)
            yield lat
        return None


def lockhammer_sweep(kind: str, core_counts, *, iterations: int = 40,
                     crit_cycles: int = 30, think_cycles: int = 20,
                     config=None, seed: int = 0) -> list[dict]:
    """Contention sweep: rows of (cores, ns_per_lock, mean acquire cycles).

    ns_per_lock is wall time times cores over total acquisitions, the mean
    interval between a given core's successive critical sections.
    """
    from .system import System

    rows = []
    for n in core_counts:
        sysm = System(config, seed=seed)
        if n > sysm.cfg.num_cores:
            raise ValueError(f"core count {n} exceeds {sysm.cfg.num_cores}")
        lock = Lock(sysm, kind)
        acquire_lats = []

        def hammer(core):
            rng = sysm.rng
            for _ in range(iterations):
                lat = yield from lock.acquire(core)
                acquire_lats.append(lat)
                yield crit_cycles
                yield from lock.release(core)
                yield think_cycles + rng.randrange(0, 8)

        for core in range(n):
            sysm.spawn(hammer(core))
        wall = sysm.run()
        total = n * iterations
        rows.append({
            "kind": kind,
            "cores": n,
            "ns_per_lock": sysm.cfg.ns(wall * n / total),
            "acquire_mean_cycles": sum(acquire_lats) / len(acquire_lats),
            "wall_cycles": wall,
        })
    return rows
