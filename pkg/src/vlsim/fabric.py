"""Transaction-level model of cores, private caches, a shared cache and the
coherence interconnect between them.

Every core-visible access goes through :class:`Fabric`, which keeps per-line
MESI state, charges fixed latencies per hop, and counts the coherence events
the rest of the simulator reasons about: snoops, invalidations, shared to
exclusive upgrades, and memory transactions.  The fabric also implements the
two non-standard transactions the queue hardware relies on: directed line
injection into a private cache (cache stashing) and device-side zeroing of a
pushed line.

There is no interconnect topology; a remote hop costs ``lat_c2c`` no matter
which cores are involved.  State mutates only through the public operations,
in call order, so identical call sequences produce identical state and
counters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

LINE = 64
ZERO_LINE = bytes(LINE)

# cacheable addresses live below this; everything above is device space
DEVICE_SPACE_BASE = 1 << 40


class SimFault(Exception):
    """A guarded precondition of the model was violated by the caller."""


@dataclass
class SimConfig:
    """Sizes, latencies (cycles) and the clock for one simulated system.

    The defaults describe a 16-core part with 32 KiB 2-way private caches,
    a 1 MiB shared cache, and a core-to-core transfer cost calibrated so one
    unsynchronized line handoff lands in the 22-34 ns window at 2 GHz.
    """

    num_cores: int = 16
    l1_lines: int = 512
    l1_assoc: int = 2
    l2_lines: int = 16384
    lat_l1: int = 2
    lat_l2: int = 12
    lat_mem: int = 100
    lat_c2c: int = 24
    lat_vlrd_roundtrip: int = 14
    clock_ghz: float = 2.0

    def __post_init__(self):
        for lat in ("lat_l1", "lat_l2", "lat_mem", "lat_c2c", "lat_vlrd_roundtrip"):
            if getattr(self, lat) <= 0:
                raise ValueError(f"{lat} must be > 0")
        if not (self.lat_l1 < self.lat_l2 < self.lat_mem):
            raise ValueError("latencies must satisfy lat_l1 < lat_l2 < lat_mem")
        if self.num_cores < 1:
            raise ValueError("num_cores must be >= 1")
        if self.l1_assoc < 1 or self.l1_lines % self.l1_assoc != 0:
            raise ValueError("l1_lines must be a positive multiple of l1_assoc")
        if self.l2_lines < 1:
            raise ValueError("l2_lines must be >= 1")
        if self.clock_ghz <= 0:
            raise ValueError("clock_ghz must be > 0")

    def ns(self, cycles: float) -> float:
        return cycles / self.clock_ghz

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        """Load from JSON (``.json``) or ``key=value`` lines (# comments)."""
        import json

        text = open(path).read()
        if str(path).endswith(".json"):
            raw = json.loads(text)
        else:
            raw = {}
            for lineno, line in enumerate(text.splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, val = (part.strip() for part in line.split("=", 1))
                raw[key] = val
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in known:
                raise ValueError(f"{path}: unknown config key {key!r}")
            kwargs[key] = float(val) if key == "clock_ghz" else int(val)
        return cls(**kwargs)


class OpLatency:
    """Per-operation latency accumulator (count / total / min / max)."""

    __slots__ = ("count", "total", "min", "max")

    def __init__(self):
        self.count = 0
        self.total = 0
        self.min = None
        self.max = None

    def record(self, cycles: int):
        self.count += 1
        self.total += cycles
        self.min = cycles if self.min is None else min(self.min, cycles)
        self.max = cycles if self.max is None else max(self.max, cycles)

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def __repr__(self):
        return f"OpLatency(count={self.count}, mean={self.mean:.1f})"


@dataclass
class StatCounters:
    """Coherence and memory event counters for one run.

    All counters are monotonically non-decreasing while a simulation runs.
    ``injections_accepted``/``injections_rejected`` track the directed
    stashing path, which is deliberately invisible to the snoop counters.
    """

    snoops: int = 0
    invalidations: int = 0
    upgrades_s_to_e: int = 0
    mem_transactions: int = 0
    cycles: int = 0
    injections_accepted: int = 0
    injections_rejected: int = 0
    op_latencies: dict = field(default_factory=dict)

    def record_op(self, kind: str, cycles: int):
        lat = self.op_latencies.get(kind)
        if lat is None:
            lat = self.op_latencies[kind] = OpLatency()
        lat.record(cycles)

    def copy(self) -> "StatCounters":
        return copy.deepcopy(self)


class L1Line:
    __slots__ = ("addr", "state", "data", "selected", "pushable")

    def __init__(self, addr, state, data):
        self.addr = addr
        self.state = state  # "M", "E" or "S"; absence from the cache means I
        self.data = data
        self.selected = False
        self.pushable = False


class CoreCache:
    """Set-associative private cache with LRU order per set."""

    __slots__ = ("num_sets", "assoc", "sets", "lines", "pushable_addrs")

    def __init__(self, num_lines, assoc):
        self.num_sets = num_lines // assoc
        self.assoc = assoc
        self.sets = [dict() for _ in range(self.num_sets)]
        self.lines: dict[int, L1Line] = {}
        self.pushable_addrs: set[int] = set()

    def set_of(self, addr) -> dict:
        return self.sets[(addr // LINE) % self.num_sets]

    def touch(self, addr):
        s = self.set_of(addr)
        line = s.pop(addr)
        s[addr] = line

    def victim(self, addr):
        """Address to evict before inserting ``addr``, or None."""
        s = self.set_of(addr)
        if len(s) < self.assoc:
            return None
        return next(iter(s))

    def insert(self, line: L1Line):
        self.set_of(line.addr)[line.addr] = line
        self.lines[line.addr] = line

    def remove(self, addr) -> L1Line:
        line = self.lines.pop(addr)
        del self.set_of(addr)[addr]
        self.pushable_addrs.discard(addr)
        return line


class Fabric:
    """The shared-memory side of the simulator: caches, counters, injection."""

    def __init__(self, config: SimConfig | None = None, *, now_fn=None, trace: bool = False):
        self.cfg = config or SimConfig()
        self.stats = StatCounters()
        self.mem: dict[int, bytes] = {}
        # shared cache: addr -> [dirty, data]; insertion order is LRU order
        self.l2: dict[int, list] = {}
        self.l1 = [CoreCache(self.cfg.l1_lines, self.cfg.l1_assoc)
                   for _ in range(self.cfg.num_cores)]
        self._sharers: dict[int, set[int]] = {}
        self.now_fn = now_fn or (lambda: 0)
        self.trace_lines: list[str] | None = [] if trace else None
        # per-address accounting used by the zero-shared-state check
        self.addr_invalidations: dict[int, int] = {}
        self.addr_upgrades: dict[int, int] = {}
        self.addr_touchers: dict[int, set[int]] = {}

    # ------------------------------------------------------------------
    # bookkeeping helpers

    def _check_line_addr(self, addr):
        if addr % LINE != 0:
            raise SimFault(f"address {addr:#x} is not 64 B aligned")
        if addr >= DEVICE_SPACE_BASE:
            raise SimFault(f"address {addr:#x} is not cacheable memory")

    def _touch_addr(self, addr, core):
        t = self.addr_touchers.get(addr)
        if t is None:
            self.addr_touchers[addr] = {core}
        else:
            t.add(core)

    def _trace(self, kind, core, addr, detail):
        if self.trace_lines is not None:
            self.trace_lines.append(f"{self.now_fn()} {kind} {core} {addr:#x} {detail}")

    def _l2_upsert(self, addr, data, dirty):
        entry = self.l2.pop(addr, None)
        if entry is not None:
            entry[0] = entry[0] or dirty
            entry[1] = data
            self.l2[addr] = entry
        else:
            self.l2[addr] = [dirty, data]
            if len(self.l2) > self.cfg.l2_lines:
                vaddr = next(iter(self.l2))
                vdirty, vdata = self.l2.pop(vaddr)
                if vdirty:
                    self.mem[vaddr] = vdata
                    self.stats.mem_transactions += 1

    def _evict_line(self, core, addr, *, count_writeback=True):
        line = self.l1[core].remove(addr)
        holders = self._sharers.get(addr)
        if holders is not None:
            holders.discard(core)
            if not holders:
                del self._sharers[addr]
        if line.state == "M":
            self._l2_upsert(addr, line.data, True)
            if count_writeback:
                self.stats.mem_transactions += 1
        return line

    def _invalidate_remote(self, addr, requester):
        """Invalidate every other core's copy; returns the freshest data seen."""
        data = None
        dirty = False
        holders = self._sharers.get(addr)
        if not holders:
            return None, False
        for core in sorted(holders - {requester}):
            line = self.l1[core].remove(addr)
            self.stats.snoops += 1
            self.stats.invalidations += 1
            self.addr_invalidations[addr] = self.addr_invalidations.get(addr, 0) + 1
            if line.state == "M":
                data, dirty = line.data, True
            elif data is None:
                data = line.data
        self._sharers[addr] = {requester} if requester in holders else set()
        if not self._sharers[addr]:
            del self._sharers[addr]
        return data, dirty

    def _insert(self, core, addr, state, data) -> None:
        cache = self.l1[core]
        victim = cache.victim(addr)
        if victim is not None:
            self._evict_line(core, victim)
        cache.insert(L1Line(addr, state, data))
        self._sharers.setdefault(addr, set()).add(core)

    def _fill_below(self, core, addr):
        """Fetch data from L2 or memory; returns (data, extra_latency)."""
        entry = self.l2.get(addr)
        if entry is not None:
            # refresh LRU position
            self.l2.pop(addr)
            self.l2[addr] = entry
            return entry[1], self.cfg.lat_l2
        data = self.mem.get(addr, ZERO_LINE)
        self.stats.mem_transactions += 1
        self._l2_upsert(addr, data, False)
        return data, self.cfg.lat_mem

    def _acquire(self, core, addr, *, modify: bool):
        """Obtain ``addr`` with exclusive ownership (M if ``modify`` else E).

        Returns (line, latency).  Pays for and counts all coherence effects:
        remote invalidations, the upgrade if the caller held the line Shared,
        and a fill from the shared cache or memory when no copy is on chip.
        """
        cache = self.l1[core]
        line = cache.lines.get(addr)
        lat = self.cfg.lat_l1
        if line is not None:
            if line.state in ("M", "E"):
                if modify:
                    line.state = "M"
                cache.touch(addr)
                return line, lat
            # upgrade from Shared: invalidate the other sharers
            self.stats.upgrades_s_to_e += 1
            self.addr_upgrades[addr] = self.addr_upgrades.get(addr, 0) + 1
            self._invalidate_remote(addr, core)
            lat += self.cfg.lat_c2c
            line.state = "M" if modify else "E"
            cache.touch(addr)
            return line, lat
        holders = self._sharers.get(addr)
        if holders:
            data, dirty = self._invalidate_remote(addr, core)
            lat += self.cfg.lat_c2c
            if dirty and not modify:
                # keep the line clean in E; the dirty bytes move down a level
                self._l2_upsert(addr, data, True)
                dirty = False
            state = "M" if (modify or dirty) else "E"
        else:
            data, extra = self._fill_below(core, addr)
            lat += extra
            state = "M" if modify else "E"
        self._insert(core, addr, state, data)
        return cache.lines[addr], lat

    # ------------------------------------------------------------------
    # public operations

    def core_load(self, core, addr):
        """Read a full line; returns (bytes, latency)."""
        self._check_line_addr(addr)
        self._touch_addr(addr, core)
        cache = self.l1[core]
        line = cache.lines.get(addr)
        if line is not None:
            cache.touch(addr)
            self._trace("load", core, addr, f"hit {line.state}")
            return line.data, self.cfg.lat_l1
        lat = self.cfg.lat_l1
        data = None
        holders = self._sharers.get(addr)
        if holders:
            owner = None
            for c in sorted(holders):
                if self.l1[c].lines[addr].state in ("M", "E"):
                    owner = c
                    break
            if owner is not None:
                oline = self.l1[owner].lines[addr]
                self.stats.snoops += 1
                if oline.state == "M":
                    self._l2_upsert(addr, oline.data, True)
                else:
                    self._l2_upsert(addr, oline.data, False)
                oline.state = "S"
                data = oline.data
                lat += self.cfg.lat_c2c
            else:
                entry = self.l2.get(addr)
                if entry is not None:
                    data = entry[1]
                    lat += self.cfg.lat_l2
                else:
                    data, extra = self._fill_below(core, addr)
                    lat += extra
            state = "S"
        else:
            data, extra = self._fill_below(core, addr)
            lat += extra
            state = "E"
        self._insert(core, addr, state, data)
        self._trace("load", core, addr, f"miss fill {state}")
        return data, lat

    def core_store(self, core, addr, value: bytes):
        """Write a full line; returns latency."""
        self._check_line_addr(addr)
        if len(value) != LINE:
            raise SimFault("store value must be exactly 64 bytes")
        self._touch_addr(addr, core)
        line, lat = self._acquire(core, addr, modify=True)
        line.data = bytes(value)
        self._trace("store", core, addr, "")
        return lat

    def core_store_word(self, core, word_addr, value: int):
        """Write one 8-byte word without disturbing the rest of the line."""
        if word_addr % 8 != 0:
            raise SimFault("word store must be 8 B aligned")
        addr = word_addr & ~(LINE - 1)
        self._check_line_addr(addr)
        self._touch_addr(addr, core)
        line, lat = self._acquire(core, addr, modify=True)
        off = word_addr - addr
        buf = bytearray(line.data)
        buf[off:off + 8] = (value & (2 ** 64 - 1)).to_bytes(8, "little")
        line.data = bytes(buf)
        self._trace("store_w", core, addr, f"+{off}")
        return lat

    def core_rmw(self, core, word_addr, expected: int, new: int):
        """Compare-and-swap one 8-byte word; returns (success, latency).

        The line is acquired in M whether or not the compare succeeds, so a
        failed CAS pays the same coherence cost as a successful one.  Any
        acquisition that had to promote over live remote copies counts as a
        shared-to-exclusive upgrade: the event tracks the issued promotion,
        not the compare outcome, which is how contended atomics show up in
        performance counters.
        """
        if word_addr % 8 != 0:
            raise SimFault("rmw must target an 8 B aligned word")
        addr = word_addr & ~(LINE - 1)
        self._check_line_addr(addr)
        self._touch_addr(addr, core)
        was_resident = addr in self.l1[core].lines
        had_remote = bool(self._sharers.get(addr, set()) - {core})
        line, lat = self._acquire(core, addr, modify=True)
        if not was_resident and had_remote:
            # the in-place S case is counted inside _acquire; this is the
            # promotion that arrived as a remote transfer
            self.stats.upgrades_s_to_e += 1
            self.addr_upgrades[addr] = self.addr_upgrades.get(addr, 0) + 1
        off = word_addr - addr
        old = int.from_bytes(line.data[off:off + 8], "little")
        success = old == expected
        if success:
            buf = bytearray(line.data)
            buf[off:off + 8] = (new & (2 ** 64 - 1)).to_bytes(8, "little")
            line.data = bytes(buf)
        self._trace("rmw", core, addr, f"+{off} {'ok' if success else 'fail'}")
        return success, lat

    def inject_line(self, target_core, addr, data: bytes) -> bool:
        """Directed stash into the target's private cache.

        Accepted only if the line is resident with its pushable bit set; no
        other cache is probed, so an injection never counts as a snoop.
        """
        if len(data) != LINE:
            raise SimFault("injected data must be exactly 64 bytes")
        cache = self.l1[target_core]
        line = cache.lines.get(addr)
        if line is None or not line.pushable:
            self.stats.injections_rejected += 1
            self._trace("inject", target_core, addr, "rejected")
            return False
        line.data = bytes(data)
        line.state = "E"
        line.pushable = False
        cache.pushable_addrs.discard(addr)
        cache.touch(addr)
        # the injected bytes become the canonical copy below L1 as well
        self._l2_upsert(addr, line.data, True)
        self.stats.injections_accepted += 1
        self._trace("inject", target_core, addr, "accepted")
        return True

    def device_zero_line(self, core, addr):
        """Zero a line just handed to the device, leaving it Exclusive clean."""
        cache = self.l1[core]
        line = cache.lines.get(addr)
        if line is None:
            self._insert(core, addr, "E", ZERO_LINE)
        else:
            line.data = ZERO_LINE
            line.state = "E"
            cache.touch(addr)
        self._l2_upsert(addr, ZERO_LINE, True)
        self._trace("zero", core, addr, "")

    def evict(self, core, addr):
        """Drop a resident line, writing dirty data back."""
        self._check_line_addr(addr)
        if addr not in self.l1[core].lines:
            raise SimFault(f"evict of non-resident line {addr:#x}")
        self._evict_line(core, addr)
        self._trace("evict", core, addr, "")

    def snapshot_stats(self) -> StatCounters:
        snap = self.stats.copy()
        snap.cycles = self.now_fn()
        return snap

    # ------------------------------------------------------------------
    # introspection used by the queue layers and by tests

    def is_pushable(self, core, addr) -> bool:
        line = self.l1[core].lines.get(addr)
        return bool(line and line.pushable)

    def set_pushable(self, core, addr, value: bool):
        line = self.l1[core].lines.get(addr)
        if line is None:
            if value:
                raise SimFault("cannot arm a non-resident line")
            return
        line.pushable = value
        if value:
            self.l1[core].pushable_addrs.add(addr)
        else:
            self.l1[core].pushable_addrs.discard(addr)

    def clear_all_pushable(self, core):
        cache = self.l1[core]
        for addr in list(cache.pushable_addrs):
            cache.lines[addr].pushable = False
        cache.pushable_addrs.clear()

    def set_selected(self, core, addr, value: bool):
        line = self.l1[core].lines.get(addr)
        if line is not None:
            line.selected = value

    def line_state(self, core, addr) -> str:
        line = self.l1[core].lines.get(addr)
        return line.state if line is not None else "I"

    def line_data(self, core, addr) -> bytes | None:
        line = self.l1[core].lines.get(addr)
        return line.data if line is not None else None

    def check_coherence(self):
        """Assert the MESI safety invariants over every tracked line."""
        for addr, holders in self._sharers.items():
            states = {c: self.l1[c].lines[addr].state for c in holders}
            exclusive = [c for c, s in states.items() if s in ("M", "E")]
            if exclusive and len(holders) != 1:
                raise AssertionError(
                    f"{addr:#x}: M/E holder coexists with sharers: {states}")
            if len(exclusive) > 1:
                raise AssertionError(f"{addr:#x}: multiple exclusive holders: {states}")
            for c in holders:
                assert self.l1[c].lines[addr].addr == addr
