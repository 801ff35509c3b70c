"""Software layer over the queue hardware: SQI naming, device-address
mapping, per-thread user-space rings, the in-line control-region codec, and
the enqueue/dequeue protocol user code calls.

A device address packs, from low to high bits: 6 zero bits (64 B alignment),
a 6-bit endpoint offset within a page, a 6-bit page index, the SQI field
(bits ``n_bit:18``), and a device id field (bits ``j_bit:n_bit+1``) that must
decode to zero because only one device is modeled.  A reserved high base bit
keeps the whole range disjoint from cacheable memory.

Messages travel as full 64-byte lines.  The two most significant bytes are
the control region: 2 bits of element-size code, 6 bits holding the offset
of the payload head, and a reserved byte.  Payload bytes fill the data
region from the high end downward, so an all-zero line unambiguously means
"empty".

Endpoints are single-owner, and a core's select/push/fetch sequences must
not interleave: the selected-address latch is per-core state, exactly as in
the hardware, where a thread switch would clear it.  One simulation actor
per core, driving that core's endpoints back to back, is the supported
shape (it is how all the bundled workloads run).
"""

from __future__ import annotations

from dataclasses import dataclass

from .fabric import DEVICE_SPACE_BASE, LINE, ZERO_LINE, SimFault

SLOTS_PER_PAGE = 64
PAGES_PER_SQI = 32


@dataclass(frozen=True)
class DeviceAddress:
    vlrd_id: int
    sqi: int
    page: int
    offset: int


@dataclass(frozen=True)
class AddressMap:
    """Bit-field geometry for device addresses.

    Defaults give 256 SQIs (``n_bit=25``) and a 4-bit device field
    (``j_bit=29``).  The documented small configuration (16 SQIs with
    ``n_bit=22, j_bit=26``) is accepted as well.
    """

    n_bit: int = 25
    j_bit: int = 29
    base: int = DEVICE_SPACE_BASE

    def __post_init__(self):
        if not (18 <= self.n_bit < self.j_bit <= 39):
            raise ValueError("require 18 <= n_bit < j_bit <= 39")

    @property
    def sqi_bits(self) -> int:
        return self.n_bit - 18 + 1

    @property
    def vlrd_bits(self) -> int:
        return self.j_bit - self.n_bit

    @property
    def num_sqis(self) -> int:
        return 1 << self.sqi_bits

    def encode(self, vlrd_id: int, sqi: int, page: int, offset: int) -> int:
        if not 0 <= vlrd_id < (1 << self.vlrd_bits):
            raise ValueError(f"vlrd_id {vlrd_id} out of range")
        if not 0 <= sqi < self.num_sqis:
            raise ValueError(f"sqi {sqi} out of range")
        if not 0 <= page < 64:
            raise ValueError(f"page {page} out of range")
        if not 0 <= offset < SLOTS_PER_PAGE:
            raise ValueError(f"offset {offset} out of range")
        return (self.base | (vlrd_id << (self.n_bit + 1)) | (sqi << 18)
                | (page << 12) | (offset << 6))

    def decode(self, pa: int) -> DeviceAddress:
        if pa & self.base == 0:
            raise ValueError(f"{pa:#x} is not a device address")
        body = pa ^ self.base
        if body & 0x3F:
            raise ValueError(f"device address {pa:#x} not 64 B aligned")
        if body >> (self.j_bit + 1):
            raise ValueError(f"device address {pa:#x} has bits above J set")
        return DeviceAddress(
            vlrd_id=(body >> (self.n_bit + 1)) & ((1 << self.vlrd_bits) - 1),
            sqi=(body >> 18) & ((1 << self.sqi_bits) - 1),
            page=(body >> 12) & 0x3F,
            offset=(body >> 6) & 0x3F,
        )

    def is_device(self, pa: int) -> bool:
        return bool(pa & self.base)


# ----------------------------------------------------------------------
# control-region codec

SIZE_CODES = (1, 2, 4, 8)  # byte, halfword, word, doubleword


def encode_control(payload: bytes) -> bytes:
    """Pack 1..62 payload bytes into a line with its control region set."""
    n = len(payload)
    if not 1 <= n <= 62:
        raise ValueError(f"payload must be 1..62 bytes, got {n}")
    head = 62 - n
    if n % 8 == 0:
        size_code = 3
    elif n % 4 == 0:
        size_code = 2
    elif n % 2 == 0:
        size_code = 1
    else:
        size_code = 0
    line = bytearray(LINE)
    line[head:62] = payload
    line[63] = (size_code << 6) | head
    return bytes(line)


def decode_control(line: bytes):
    """Recover the payload from a line; an all-zero line decodes as None."""
    if len(line) != LINE:
        raise ValueError("control decode needs a full 64 B line")
    if line == ZERO_LINE:
        return None
    head = line[63] & 0x3F
    if head > 61:
        raise ValueError(f"corrupt control region: head offset {head}")
    return bytes(line[head:62])


# ----------------------------------------------------------------------
# registry

class SqiRegistry:
    """Name to SQI mapping plus per-SQI endpoint slot bookkeeping.

    Pages are claimed on demand and tagged by role at first use, so producer
    and consumer endpoints always live on disjoint page indices.
    """

    def __init__(self, num_sqis: int = 256):
        self.num_sqis = num_sqis
        self._names: dict[str, int] = {}
        self._handles: dict[int, int] = {}
        self._modes: dict[int, str] = {}
        self._pages: dict[int, list] = {}  # sqi -> [role or None] * PAGES_PER_SQI
        self._bits: dict[int, list] = {}   # sqi -> [int bit-vector] * PAGES_PER_SQI

    def open(self, name: str, mode: str = "read-write") -> int:
        if mode not in ("read", "write", "read-write"):
            raise ValueError(f"bad mode {mode!r}")
        sqi = self._names.get(name)
        if sqi is not None:
            self._handles[sqi] += 1
            if self._modes[sqi] != mode and mode == "read-write":
                self._modes[sqi] = mode
            return sqi
        used = set(self._names.values())
        sqi = next((i for i in range(self.num_sqis) if i not in used), None)
        if sqi is None:
            raise ValueError(f"all {self.num_sqis} queue ids are in use")
        self._names[name] = sqi
        self._handles[sqi] = 1
        self._modes[sqi] = mode
        self._pages[sqi] = [None] * PAGES_PER_SQI
        self._bits[sqi] = [0] * PAGES_PER_SQI
        return sqi

    def close(self, name: str):
        sqi = self._names.get(name)
        if sqi is None:
            raise ValueError(f"unknown queue {name!r}")
        self._handles[sqi] -= 1
        if self._handles[sqi] == 0:
            del self._names[name]
            for table in (self._handles, self._modes, self._pages, self._bits):
                table.pop(sqi, None)

    def mode(self, sqi: int) -> str:
        return self._modes[sqi]

    def map_endpoint(self, sqi: int, prot: str) -> tuple[int, int]:
        """Claim the lowest free (page, offset) slot for the given role."""
        if sqi not in self._handles:
            raise ValueError(f"sqi {sqi} is not open")
        if prot not in ("read", "write"):
            raise ValueError(f"bad prot {prot!r}")
        opened = self._modes[sqi]
        if opened != "read-write" and opened != prot:
            raise ValueError(f"sqi {sqi} opened {opened!r}, cannot map {prot!r}")
        role = "producer" if prot == "write" else "consumer"
        pages = self._pages[sqi]
        bits = self._bits[sqi]
        for page in range(PAGES_PER_SQI):
            if pages[page] is None or pages[page] == role:
                vec = bits[page]
                if vec == (1 << SLOTS_PER_PAGE) - 1:
                    continue
                off = (~vec & (vec + 1)).bit_length() - 1  # lowest clear bit
                bits[page] = vec | (1 << off)
                pages[page] = role
                return page, off
        raise ValueError(f"sqi {sqi}: all endpoint slots taken for {role}s")

    def unmap(self, sqi: int, page: int, offset: int):
        self._bits[sqi][page] &= ~(1 << offset)
        if self._bits[sqi][page] == 0:
            self._pages[sqi][page] = None

    def dump(self) -> str:
        lines = []
        for name, sqi in sorted(self._names.items()):
            used = sum(bin(v).count("1") for v in self._bits[sqi])
            lines.append(f"{name} sqi={sqi} mode={self._modes[sqi]} "
                         f"handles={self._handles[sqi]} endpoints={used}")
        return "\n".join(lines)


# ----------------------------------------------------------------------
# endpoints

@dataclass
class Endpoint:
    sqi: int
    role: str  # "producer" or "consumer"
    device_va: int
    page: int
    offset: int
    ring: list
    owner_core: int
    cursor: int = 0
    # consumer side: lines [cursor, cursor+armed) hold registered demands or
    # not-yet-consumed data, in ring order; matches the device's FIFO
    armed: int = 0

    def advance(self):
        self.cursor = (self.cursor + 1) % len(self.ring)

    @property
    def line_addr(self) -> int:
        return self.ring[self.cursor]

    def reset_arming(self):
        """Forget registered demands (after a context swap or eviction)."""
        self.armed = 0


class VlQueues:
    """Queue endpoint manager bound to one simulated system."""

    DEFAULT_RING_LINES = 8

    def __init__(self, system):
        self.sys = system
        self.registry = SqiRegistry(num_sqis=min(system.addr_map.num_sqis,
                                                 system.device.num_sqi))

    def open(self, name: str, mode: str = "read-write") -> int:
        return self.registry.open(name, mode)

    def close(self, name: str):
        self.registry.close(name)

    def endpoint(self, sqi: int, prot: str, core: int,
                 ring_lines: int | None = None) -> Endpoint:
        page, offset = self.registry.map_endpoint(sqi, prot)
        device_va = self.sys.addr_map.encode(0, sqi, page, offset)
        n = ring_lines or self.DEFAULT_RING_LINES
        base = self.sys.alloc_lines(n, page_aligned=True, core=core)
        ring = [base + i * LINE for i in range(n)]
        role = "producer" if prot == "write" else "consumer"
        return Endpoint(sqi=sqi, role=role, device_va=device_va,
                        page=page, offset=offset, ring=ring, owner_core=core)

    def unmap(self, ep: Endpoint):
        self.registry.unmap(ep.sqi, ep.page, ep.offset)

    # -- the user-facing protocol; both are generators for the timeline ----

    def enqueue(self, ep: Endpoint, payload: bytes):
        """Stage the payload in the cursor line and push it to the device.

        Returns "ok" (cursor advanced, line left zeroed and exclusive) or
        "full" (device back-pressure; the staged line is intact for retry).
        """
        if ep.role != "producer":
            raise SimFault("enqueue on a non-producer endpoint")
        sys = self.sys
        addr = ep.line_addr
        lat = sys.fabric.core_store(ep.owner_core, addr, encode_control(payload))
        yield lat
        yield from sys.isa.vl_select(ep.owner_core, addr)
        status = yield from sys.isa.vl_push(ep.owner_core, ep.device_va)
        if status == 0:
            ep.advance()
            return "ok"
        return "full"

    def _extend_arming(self, ep: Endpoint, limit: int | None = None):
        """Register demands forward from the armed window's end, in ring
        order, stopping at the first device NACK.  Keeping registrations in
        visiting order is what lets the device's FIFO matching land each
        injection in the line the consumer will inspect next.  A line still
        holding unconsumed data (possible after a loss realignment) ends
        the window: arming it would let a later injection overwrite it."""
        sys = self.sys
        cap = len(ep.ring) if limit is None else min(limit, len(ep.ring))
        while ep.armed < cap:
            addr = ep.ring[(ep.cursor + ep.armed) % len(ep.ring)]
            held = sys.fabric.line_data(ep.owner_core, addr)
            if held is not None and decode_control(held) is not None:
                break
            yield from sys.isa.vl_select(ep.owner_core, addr)
            status = yield from sys.isa.vl_fetch(ep.owner_core, ep.device_va)
            if status != 0:
                break
            ep.armed += 1

    def _realign_and_arm(self, ep: Endpoint):
        """Nothing is armed; before registering demands, move the cursor to
        the oldest delivered-but-unconsumed line, if any.  Deliveries land
        in demand registration order, which was ring order, so the first
        line with data ahead of the cursor holds the oldest message; empty
        lines skipped here rejoin the rotation once the window extends."""
        sys = self.sys
        for k in range(len(ep.ring)):
            addr = ep.ring[(ep.cursor + k) % len(ep.ring)]
            data, lat = sys.fabric.core_load(ep.owner_core, addr)
            yield lat
            if decode_control(data) is not None:
                ep.cursor = (ep.cursor + k) % len(ep.ring)
                return None
        yield from self._extend_arming(ep)
        return None

    def dequeue(self, ep: Endpoint):
        """Inspect the cursor line; consume it and re-extend the armed
        window if data arrived.

        Returns the payload bytes, or None when the line is still empty (in
        which case arming is topped up so the device can inject).  A cursor
        line that is empty, unarmed and inside the window means its demand
        died with a rejected injection (eviction or context swap): the ring
        is disarmed so the stale registrations drain through rejections,
        and the next call realigns the cursor and re-arms in visit order.
        """
        if ep.role != "consumer":
            raise SimFault("dequeue on a non-consumer endpoint")
        sys = self.sys
        core = ep.owner_core
        addr = ep.line_addr
        data, lat = sys.fabric.core_load(core, addr)
        yield lat
        payload = decode_control(data)
        if payload is None:
            if sys.fabric.is_pushable(core, addr):
                return None  # armed and waiting
            # re-read with no timeline gap: an injection may have landed
            # during the load's latency, which is not a lost demand
            fresh = sys.fabric.line_data(core, addr)
            if fresh is not None and decode_control(fresh) is not None:
                return None  # data just arrived; next call consumes it
            if ep.armed > 0:
                for line in ep.ring:
                    sys.fabric.set_pushable(core, line, False)
                ep.armed = 0
                return None
            yield from self._realign_and_arm(ep)
            return None
        lat = sys.fabric.core_store(core, addr, ZERO_LINE)
        yield lat
        ep.advance()
        ep.armed = max(0, ep.armed - 1)
        yield from self._extend_arming(ep)
        return payload
