"""The routing device: buffers producer lines and consumer pulls and matches
them per shared-queue id (SQI) through a three-stage address-mapping pipeline.

Structures mirror the hardware: a link table with one row of list heads and
tails per SQI, a producer buffer with IN / LINK / OUT partitions, a consumer
buffer, and eight registers (CIFR/CIHR/CITR, PIFR/PIHR/PITR, POHR/POTR).
Buffer slots are shared across SQIs and chained as linked lists rather than
contiguous FIFOs.

Pipeline semantics per tick (stage 3 commits first, so same-cycle writes are
visible to stages 1 and 2, the forwarding the hardware does with RAW paths):

* stage 1 pops the oldest head entry across the two input lists and reads the
  link-table row for its SQI;
* stage 2 decides hit or miss: a consumer entry hits iff the row has buffered
  producer data, a producer entry hits iff the row has a waiting request;
* stage 3 either appends the entry to its per-SQI list (miss) or pairs it
  with the opposite head, fills the producer entry's OUT fields, and queues
  it for emission (hit).

Emission pops the OUT list head and attempts a directed injection.  A
rejected injection re-links the data at the head of its SQI's LINK list; any
younger already-mapped entries of the same SQI are recalled behind it and
their consumer demands are replayed, which preserves per-SQI delivery order
across rejections.
"""

from __future__ import annotations

from dataclasses import dataclass

from .engine import Ticket

ACK = "ACK"
NACK = "NACK"


def bit_widths(buf_entries: int = 256, num_sqi: int = 256, target_bits: int = 52) -> dict:
    """Storage cost per structure entry, in bits, for a given geometry.

    Producer entries share one next-pointer slot across the input, LINK and
    OUT list roles because an entry is only ever on one list at a time.
    """
    ptr = max(1, (buf_entries - 1).bit_length())
    sqi = max(1, (num_sqi - 1).bit_length())
    return {
        "pointer": ptr,
        "linktab_row": 4 * ptr,
        # valid flag + per-SQI and input-order pointers + the target address
        "consbuf_entry": 1 + 2 * ptr + target_bits,
        # data + sqi + out target + mapped index + shared next + 2 flags
        "prodbuf_entry": 512 + sqi + target_bits + ptr + ptr + 2,
        "prodbuf_data": 512,
    }


class LinkRow:
    __slots__ = ("prod_head", "prod_tail", "cons_head", "cons_tail")

    def __init__(self):
        self.prod_head = None
        self.prod_tail = None
        self.cons_head = None
        self.cons_tail = None


class ConsSlot:
    __slots__ = ("valid", "sqi", "cons_tgt", "core", "next_l", "next_in", "seq")

    def __init__(self):
        self.valid = False
        self.sqi = None
        self.cons_tgt = None
        self.core = None
        self.next_l = None
        self.next_in = None
        self.seq = 0


class ProdSlot:
    __slots__ = ("valid", "sqi", "data", "next_in", "next_l",
                 "out_valid", "cons_tgt", "cons_core", "mapped", "next_out", "seq")

    def __init__(self):
        self.valid = False
        self.sqi = None
        self.data = None
        self.next_in = None
        self.next_l = None
        self.out_valid = False
        self.cons_tgt = None
        self.cons_core = None
        self.mapped = None
        self.next_out = None
        self.seq = 0


class _Stage:
    """In-flight pipeline entry with the values latched so far."""

    __slots__ = ("kind", "slot", "sqi", "hit", "matched")

    def __init__(self, kind, slot, sqi):
        self.kind = kind  # "prod" or "cons"
        self.slot = slot
        self.sqi = sqi
        self.hit = False
        self.matched = None


@dataclass
class PipelineTraceRecord:
    cycle: int
    stage1: str
    stage2: str
    stage3: str

    def line(self) -> str:
        return f"cycle {self.cycle} | S1: {self.stage1} | S2: {self.stage2} | S3: {self.stage3}"


def _idx(i) -> str:
    """Buffer indices render 1-based, as the hardware documentation counts."""
    return "NULL" if i is None else str(i + 1)


class _Packet:
    __slots__ = ("arrival", "kind", "sqi", "data", "cons_tgt", "core", "ticket")

    def __init__(self, arrival, kind, sqi, data, cons_tgt, core, ticket):
        self.arrival = arrival
        self.kind = kind
        self.sqi = sqi
        self.data = data
        self.cons_tgt = cons_tgt
        self.core = core
        self.ticket = ticket


class VlrdDevice:
    """One routing device instance.

    ``injector(core, addr, data) -> bool`` performs the directed stash and
    reports acceptance; ``wake(cycle)`` asks the surrounding simulation to
    step the device at or before the given cycle.  Both default to no-ops so
    the device can be driven standalone by tests and golden-trace tooling.
    """

    def __init__(self, num_sqi: int = 256, buf_entries: int = 256, *,
                 roundtrip: int = 14, injector=None, wake=None):
        if num_sqi < 1:
            raise ValueError("num_sqi must be >= 1")
        if buf_entries < 1:
            raise ValueError("buf_entries must be >= 1")
        if roundtrip < 2:
            raise ValueError("roundtrip must be >= 2")
        self.num_sqi = num_sqi
        self.buf_entries = buf_entries
        self.link = [LinkRow() for _ in range(num_sqi)]
        self.cons = [ConsSlot() for _ in range(buf_entries)]
        self.prod = [ProdSlot() for _ in range(buf_entries)]
        self.cifr = 0
        self.cihr = None
        self.citr = None
        self.pifr = 0
        self.pihr = None
        self.pitr = None
        self.pohr = None
        self.potr = None
        self._stage1: _Stage | None = None
        self._stage2: _Stage | None = None
        self._cycle = 0
        self._seq = 0
        self.in_leg = roundtrip // 2
        self.out_leg = roundtrip - self.in_leg
        self.injector = injector or (lambda core, addr, data: False)
        self.wake = wake or (lambda at: None)
        self._prod_port: list[_Packet] = []
        self._cons_port: list[_Packet] = []
        self._replay: list[tuple] = []
        self.trace_sink = None
        self.acks = 0
        self.nacks = 0
        self.emitted = 0

    # ------------------------------------------------------------------
    # free-slot management

    def _next_free(self, buf, start):
        n = len(buf)
        for k in range(1, n + 1):
            i = (start + k) % n
            if not buf[i].valid:
                return i
        return None

    def _free_cons(self, idx):
        slot = self.cons[idx]
        slot.valid = False
        slot.sqi = slot.cons_tgt = slot.core = None
        slot.next_l = slot.next_in = None
        if self.cifr is None:
            self.cifr = idx

    def _free_prod(self, idx):
        slot = self.prod[idx]
        slot.valid = False
        slot.sqi = None
        slot.data = None
        slot.next_in = slot.next_l = None
        slot.out_valid = False
        slot.cons_tgt = slot.cons_core = slot.mapped = slot.next_out = None
        if self.pifr is None:
            self.pifr = idx

    # ------------------------------------------------------------------
    # port operations (synchronous accept decisions)

    def _check_pa(self, pa):
        if getattr(pa, "vlrd_id", 0) != 0:
            raise ValueError(f"packet addressed to vlrd {pa.vlrd_id}, only device 0 exists")
        if not (0 <= pa.sqi < self.num_sqi):
            raise ValueError(f"sqi {pa.sqi} outside this device's link table")

    def accept_producer_packet(self, pa, line: bytes) -> str:
        """Buffer one pushed line; NACK is the back-pressure signal."""
        self._check_pa(pa)
        if self.pifr is None:
            self.nacks += 1
            return NACK
        idx = self.pifr
        slot = self.prod[idx]
        slot.valid = True
        slot.sqi = pa.sqi
        slot.data = bytes(line)
        slot.next_in = None
        self._seq += 1
        slot.seq = self._seq
        if self.pihr is None:
            self.pihr = self.pitr = idx
        else:
            self.prod[self.pitr].next_in = idx
            self.pitr = idx
        self.pifr = self._next_free(self.prod, idx)
        self.acks += 1
        return ACK

    def accept_consumer_request(self, pa, cons_tgt: int, core: int = 0) -> str:
        """Buffer one pull request (target line address plus requesting core).

        While recalled demands are waiting to re-enter, fresh requests are
        NACKed so they cannot overtake older demands on the same queue.
        """
        self._check_pa(pa)
        if cons_tgt % 64 != 0:
            raise ValueError("consumer target must be 64 B aligned")
        if self._replay:
            self.nacks += 1
            return NACK
        return self._buffer_request(pa.sqi, cons_tgt, core)

    def _buffer_request(self, sqi, cons_tgt, core) -> str:
        if self.cifr is None:
            self.nacks += 1
            return NACK
        idx = self.cifr
        slot = self.cons[idx]
        slot.valid = True
        slot.sqi = sqi
        slot.cons_tgt = cons_tgt
        slot.core = core
        slot.next_l = None
        slot.next_in = None
        self._seq += 1
        slot.seq = self._seq
        if self.cihr is None:
            self.cihr = self.citr = idx
        else:
            self.cons[self.citr].next_in = idx
            self.citr = idx
        self.cifr = self._next_free(self.cons, idx)
        self.acks += 1
        return ACK

    # ------------------------------------------------------------------
    # pipeline

    def pipeline_tick(self) -> PipelineTraceRecord:
        """Advance all three stages one cycle."""
        self._cycle += 1
        written_row = None

        # ---- stage 3: commit the oldest in-flight entry.  The hit decision
        # is re-validated against the live row: a rejection recall in the
        # emit phase may have drained or reordered what stage 2 matched.
        e3 = self._stage2
        self._stage2 = None
        if e3 is None:
            s3_txt = "idle"
        else:
            row = self.link[e3.sqi]
            written_row = e3.sqi
            if e3.kind == "cons":
                if row.prod_head is not None:
                    p = row.prod_head
                    new_head = self.prod[p].next_l
                    row.prod_head = new_head
                    if new_head is None:
                        row.prod_tail = None
                        s3_txt = f"linkTab[{e3.sqi}].prodHead ← NULL"
                    else:
                        s3_txt = f"linkTab[{e3.sqi}].prodHead ← {_idx(new_head)}"
                    self.prod[p].next_l = None
                    self._set_out(p, self.cons[e3.slot].cons_tgt,
                                  self.cons[e3.slot].core, e3.slot)
                    s3_txt += f"; set prodBuf[{p + 1}].OUT; " + self._out_reg_txt(p)
                    self._free_cons(e3.slot)
                else:
                    s3_txt = self._append_cons(e3.slot, row, e3.sqi)
            else:  # producer data
                if row.cons_head is not None:
                    c = row.cons_head
                    new_head = self.cons[c].next_l
                    row.cons_head = new_head
                    if new_head is None:
                        row.cons_tail = None
                        s3_txt = f"linkTab[{e3.sqi}].consHead ← NULL"
                    else:
                        s3_txt = f"linkTab[{e3.sqi}].consHead ← {_idx(new_head)}"
                    self._set_out(e3.slot, self.cons[c].cons_tgt, self.cons[c].core, c)
                    s3_txt += f"; set prodBuf[{e3.slot + 1}].OUT; " + self._out_reg_txt(e3.slot)
                    self._free_cons(c)
                else:
                    s3_txt = self._append_prod(e3.slot, row, e3.sqi)

        # ---- stage 2: hit/miss decision on the middle entry
        e2 = self._stage1
        self._stage1 = None
        if e2 is None:
            s2_txt = "idle"
        else:
            row = self.link[e2.sqi]
            if e2.kind == "cons":
                if row.prod_head is not None:
                    e2.hit = True
                    e2.matched = row.prod_head
                    s2_txt = (f"consBuf[{e2.slot + 1}] hit: "
                              f"read prodBuf[{e2.matched + 1}] for nextL")
                else:
                    s2_txt = f"consBuf[{e2.slot + 1}] miss: append to the linked list in consBuf"
            else:
                if row.cons_head is not None:
                    e2.hit = True
                    e2.matched = row.cons_head
                    s2_txt = (f"prodBuf[{e2.slot + 1}] hit: "
                              f"read consBuf[{e2.matched + 1}] for consTgt, nextL")
                else:
                    s2_txt = f"prodBuf[{e2.slot + 1}] miss: append to the linked list in prodBuf"
            self._stage2 = e2

        # ---- stage 1: arbitrate, pop an input head, read the link row
        entry = self._arbitrate()
        if entry is None:
            s1_txt = "idle"
        else:
            kind, slot, sqi = entry
            row = self.link[sqi]
            raw = " (RAW)" if written_row == sqi else ""
            if kind == "cons":
                s1_txt = (f"read linkTab[{sqi}] for consBuf[{slot + 1}]: "
                          f"prodHead1, consTail1 ← {_idx(row.prod_head)}, "
                          f"{_idx(row.cons_tail)}{raw}; CIHR ← {_idx(self.cihr)}")
            else:
                s1_txt = (f"read linkTab[{sqi}] for prodBuf[{slot + 1}]: "
                          f"consHead1, prodTail1 ← {_idx(row.cons_head)}, "
                          f"{_idx(row.prod_tail)}{raw}; PIHR ← {_idx(self.pihr)}")
            self._stage1 = _Stage(kind, slot, sqi)

        rec = PipelineTraceRecord(self._cycle, s1_txt, s2_txt, s3_txt)
        if self.trace_sink is not None:
            self.trace_sink(rec)
        return rec

    def _arbitrate(self):
        """Oldest arrival across the two input lists; consumers win ties."""
        cons_head = self.cihr
        prod_head = self.pihr
        if cons_head is None and prod_head is None:
            return None
        take_cons = (prod_head is None or
                     (cons_head is not None and
                      self.cons[cons_head].seq <= self.prod[prod_head].seq))
        if take_cons:
            slot = self.cons[cons_head]
            self.cihr = slot.next_in
            if self.cihr is None:
                self.citr = None
            slot.next_in = None
            return ("cons", cons_head, slot.sqi)
        slot = self.prod[prod_head]
        self.pihr = slot.next_in
        if self.pihr is None:
            self.pitr = None
        slot.next_in = None
        return ("prod", prod_head, slot.sqi)

    def _append_cons(self, idx, row, sqi) -> str:
        self.cons[idx].next_l = None
        if row.cons_head is None:
            row.cons_head = row.cons_tail = idx
            return f"linkTab[{sqi}].consHead, consTail ← {_idx(idx)}, {_idx(idx)}"
        prev = row.cons_tail
        self.cons[prev].next_l = idx
        row.cons_tail = idx
        return f"consBuf[{prev + 1}].nextL ← {_idx(idx)}; linkTab[{sqi}].consTail ← {_idx(idx)}"

    def _append_prod(self, idx, row, sqi) -> str:
        self.prod[idx].next_l = None
        if row.prod_head is None:
            row.prod_head = row.prod_tail = idx
            return f"linkTab[{sqi}].prodHead, prodTail ← {_idx(idx)}, {_idx(idx)}"
        prev = row.prod_tail
        self.prod[prev].next_l = idx
        row.prod_tail = idx
        return f"prodBuf[{prev + 1}].nextL ← {_idx(idx)}; linkTab[{sqi}].prodTail ← {_idx(idx)}"

    def _set_out(self, p, cons_tgt, cons_core, mapped):
        slot = self.prod[p]
        slot.out_valid = True
        slot.cons_tgt = cons_tgt
        slot.cons_core = cons_core
        slot.mapped = mapped
        slot.next_out = None
        if self.pohr is None:
            self.pohr = self.potr = p
        else:
            self.prod[self.potr].next_out = p
            self.potr = p

    def _out_reg_txt(self, p) -> str:
        if self.pohr == p and self.potr == p:
            return f"POHR, POTR ← {_idx(p)}, {_idx(p)}"
        return f"POTR ← {_idx(p)}"

    # ------------------------------------------------------------------
    # emission

    def emit_output(self):
        """Try to deliver the OUT head; returns an outcome record or None."""
        if self.pohr is None:
            return None
        p = self.pohr
        slot = self.prod[p]
        self.pohr = slot.next_out
        if self.pohr is None:
            self.potr = None
        slot.next_out = None
        accepted = self.injector(slot.cons_core, slot.cons_tgt, slot.data)
        outcome = {"slot": p, "sqi": slot.sqi, "core": slot.cons_core,
                   "cons_tgt": slot.cons_tgt, "accepted": accepted}
        if accepted:
            self.emitted += 1
            self._free_prod(p)
            return outcome
        self._recall(p)
        return outcome

    def _recall(self, p):
        """Undo the mapping of a rejected entry and of every younger mapped
        entry on the same SQI, restoring LINK order.  Surviving consumer
        demands, both the recalled mappings' and any still queued on the
        row, are replayed through the input path so they match against the
        repopulated LINK list in age order."""
        sqi = self.prod[p].sqi
        recalled = [p]
        # splice same-SQI entries out of the OUT list, preserving order
        prev = None
        cur = self.pohr
        while cur is not None:
            nxt = self.prod[cur].next_out
            if self.prod[cur].sqi == sqi:
                if prev is None:
                    self.pohr = nxt
                else:
                    self.prod[prev].next_out = nxt
                if self.potr == cur:
                    self.potr = prev
                self.prod[cur].next_out = None
                recalled.append(cur)
            else:
                prev = cur
            cur = nxt
        # demands of the younger recalled entries are still live: replay them
        for q in recalled[1:]:
            s = self.prod[q]
            self._replay.append((sqi, s.cons_tgt, s.cons_core))
        # clear OUT fields and re-link at the head of the LINK list, in order
        row = self.link[sqi]
        for q in recalled:
            s = self.prod[q]
            s.out_valid = False
            s.cons_tgt = s.cons_core = s.mapped = None
        for q in reversed(recalled):
            s = self.prod[q]
            s.next_l = row.prod_head
            if row.prod_head is None:
                row.prod_tail = q
            row.prod_head = q
        # drain demands queued on the row: buffered data and buffered
        # requests must never coexist, or later matches would skip the line
        c = row.cons_head
        while c is not None:
            slot = self.cons[c]
            self._replay.append((sqi, slot.cons_tgt, slot.core))
            nxt = slot.next_l
            self._free_cons(c)
            c = nxt
        row.cons_head = row.cons_tail = None

    # ------------------------------------------------------------------
    # timed wrapper: ports with one acceptance per cycle

    def submit_push(self, pa, data: bytes, now: int) -> Ticket:
        self._check_pa(pa)
        ticket = Ticket(self.out_leg)
        arrival = now + self.in_leg
        self._prod_port.append(_Packet(arrival, "prod", pa.sqi, bytes(data), None, None, ticket))
        self.wake(arrival)
        return ticket

    def submit_request(self, pa, cons_tgt: int, core: int, now: int) -> Ticket:
        self._check_pa(pa)
        ticket = Ticket(self.out_leg)
        arrival = now + self.in_leg
        self._cons_port.append(_Packet(arrival, "cons", pa.sqi, None, cons_tgt, core, ticket))
        self.wake(arrival)
        return ticket

    def _drain_replays(self):
        while self._replay and self.cifr is not None:
            sqi, cons_tgt, core = self._replay.pop(0)
            self._buffer_request(sqi, cons_tgt, core)

    def cycle(self, now: int, resolve=None):
        """One device cycle: accept, then tick, then emit."""
        self._drain_replays()
        if self._cons_port and self._cons_port[0].arrival <= now:
            pkt = self._cons_port.pop(0)
            status = self.accept_consumer_request(_ReplayPa(pkt.sqi), pkt.cons_tgt, pkt.core)
            if resolve and pkt.ticket:
                resolve(pkt.ticket, status)
        if self._prod_port and self._prod_port[0].arrival <= now:
            pkt = self._prod_port.pop(0)
            status = self.accept_producer_packet(_ReplayPa(pkt.sqi), pkt.data)
            if resolve and pkt.ticket:
                resolve(pkt.ticket, status)
        self.pipeline_tick()
        self.emit_output()

    def pipeline_busy(self) -> bool:
        return (self._stage1 is not None or self._stage2 is not None
                or self.cihr is not None or self.pihr is not None
                or self.pohr is not None or bool(self._replay))

    def _work_now(self) -> bool:
        # a replay stuck behind a full consumer buffer can only progress
        # once other traffic frees a slot, so it alone never keeps the
        # device spinning
        return (self._stage1 is not None or self._stage2 is not None
                or self.cihr is not None or self.pihr is not None
                or self.pohr is not None
                or (bool(self._replay) and self.cifr is not None))

    def next_event_time(self, now: int):
        """Next cycle needing work, or None when fully idle (sleep)."""
        if self._work_now():
            return now
        arrivals = []
        if self._cons_port:
            arrivals.append(self._cons_port[0].arrival)
        if self._prod_port:
            arrivals.append(self._prod_port[0].arrival)
        if arrivals:
            return max(now, min(arrivals))
        return None

    # ------------------------------------------------------------------
    # introspection

    def prod_occupancy(self) -> int:
        return sum(1 for s in self.prod if s.valid)

    def cons_occupancy(self) -> int:
        return sum(1 for s in self.cons if s.valid)

    def check_integrity(self):
        """Every valid slot reachable from exactly one list (or a pipeline
        latch); free slots from none; no list cycles; capacity respected."""
        seen_cons: dict[int, str] = {}
        seen_prod: dict[int, str] = {}

        def walk(head, nxt, name, seen, limit):
            count = 0
            cur = head
            while cur is not None:
                if cur in seen:
                    raise AssertionError(f"slot {cur} on {name} and {seen[cur]}")
                seen[cur] = name
                count += 1
                if count > limit:
                    raise AssertionError(f"cycle in {name}")
                cur = nxt(cur)

        walk(self.cihr, lambda i: self.cons[i].next_in, "cons-input", seen_cons,
             self.buf_entries)
        walk(self.pihr, lambda i: self.prod[i].next_in, "prod-input", seen_prod,
             self.buf_entries)
        walk(self.pohr, lambda i: self.prod[i].next_out, "out", seen_prod,
             self.buf_entries)
        for sqi, row in enumerate(self.link):
            walk(row.cons_head, lambda i: self.cons[i].next_l, f"cons[{sqi}]",
                 seen_cons, self.buf_entries)
            walk(row.prod_head, lambda i: self.prod[i].next_l, f"prod[{sqi}]",
                 seen_prod, self.buf_entries)
            if (row.cons_head is None) != (row.cons_tail is None):
                raise AssertionError(f"row {sqi} cons head/tail mismatch")
            if (row.prod_head is None) != (row.prod_tail is None):
                raise AssertionError(f"row {sqi} prod head/tail mismatch")
        for stage in (self._stage1, self._stage2):
            if stage is None:
                continue
            seen = seen_cons if stage.kind == "cons" else seen_prod
            if stage.slot in seen:
                raise AssertionError(f"latched slot {stage.slot} also on {seen[stage.slot]}")
            seen[stage.slot] = "latch"
        for i, s in enumerate(self.cons):
            if s.valid and i not in seen_cons:
                raise AssertionError(f"valid consBuf slot {i} unreachable")
            if not s.valid and i in seen_cons:
                raise AssertionError(f"free consBuf slot {i} on {seen_cons[i]}")
        for i, s in enumerate(self.prod):
            if s.valid and i not in seen_prod:
                raise AssertionError(f"valid prodBuf slot {i} unreachable")
            if not s.valid and i in seen_prod:
                raise AssertionError(f"free prodBuf slot {i} on {seen_prod[i]}")
        assert self.prod_occupancy() <= self.buf_entries
        assert self.cons_occupancy() <= self.buf_entries


class _ReplayPa:
    """Minimal decoded-address stand-in used on internal port paths."""

    __slots__ = ("sqi", "vlrd_id")

    def __init__(self, sqi):
        self.sqi = sqi
        self.vlrd_id = 0
