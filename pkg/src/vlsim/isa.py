"""Core-level queue instructions: select, push and fetch, plus the context
swap guard.

``vl_select`` latches the physical address of a chosen line into a per-core
system register.  ``vl_push`` conditionally writes that line to a device
address as a non-snooping device store and, on acknowledgement, zeroes the
source line.  ``vl_fetch`` arms the selected line (pushable bit) and
registers the pull demand with the device.  Both consumers of the latch
clear it, and a context swap clears the latch and every pushable bit, which
is what makes a pending injection miss and stay with the device.

All three device-facing operations are generators: they yield latencies and
park on a ticket until the device's acknowledgement returns, normally within
``lat_vlrd_roundtrip`` cycles of issue (port back-pressure can stretch it).
"""

from __future__ import annotations

from dataclasses import dataclass

from .fabric import SimFault

VL_OK = 0
VL_NO_SELECT = 1
VL_DEVICE_NACK = 2


@dataclass
class CoreVlState:
    latched_pa: int | None = None
    selected_addr: int | None = None
    pushes_in_flight: int = 0


class VlIsa:
    def __init__(self, system):
        self.sys = system
        self.cores = [CoreVlState() for _ in range(system.cfg.num_cores)]

    def _translate(self, va: int) -> int:
        # identity translation; cacheable space only
        return va

    def vl_select(self, core: int, va: int):
        """Select a line: fetch it Exclusive if absent and latch its PA."""
        if va % 64 != 0:
            raise SimFault(f"select of unaligned address {va:#x}")
        sys = self.sys
        state = self.cores[core]
        if state.selected_addr is not None and state.selected_addr != va:
            sys.fabric.set_selected(core, state.selected_addr, False)
        _, lat = sys.fabric._acquire(core, va, modify=False)
        sys.fabric.set_selected(core, va, True)
        state.selected_addr = va
        state.latched_pa = self._translate(va)
        yield lat
        return None

    def vl_push(self, core: int, device_va: int):
        """Push the selected line to a device address; 0 means success."""
        sys = self.sys
        state = self.cores[core]
        if state.latched_pa is None:
            yield sys.cfg.lat_l1
            return VL_NO_SELECT
        src = state.latched_pa
        state.latched_pa = None
        line = sys.fabric.l1[core].lines.get(src)
        if line is None or line.state == "S":
            line, lat = sys.fabric._acquire(core, src, modify=False)
        else:
            lat = sys.cfg.lat_l1
        data = line.data
        sys.fabric.set_selected(core, src, False)
        state.selected_addr = None
        yield lat
        pa = sys.addr_map.decode(device_va)
        state.pushes_in_flight += 1
        ticket = sys.device.submit_push(pa, data, sys.engine.now)
        yield ticket
        status = ticket.status
        state.pushes_in_flight -= 1
        if status == "ACK":
            sys.fabric.device_zero_line(core, src)
            sys.fabric.stats.record_op("vl_push_ack", sys.cfg.lat_vlrd_roundtrip)
            return VL_OK
        sys.fabric.stats.record_op("vl_push_nack", sys.cfg.lat_vlrd_roundtrip)
        return VL_DEVICE_NACK

    def vl_fetch(self, core: int, device_va: int):
        """Arm the selected line and register the pull demand; 0 on success."""
        sys = self.sys
        state = self.cores[core]
        if state.latched_pa is None:
            yield sys.cfg.lat_l1
            return VL_NO_SELECT
        tgt = state.latched_pa
        state.latched_pa = None
        sys.fabric.set_pushable(core, tgt, True)
        sys.fabric.set_selected(core, tgt, False)
        state.selected_addr = None
        yield sys.cfg.lat_l1
        pa = sys.addr_map.decode(device_va)
        ticket = sys.device.submit_request(pa, tgt, core, sys.engine.now)
        yield ticket
        if ticket.status == "ACK":
            return VL_OK
        # an unregistered armed line could never be filled; disarm it
        sys.fabric.set_pushable(core, tgt, False)
        return VL_DEVICE_NACK

    def context_swap(self, core: int):
        """Clear the latch and every pushable bit; illegal mid-push."""
        state = self.cores[core]
        if state.pushes_in_flight > 0:
            raise SimFault("context swap with pushes in flight")
        state.latched_pa = None
        if state.selected_addr is not None:
            self.sys.fabric.set_selected(core, state.selected_addr, False)
            state.selected_addr = None
        self.sys.fabric.clear_all_pushable(core)
