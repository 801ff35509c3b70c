import random

import pytest
from hypothesis import given, settings, strategies as st

from vlsim.fabric import Fabric, SimConfig, SimFault, ZERO_LINE

LINE = 64


def cfg(**kw):
    return SimConfig(**kw)


def line_of(byte):
    return bytes([byte]) * 64


# ----------------------------------------------------------------------
# config validation


def test_config_defaults_are_sane():
    c = cfg()
    assert c.num_cores == 16
    assert c.l1_lines * 64 == 32 * 1024
    assert c.l2_lines * 64 == 1024 * 1024
    assert c.lat_l1 < c.lat_l2 < c.lat_mem


def test_config_rejects_bad_latency_order():
    with pytest.raises(ValueError):
        cfg(lat_l2=1)
    with pytest.raises(ValueError):
        cfg(lat_mem=0)


def test_config_transfer_calibration_window():
    # one unsynchronized handoff: upgrade round trip plus remote fetch
    c = cfg()
    transfer = (c.lat_l1 + c.lat_c2c) * 2
    assert 22.0 <= c.ns(transfer) <= 34.0


def test_config_from_key_value_file(tmp_path):
    p = tmp_path / "sim.cfg"
    p.write_text("num_cores = 4\nlat_l1=1\nlat_l2 = 5  # shared\nlat_mem=50\n")
    c = SimConfig.from_file(p)
    assert (c.num_cores, c.lat_l1, c.lat_l2, c.lat_mem) == (4, 1, 5, 50)


def test_config_from_file_reports_bad_key(tmp_path):
    p = tmp_path / "sim.cfg"
    p.write_text("not_a_field=3\n")
    with pytest.raises(ValueError, match="not_a_field"):
        SimConfig.from_file(p)


# ----------------------------------------------------------------------
# loads and stores


def test_load_miss_fills_exclusive_from_memory():
    fab = Fabric(cfg())
    data, lat = fab.core_load(0, 0x1000)
    assert data == ZERO_LINE
    assert lat == fab.cfg.lat_l1 + fab.cfg.lat_mem
    assert fab.line_state(0, 0x1000) == "E"
    assert fab.stats.mem_transactions == 1


def test_load_hit_exclusive_costs_l1_and_no_snoops():
    fab = Fabric(cfg())
    fab.core_load(0, 0x1000)
    snap = fab.snapshot_stats()
    data, lat = fab.core_load(0, 0x1000)
    assert lat == fab.cfg.lat_l1
    assert fab.stats.snoops == snap.snoops == 0
    assert fab.line_state(0, 0x1000) == "E"


def test_load_downgrades_remote_dirty_owner_to_shared():
    fab = Fabric(cfg())
    fab.core_store(1, 0x2000, line_of(0xAB))
    assert fab.line_state(1, 0x2000) == "M"
    data, lat = fab.core_load(0, 0x2000)
    assert data == line_of(0xAB)
    assert fab.line_state(0, 0x2000) == "S"
    assert fab.line_state(1, 0x2000) == "S"
    assert fab.stats.snoops == 1
    assert fab.stats.invalidations == 0


def test_store_to_shared_counts_upgrade_and_invalidations():
    fab = Fabric(cfg())
    for core in (0, 1, 2):
        fab.core_load(core, 0x3000)
    snap = fab.snapshot_stats()
    lat = fab.core_store(0, 0x3000, line_of(1))
    assert fab.stats.invalidations - snap.invalidations == 2
    assert fab.stats.upgrades_s_to_e - snap.upgrades_s_to_e == 1
    assert fab.stats.snoops - snap.snoops == 2
    assert lat == fab.cfg.lat_l1 + fab.cfg.lat_c2c
    assert fab.line_state(0, 0x3000) == "M"
    assert fab.line_state(1, 0x3000) == "I"


def test_store_to_own_exclusive_is_silent():
    fab = Fabric(cfg())
    fab.core_load(0, 0x4000)
    snap = fab.snapshot_stats()
    lat = fab.core_store(0, 0x4000, line_of(2))
    assert lat == fab.cfg.lat_l1
    assert fab.stats.invalidations == snap.invalidations == 0
    assert fab.line_state(0, 0x4000) == "M"


def test_store_word_preserves_rest_of_line():
    fab = Fabric(cfg())
    fab.core_store(0, 0x5000, line_of(0x77))
    fab.core_store_word(0, 0x5000 + 8, 0xDEAD)
    data, _ = fab.core_load(0, 0x5000)
    assert data[:8] == line_of(0x77)[:8]
    assert int.from_bytes(data[8:16], "little") == 0xDEAD
    assert data[16:] == line_of(0x77)[16:]


# ----------------------------------------------------------------------
# compare and swap


def test_rmw_success_and_failure_both_acquire_modified():
    fab = Fabric(cfg())
    fab.core_store_word(0, 0x6000, 5)
    ok, _ = fab.core_rmw(0, 0x6000, 5, 9)
    assert ok
    ok, _ = fab.core_rmw(1, 0x6000, 5, 11)
    assert not ok
    assert fab.line_state(1, 0x6000) == "M"
    assert fab.line_state(0, 0x6000) == "I"
    data, _ = fab.core_load(1, 0x6000)
    assert int.from_bytes(data[:8], "little") == 9


def test_rmw_uncontended_exclusive_counts_nothing():
    fab = Fabric(cfg())
    fab.core_store_word(0, 0x7000, 1)
    snap = fab.snapshot_stats()
    ok, _ = fab.core_rmw(0, 0x7000, 1, 2)
    assert ok
    assert fab.stats.invalidations == snap.invalidations
    assert fab.stats.upgrades_s_to_e == snap.upgrades_s_to_e


def test_rmw_promotion_over_remote_copy_counts_upgrade():
    fab = Fabric(cfg())
    fab.core_store_word(0, 0x8000, 3)
    snap = fab.snapshot_stats()
    ok, _ = fab.core_rmw(1, 0x8000, 3, 4)
    assert ok
    assert fab.stats.upgrades_s_to_e - snap.upgrades_s_to_e == 1
    assert fab.stats.invalidations - snap.invalidations == 1


def test_rmw_requires_word_alignment():
    fab = Fabric(cfg())
    with pytest.raises(SimFault):
        fab.core_rmw(0, 0x9004, 0, 1)


# ----------------------------------------------------------------------
# injection and eviction


def test_inject_requires_resident_pushable_line():
    fab = Fabric(cfg())
    assert not fab.inject_line(0, 0xA000, line_of(9))
    fab.core_load(0, 0xA000)
    assert not fab.inject_line(0, 0xA000, line_of(9))
    fab.set_pushable(0, 0xA000, True)
    snap = fab.snapshot_stats()
    assert fab.inject_line(0, 0xA000, line_of(9))
    assert fab.line_state(0, 0xA000) == "E"
    assert not fab.is_pushable(0, 0xA000)
    assert fab.line_data(0, 0xA000) == line_of(9)
    # directed: no snoops, no invalidations
    assert fab.stats.snoops == snap.snoops
    assert fab.stats.invalidations == snap.invalidations


def test_double_injection_single_acceptance_either_order():
    # replay both orders through the model; exactly one attempt lands
    for first, second in ((line_of(1), line_of(2)), (line_of(2), line_of(1))):
        fab = Fabric(cfg())
        fab.core_load(0, 0xB000)
        fab.set_pushable(0, 0xB000, True)
        results = [fab.inject_line(0, 0xB000, first),
                   fab.inject_line(0, 0xB000, second)]
        assert results == [True, False]
        assert fab.line_data(0, 0xB000) == first


def test_evict_dirty_counts_one_writeback():
    fab = Fabric(cfg())
    fab.core_store(0, 0xC000, line_of(5))
    snap = fab.snapshot_stats()
    fab.evict(0, 0xC000)
    assert fab.stats.mem_transactions - snap.mem_transactions == 1
    assert fab.line_state(0, 0xC000) == "I"


def test_evict_clears_pushable_so_injection_rejects():
    fab = Fabric(cfg())
    fab.core_load(0, 0xD000)
    fab.set_pushable(0, 0xD000, True)
    fab.evict(0, 0xD000)
    assert not fab.inject_line(0, 0xD000, line_of(3))


def test_evict_non_resident_is_a_fault():
    fab = Fabric(cfg())
    with pytest.raises(SimFault):
        fab.evict(0, 0xE000)


def test_lru_pressure_evicts_oldest_against_reference_model():
    c = cfg(num_cores=1, l1_lines=8, l1_assoc=2, l2_lines=64)
    fab = Fabric(c)
    num_sets = 8 // 2
    base = 0x10000
    same_set = [base + k * 64 * num_sets for k in range(6)]
    rng = random.Random(7)
    reference = []  # LRU order, oldest first
    for _ in range(200):
        addr = rng.choice(same_set)
        fab.core_load(0, addr)
        if addr in reference:
            reference.remove(addr)
        reference.append(addr)
        del reference[:-2]
        resident = {a for a in same_set if fab.line_state(0, a) != "I"}
        assert resident == set(reference)


# ----------------------------------------------------------------------
# counters against an independent tally


def _oracle_tally(script, num_cores):
    """Re-derive the event counts from the op script with a flat directory
    model (no caches, no capacity): the independent bookkeeping route."""
    state = {}  # addr -> {core: "S"|"E"|"M"}
    touched = set()
    snoops = invals = upgrades = mem = 0
    for op, core, addr in script:
        copies = state.setdefault(addr, {})
        mine = copies.get(core, "I")
        remote = {c: s for c, s in copies.items() if c != core}
        if op == "load":
            if mine != "I":
                continue
            owner = [c for c, s in remote.items() if s in "ME"]
            if owner:
                snoops += 1
                copies[owner[0]] = "S"
                copies[core] = "S"
            elif remote:
                copies[core] = "S"
            else:
                if addr not in touched:
                    mem += 1
                copies[core] = "E"
        else:  # store or rmw
            if mine in "ME":
                copies[core] = "M"
            elif mine == "S":
                upgrades += 1
                for c in remote:
                    snoops += 1
                    invals += 1
                    del copies[c]
                copies[core] = "M"
            else:
                if remote:
                    for c in list(remote):
                        snoops += 1
                        invals += 1
                        del copies[c]
                    if op == "rmw":
                        upgrades += 1
                elif op != "store" and addr not in touched:
                    mem += 1
                elif op == "store" and addr not in touched:
                    mem += 1
                copies[core] = "M"
        touched.add(addr)
    return snoops, invals, upgrades, mem


def test_counters_match_independent_event_tally():
    rng = random.Random(123)
    addrs = [0x20000 + i * 64 for i in range(6)]
    script = [(rng.choice(["load", "store", "rmw"]), rng.randrange(4),
               rng.choice(addrs)) for _ in range(600)]
    fab = Fabric(cfg(num_cores=4))
    for op, core, addr in script:
        if op == "load":
            fab.core_load(core, addr)
        elif op == "store":
            fab.core_store(core, addr, line_of(1))
        else:
            fab.core_rmw(core, addr, 0, 1)
    snoops, invals, upgrades, mem = _oracle_tally(script, 4)
    assert fab.stats.snoops == snoops
    assert fab.stats.invalidations == invals
    assert fab.stats.upgrades_s_to_e == upgrades
    assert fab.stats.mem_transactions == mem


def test_snapshot_is_a_copy_and_fresh_sim_is_zero():
    fab = Fabric(cfg())
    snap = fab.snapshot_stats()
    assert (snap.snoops, snap.invalidations, snap.upgrades_s_to_e,
            snap.mem_transactions) == (0, 0, 0, 0)
    fab.core_load(0, 0x1000)
    assert snap.mem_transactions == 0


# ----------------------------------------------------------------------
# safety and conservation properties


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["load", "store", "word", "rmw"]),
                          st.integers(0, 3), st.integers(0, 9),
                          st.integers(0, 255)),
                min_size=1, max_size=120))
def test_conservation_and_mesi_safety(ops):
    c = cfg(num_cores=4, l1_lines=4, l1_assoc=2, l2_lines=8)
    fab = Fabric(c)
    shadow = {}
    for op, core, slot, val in ops:
        addr = 0x40000 + slot * 64
        if op == "load":
            data, _ = fab.core_load(core, addr)
            assert data == shadow.get(addr, ZERO_LINE)
        elif op == "store":
            fab.core_store(core, addr, line_of(val))
            shadow[addr] = line_of(val)
        elif op == "word":
            fab.core_store_word(core, addr, val)
            buf = bytearray(shadow.get(addr, ZERO_LINE))
            buf[0:8] = val.to_bytes(8, "little")
            shadow[addr] = bytes(buf)
        else:
            expected = int.from_bytes(shadow.get(addr, ZERO_LINE)[:8], "little")
            ok, _ = fab.core_rmw(core, addr, expected, val)
            assert ok
            buf = bytearray(shadow.get(addr, ZERO_LINE))
            buf[0:8] = val.to_bytes(8, "little")
            shadow[addr] = bytes(buf)
        fab.check_coherence()


def test_determinism_same_script_same_counters():
    def run():
        fab = Fabric(cfg(num_cores=4))
        rng = random.Random(5)
        for _ in range(400):
            op = rng.choice(["load", "store", "rmw"])
            core = rng.randrange(4)
            addr = 0x50000 + rng.randrange(8) * 64
            if op == "load":
                fab.core_load(core, addr)
            elif op == "store":
                fab.core_store(core, addr, line_of(rng.randrange(256)))
            else:
                fab.core_rmw(core, addr, 0, rng.randrange(100))
        s = fab.snapshot_stats()
        return (s.snoops, s.invalidations, s.upgrades_s_to_e, s.mem_transactions)

    assert run() == run()
