import pytest

from vlsim.workloads import (WorkloadCheckError, WorkloadSpec, make_payload,
                             parse_header, run_scaling, run_workload,
                             stream_checksum)


def small(name, backend="vl", **kw):
    defaults = {"ping_pong": dict(messages=60),
                "halo": dict(messages=6),
                "sweep": dict(messages=6),
                "incast": dict(messages=20),
                "fir": dict(messages=120),
                "bitonic": dict(threads=3),
                "producer_scaling": dict(messages=40, threads=5)}
    args = {"seed": 11}
    args.update(defaults[name])
    args.update(kw)
    return WorkloadSpec(name=name, backend=backend, **args)


def test_spec_validates_names_and_backends():
    with pytest.raises(ValueError):
        WorkloadSpec(name="nope")
    with pytest.raises(ValueError):
        WorkloadSpec(name="halo", backend="magic")
    with pytest.raises(ValueError):
        WorkloadSpec(name="halo", payload_bytes=63)


def test_topologies_match_the_documented_channel_table():
    assert WorkloadSpec(name="ping_pong").channels == [((1, 1), 2)]
    assert WorkloadSpec(name="halo").channels == [((1, 1), 48)]
    assert WorkloadSpec(name="sweep").channels == [((1, 1), 48)]
    assert WorkloadSpec(name="incast").channels == [((15, 1), 1)]
    assert WorkloadSpec(name="fir").channels == [((1, 1), 3)]
    assert WorkloadSpec(name="bitonic").channels == [((1, "N"), 1), (("M", 1), 1)]


def test_payload_header_round_trip():
    p = make_payload(7, 123, 16)
    assert len(p) == 16
    assert parse_header(p) == (7, 123)


def test_checksum_is_merge_order_insensitive_but_producer_order_sensitive():
    a1, a2 = make_payload(1, 0, 8), make_payload(1, 1, 8)
    b1 = make_payload(2, 0, 8)
    assert (stream_checksum({"c": [a1, b1, a2]})
            == stream_checksum({"c": [b1, a1, a2]}))
    assert (stream_checksum({"c": [a1, a2, b1]})
            != stream_checksum({"c": [a2, a1, b1]}))


@pytest.mark.parametrize("name", ["ping_pong", "halo", "sweep", "incast",
                                  "fir", "bitonic"])
def test_workloads_complete_and_agree_across_backends(name):
    results = {b: run_workload(small(name, backend=b)) for b in ("vl", "cas")}
    assert results["vl"].checksum == results["cas"].checksum
    assert results["vl"].messages_total == results["cas"].messages_total
    for res in results.values():
        assert res.wall_cycles > 0
        # work conservation: every channel drained
        assert sum(res.per_channel_delivered.values()) == res.messages_total


def test_lock_backend_runs_ping_pong():
    res = run_workload(small("ping_pong", backend="lock", messages=25))
    assert res.messages_total == 50


def test_vl_runs_have_zero_cross_core_coherence_noise():
    res = run_workload(small("incast"))
    assert res.stats.snoops == 0
    assert res.stats.invalidations == 0
    assert res.stats.upgrades_s_to_e == 0


def test_same_spec_same_seed_is_bit_deterministic():
    a = run_workload(small("incast"))
    b = run_workload(small("incast"))
    assert a.wall_cycles == b.wall_cycles
    assert a.checksum == b.checksum
    assert a.stats.mem_transactions == b.stats.mem_transactions


def test_different_seed_changes_timing_not_semantics():
    a = run_workload(small("ping_pong"))
    b = run_workload(small("ping_pong", seed=99))
    assert a.checksum == b.checksum


def test_bitonic_scaling_speedup_non_decreasing_to_eight_threads():
    rows = run_scaling("bitonic", [2, 4, 8], "vl", seed=7)
    walls = [r["wall_cycles"] for r in rows]
    assert walls[0] >= walls[1] >= walls[2]


def test_bitonic_cas_coherence_grows_faster_than_vl():
    vl = run_scaling("bitonic", [2, 8], "vl", seed=7)
    cas = run_scaling("bitonic", [2, 8], "cas", seed=7)
    for a, b in zip(vl, cas):
        assert b["upgrades"] > a["upgrades"]
        assert b["snoops"] > a["snoops"]


def test_producer_scaling_shapes():
    cas = run_scaling("producer_scaling", [2, 5, 9, 16], "cas",
                      messages=120, seed=3)
    push = [r["push_mean_cycles"] for r in cas]
    assert all(push[i + 1] > push[i] for i in range(len(push) - 1))
    vl = run_scaling("producer_scaling", [2, 5, 9, 16], "vl",
                     messages=120, seed=3)
    vpush = [r["push_mean_cycles"] for r in vl]
    assert max(vpush) <= 1.25 * min(vpush)


def test_semantic_check_failure_raises():
    # ping-pong with a corrupted echo must abort with a diagnostic
    import vlsim.workloads as w

    spec = small("ping_pong", messages=4)
    orig = w.make_payload

    def corrupt(pid, seq, size, body=b""):
        p = orig(pid, seq, size, body)
        return p if seq != 2 or pid != 0 else orig(pid, 3, size, body)

    w.make_payload = corrupt
    try:
        with pytest.raises(WorkloadCheckError):
            run_workload(spec)
    finally:
        w.make_payload = orig
