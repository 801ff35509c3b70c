"""Command-line entry points: run a manifest, run a sweep, dump a trace."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .baselines import LOCK_KINDS, lockhammer_sweep
from .metrics import ManifestError, RunManifest, cli_run, export_csv
from .vlrd import VlrdDevice
from .workloads import run_scaling

SWEEP_COLUMNS = {
    "lockhammer": ["kind", "cores", "ns_per_lock", "acquire_mean_cycles", "wall_cycles"],
    "bitonic": ["workload", "backend", "threads", "wall_cycles", "snoops",
                "invalidations", "upgrades", "mem_transactions", "messages"],
    "producer_scaling": ["workload", "backend", "threads", "producers",
                         "wall_cycles", "push_mean_cycles",
                         "invalidations_per_push", "upgrades_per_push",
                         "snoops", "messages"],
}


def golden_pipeline_trace() -> list[str]:
    """Replay the reference 5-cycle mapping scenario: two buffered pull
    requests (queue ids 1 and 0), then pushed lines for queues 1, 2 and 1.
    Returns the stage-by-stage trace lines."""
    from .endpoints import DeviceAddress

    def pa(sqi):
        return DeviceAddress(vlrd_id=0, sqi=sqi, page=0, offset=0)

    dev = VlrdDevice(num_sqi=16, buf_entries=16)
    dev.accept_consumer_request(pa(1), 0x10000, core=3)
    dev.accept_consumer_request(pa(0), 0x20000, core=4)
    dev.accept_producer_packet(pa(1), bytes(range(64)))
    dev.accept_producer_packet(pa(2), bytes(64))
    dev.accept_producer_packet(pa(1), bytes(64))
    return [dev.pipeline_tick().line() for _ in range(5)]


def _cmd_run(args) -> int:
    try:
        manifest = RunManifest.from_file(args.manifest)
    except ManifestError as e:
        print(f"manifest error: {e}", file=sys.stderr)
        return 2
    return cli_run(manifest)


def _cmd_sweep(args) -> int:
    try:
        raw = json.loads(open(args.manifest).read())
    except (OSError, json.JSONDecodeError) as e:
        print(f"manifest error: {args.manifest}: {e}", file=sys.stderr)
        return 2
    sweep = raw.get("sweep")
    if not isinstance(sweep, dict) or "kind" not in sweep:
        print("manifest error: 'sweep.kind' is required", file=sys.stderr)
        return 2
    kind = sweep["kind"]
    seed = int(raw.get("seed", 0))
    out_dir = os.environ.get("VLSIM_OUT_DIR", raw.get("out_dir", "out"))
    os.makedirs(out_dir, exist_ok=True)
    if kind == "lockhammer":
        lock = sweep.get("lock", "cas_lock")
        if lock not in LOCK_KINDS:
            print(f"manifest error: unknown lock {lock!r}", file=sys.stderr)
            return 2
        rows = lockhammer_sweep(lock, sweep.get("core_counts", [1, 2, 4, 8, 14]),
                                seed=seed)
        cols = SWEEP_COLUMNS["lockhammer"]
    elif kind in ("bitonic", "producer_scaling"):
        rows = run_scaling(kind, sweep.get("thread_counts", [2, 4, 8, 16]),
                           sweep.get("backend", "vl"),
                           messages=sweep.get("messages"), seed=seed)
        cols = SWEEP_COLUMNS[kind]
    else:
        print(f"manifest error: unknown sweep kind {kind!r}", file=sys.stderr)
        return 2
    path = os.path.join(out_dir, f"sweep_{kind}.csv")
    export_csv(rows, path, columns=cols)
    print(path)
    return 0


def _cmd_trace(args) -> int:
    if args.scenario != "pipeline-golden":
        print(f"unknown scenario {args.scenario!r}; available: pipeline-golden",
              file=sys.stderr)
        return 2
    lines = golden_pipeline_trace()
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vlsim",
        description="Deterministic simulator for a hardware-routed cross-core "
                    "message-queue architecture, with software-queue baselines.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run manifest (JSON)")
    p_run.add_argument("manifest")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="execute a sweep manifest (JSON)")
    p_sweep.add_argument("manifest")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_trace = sub.add_parser("trace", help="dump a named device scenario trace")
    p_trace.add_argument("scenario")
    p_trace.add_argument("-o", "--out", default=None)
    p_trace.set_defaults(fn=_cmd_trace)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
