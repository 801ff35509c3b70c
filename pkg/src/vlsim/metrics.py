"""Experiment driver: manifests, comparison reports and CSV/JSON export.

A manifest fully determines a run (config, workloads, backends, seed), and
is copied next to the outputs so any report can be regenerated bit for bit.
Normalized columns divide by the CAS backend's value for the same workload.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .fabric import SimConfig
from .workloads import BACKENDS, BenchResult, WorkloadSpec, run_workload

REPORT_COLUMNS = (
    "workload", "backend", "wall_cycles", "speedup", "snoops", "snoops_norm",
    "invalidations", "upgrades", "mem_transactions", "mem_norm",
    "messages", "checksum",
)

BASELINE_BACKEND = "cas"


class ManifestError(ValueError):
    """Malformed manifest; the message names the offending key."""


@dataclass
class RunManifest:
    workloads: list[dict]
    backends: list[str] = field(default_factory=lambda: ["vl", "cas"])
    seed: int = 0
    out_dir: str = "out"
    emit_trace: bool = False
    sim: dict = field(default_factory=dict)
    sim_config_path: str | None = None

    @classmethod
    def from_file(cls, path) -> "RunManifest":
        try:
            raw = json.loads(open(path).read())
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None
        except OSError as e:
            raise ManifestError(f"{path}: {e}") from None
        return cls.from_dict(raw, where=str(path))

    @classmethod
    def from_dict(cls, raw: dict, where: str = "manifest") -> "RunManifest":
        if not isinstance(raw, dict):
            raise ManifestError(f"{where}: top level must be an object")
        workloads = raw.get("workloads")
        if not isinstance(workloads, list) or not workloads:
            raise ManifestError(f"{where}: 'workloads' must be a non-empty list")
        for i, w in enumerate(workloads):
            if not isinstance(w, dict) or "name" not in w:
                raise ManifestError(f"{where}: workloads[{i}] needs a 'name'")
        backends = raw.get("backends", ["vl", "cas"])
        for b in backends:
            if b not in BACKENDS:
                raise ManifestError(f"{where}: unknown backend {b!r}")
        return cls(
            workloads=workloads,
            backends=list(backends),
            seed=int(raw.get("seed", 0)),
            out_dir=str(raw.get("out_dir", "out")),
            emit_trace=bool(raw.get("emit_trace", False)),
            sim=dict(raw.get("sim", {})),
            sim_config_path=raw.get("sim_config"),
        )

    def sim_config(self) -> SimConfig:
        if self.sim_config_path:
            return SimConfig.from_file(self.sim_config_path)
        return SimConfig(**self.sim) if self.sim else SimConfig()

    def to_dict(self) -> dict:
        return {
            "workloads": self.workloads, "backends": self.backends,
            "seed": self.seed, "out_dir": self.out_dir,
            "emit_trace": self.emit_trace, "sim": self.sim,
            "sim_config": self.sim_config_path,
        }


@dataclass
class ComparisonReport:
    rows: list[dict]

    @classmethod
    def build(cls, results: list[BenchResult]) -> "ComparisonReport":
        base: dict[str, BenchResult] = {
            r.name: r for r in results if r.backend == BASELINE_BACKEND}

        def norm(val, ref):
            if ref:
                return val / ref
            return 0.0 if val == 0 else float("inf")

        rows = []
        for r in results:
            b = base.get(r.name)
            rows.append({
                "workload": r.name,
                "backend": r.backend,
                "wall_cycles": r.wall_cycles,
                "speedup": norm(b.wall_cycles, r.wall_cycles) if b else 0.0,
                "snoops": r.stats.snoops,
                "snoops_norm": norm(r.stats.snoops, b.stats.snoops) if b else 0.0,
                "invalidations": r.stats.invalidations,
                "upgrades": r.stats.upgrades_s_to_e,
                "mem_transactions": r.stats.mem_transactions,
                "mem_norm": norm(r.stats.mem_transactions, b.stats.mem_transactions) if b else 0.0,
                "messages": r.messages_total,
                "checksum": r.checksum,
            })
        return cls(rows)

    def row(self, workload: str, backend: str) -> dict:
        for r in self.rows:
            if r["workload"] == workload and r["backend"] == backend:
                return r
        raise KeyError((workload, backend))


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def export_csv(rows: list[dict], path, columns=None) -> None:
    cols = list(columns) if columns else list(REPORT_COLUMNS)
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row.get(c, "")) for c in cols) + "\n")


def export_json(rows: list[dict], path) -> None:
    with open(path, "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
        f.write("\n")


def import_json(path) -> list[dict]:
    return json.loads(open(path).read())


def run_manifest(manifest: RunManifest) -> tuple[ComparisonReport, list[BenchResult]]:
    cfg = manifest.sim_config()
    results = []
    for wdict in manifest.workloads:
        for backend in manifest.backends:
            kwargs = dict(wdict)
            kwargs["backend"] = backend
            kwargs.setdefault("seed", manifest.seed)
            spec = WorkloadSpec(**kwargs)
            results.append(run_workload(spec, cfg))
    return ComparisonReport.build(results), results


def cli_run(manifest: RunManifest) -> int:
    """Execute a manifest and write report.csv / report.json plus a copy of
    the manifest itself into the output directory.  Returns the exit code."""
    from .workloads import WorkloadCheckError

    out_dir = os.environ.get("VLSIM_OUT_DIR", manifest.out_dir)
    os.makedirs(out_dir, exist_ok=True)
    try:
        report, results = run_manifest(manifest)
    except WorkloadCheckError as e:
        print(f"semantic check failed: {e}")
        return 1
    export_csv(report.rows, os.path.join(out_dir, "report.csv"))
    export_json(report.rows, os.path.join(out_dir, "report.json"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    if manifest.emit_trace:
        for res in results:
            # rebuild with tracing on; traces are line-oriented text
            cfg = manifest.sim_config()
            spec_kwargs = next(dict(w) for w in manifest.workloads
                               if w["name"] == res.name)
            spec_kwargs["backend"] = res.backend
            spec_kwargs.setdefault("seed", manifest.seed)
            _write_trace(WorkloadSpec(**spec_kwargs), cfg,
                         os.path.join(out_dir, f"{res.name}_{res.backend}.trace"))
    return 0


def _write_trace(spec: WorkloadSpec, cfg: SimConfig, path) -> None:
    from .system import System
    from .workloads import _RUNNERS

    system = System(cfg, seed=spec.seed, trace=True)
    _RUNNERS[spec.name](spec, system)
    with open(path, "w") as f:
        for line in system.fabric.trace_lines:
            f.write(line + "\n")
