"""Deterministic desk-scale simulator of a hardware-routed cross-core
message-queue architecture: a MESI fabric with directed cache injection, the
routing device with its three-stage mapping pipeline, the select/push/fetch
instruction layer, user-space queue endpoints, and software-queue baselines
running on the same fabric for comparison."""

from .baselines import CasRingQueue, Lock, lockhammer_sweep
from .endpoints import (AddressMap, DeviceAddress, Endpoint, SqiRegistry,
                        decode_control, encode_control)
from .engine import DeadlockError, Engine
from .fabric import Fabric, SimConfig, SimFault, StatCounters
from .isa import VL_DEVICE_NACK, VL_NO_SELECT, VL_OK
from .metrics import ComparisonReport, RunManifest, cli_run, export_csv, export_json
from .system import System
from .vlrd import VlrdDevice, bit_widths
from .workloads import (BenchResult, WorkloadCheckError, WorkloadSpec,
                        run_scaling, run_workload)

__version__ = "0.1.0"

__all__ = [
    "AddressMap", "BenchResult", "CasRingQueue", "ComparisonReport",
    "DeadlockError", "DeviceAddress", "Endpoint", "Engine", "Fabric", "Lock",
    "RunManifest", "SimConfig", "SimFault", "SqiRegistry", "StatCounters",
    "System", "VL_DEVICE_NACK", "VL_NO_SELECT", "VL_OK", "VlrdDevice",
    "WorkloadCheckError", "WorkloadSpec", "bit_widths", "cli_run",
    "decode_control", "encode_control", "export_csv", "export_json",
    "lockhammer_sweep", "run_scaling", "run_workload",
]
