"""flowprobe: SDN flow table simulator and timing-based inference toolkit."""

from .attacker import (
    AttackError,
    BootstrapParams,
    BudgetExhausted,
    FeasibilityVerdict,
    InfeasibleRate,
    InferenceReport,
    JumpNeverObserved,
    ProbeSession,
    RttThresholds,
    TimeoutDisabled,
    bootstrap_thresholds,
    check_feasibility,
    infer_fifo,
    infer_lru,
    measure_hard_timeout,
    measure_idle_timeout,
)
from .experiments import (
    AttackConfig,
    Scenario,
    SweepResult,
    rtt_characterization,
    run_scenario,
    run_suite,
    write_sweep_csv,
)
from .flowtable import (
    FIFO,
    LRU,
    DuplicateEntryError,
    FlowEntry,
    FlowKey,
    FlowTable,
)
from .netsim import (
    BackgroundWorkload,
    LatencyModel,
    RttSample,
    SwitchSimulator,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackError",
    "BackgroundWorkload",
    "BootstrapParams",
    "BudgetExhausted",
    "DuplicateEntryError",
    "FeasibilityVerdict",
    "FIFO",
    "FlowEntry",
    "FlowKey",
    "FlowTable",
    "InfeasibleRate",
    "InferenceReport",
    "JumpNeverObserved",
    "LatencyModel",
    "LRU",
    "ProbeSession",
    "RttSample",
    "RttThresholds",
    "Scenario",
    "SweepResult",
    "SwitchSimulator",
    "TimeoutDisabled",
    "bootstrap_thresholds",
    "check_feasibility",
    "infer_fifo",
    "infer_lru",
    "measure_hard_timeout",
    "measure_idle_timeout",
    "rtt_characterization",
    "run_scenario",
    "run_suite",
    "write_sweep_csv",
]
