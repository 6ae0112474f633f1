"""Probe-only inference of flow table capacity and usage.

Everything here observes the switch exclusively through probe RTTs: first a
bootstrap run calibrates the three latency bands (entry present; absent
with space; absent with the table full), then timeout probes recover the
entry lifetime limits, and finally the FIFO or LRU inference loop streams
distinct keys until it has seen the table fill up and then lose one of the
attacker's own entries.

Counting convention: `n1` is the number of distinct attacker keys inserted
before the first full-table classification, `n2` the number inserted before
the probe that revealed an attacker entry was evicted. With an idle
background these equal capacity minus usage and capacity exactly, so the
reported `f_capacity = n2` and `f_other = n2 - n1` are exact; concurrent
insertions by other tenants only ever push both estimates down.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass
from statistics import fmean
from typing import Optional

from .flowtable import FlowKey
from .netsim import (
    ATTACKER_PREFIX,
    KeySequence,
    RttSample,
    SwitchSimulator,
    ms_to_us,
    us_to_ms,
)

STATE_EXIST = "exist"
STATE_NOT_EXIST_NOT_FULL = "not_exist_not_full"
STATE_NOT_EXIST_FULL = "not_exist_full"

STRATEGY_DOUBLING_BISECT = "doubling-then-bisect"


class AttackError(Exception):
    """Base class for domain-level attack failures."""


class JumpNeverObserved(AttackError):
    """Bootstrap exhausted its filler budget without seeing an RTT jump."""


class TimeoutDisabled(AttackError):
    """No expiry was observed up to the probing ceiling."""


class BudgetExhausted(AttackError):
    """The key budget ran out before both detections fired."""


class InfeasibleRate(AttackError):
    """Probe traffic could not complete within the timeout budget."""


@dataclass(frozen=True)
class RttThresholds:
    """Calibrated band centers and the cut points between them (ms).

    classify() maps an RTT below `hit_cut_ms` to entry-present, between the
    cuts to entry-absent-with-space, and above `full_cut_ms` to
    entry-absent-table-full.
    """

    t1_ms: float
    t2_ms: float
    t3_ms: float
    hit_cut_ms: float
    full_cut_ms: float

    def __post_init__(self) -> None:
        if not (self.t1_ms < self.hit_cut_ms < self.t2_ms
                < self.full_cut_ms < self.t3_ms):
            raise ValueError(
                "thresholds must satisfy t1 < hit_cut < t2 < full_cut < t3, got "
                f"{self.t1_ms}, {self.hit_cut_ms}, {self.t2_ms}, "
                f"{self.full_cut_ms}, {self.t3_ms}"
            )

    def classify(self, rtt_us: int) -> str:
        if rtt_us < self.hit_cut_ms * 1000.0:
            return STATE_EXIST
        if rtt_us < self.full_cut_ms * 1000.0:
            return STATE_NOT_EXIST_NOT_FULL
        return STATE_NOT_EXIST_FULL

    @classmethod
    def from_band_centers(cls, t1_ms: float, t2_ms: float, t3_ms: float) -> "RttThresholds":
        """Build thresholds with cuts at the geometric means of the bands."""
        return cls(
            t1_ms=t1_ms,
            t2_ms=t2_ms,
            t3_ms=t3_ms,
            hit_cut_ms=math.sqrt(t1_ms * t2_ms),
            full_cut_ms=math.sqrt(t2_ms * t3_ms),
        )


@dataclass(frozen=True)
class BootstrapParams:
    """Schedule for the two-stream threshold calibration.

    `ts1_ms` is the delay before re-probing the pinned key; `ts2_ms` the gap
    between filler probes, so a run that sends n fillers spans
    (n - 1) * ts2. Both spans must stay under the smallest entry timeout
    for the pinned entry to survive the whole measurement.
    """

    ts1_ms: float = 100.0
    ts2_ms: float = 1.0
    repeat: int = 1
    filler_budget: int = 100_000
    jump_factor: float = 1.5
    min_miss_samples: int = 2
    inter_repeat_wait_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.ts1_ms <= 0 or self.ts2_ms <= 0:
            raise ValueError("ts1_ms and ts2_ms must be positive")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")
        if self.jump_factor <= 1.0:
            raise ValueError("jump_factor must exceed 1.0")

    def filler_span_ms(self, n_fillers: int) -> float:
        return (n_fillers - 1) * self.ts2_ms

    def fits_timeouts(self, n_fillers: int, hard_timeout_ms: float,
                      idle_timeout_ms: float) -> bool:
        """Check the pinned entry survives: ts1 and the filler span must not
        exceed the smallest enabled timeout."""
        finite = [t for t in (hard_timeout_ms, idle_timeout_ms) if t > 0]
        if not finite:
            return True
        limit = min(finite)
        return self.ts1_ms <= limit and self.filler_span_ms(n_fillers) <= limit


@dataclass
class InferenceReport:
    """Outcome of one capacity/usage inference run."""

    policy_assumed: str
    f_capacity: int
    f_other: int
    n1: int
    n2: int
    probes_sent: int
    distinct_keys: int
    reinstalls: int = 0
    timeout_budget_exceeded: bool = False

    def to_dict(self) -> dict:
        return {
            "policy_assumed": self.policy_assumed,
            "f_capacity": self.f_capacity,
            "f_other": self.f_other,
            "n1": self.n1,
            "n2": self.n2,
            "probes_sent": self.probes_sent,
            "distinct_keys": self.distinct_keys,
            "reinstalls": self.reinstalls,
            "timeout_budget_exceeded": self.timeout_budget_exceeded,
        }


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Required vs available probe rate for finishing inside one timeout cycle."""

    v_gen_required: float  # packets per second
    v_gen_available: float
    feasible: bool


class ProbeSession:
    """Single-threaded probe stream bound to one simulator.

    The session owns a virtual-time cursor; each probe is sent at the
    cursor, which then advances by the configured send gap, so a stream of
    back-to-back probes models a sender running flat out at `send_rate_pps`.
    """

    def __init__(self, sim: SwitchSimulator, send_rate_pps: float = 10_000.0):
        if send_rate_pps <= 0:
            raise ValueError("send_rate_pps must be positive")
        self.sim = sim
        self.send_rate_pps = send_rate_pps
        self.send_gap_us = max(1, round(1e6 / send_rate_pps))
        self.now_us = sim.now_us
        self.last_send_us = sim.now_us
        self.probes_sent = 0
        self._keys = KeySequence(ATTACKER_PREFIX)

    def fresh_key(self) -> FlowKey:
        return self._keys.next_key()

    def probe(self, key: FlowKey) -> RttSample:
        sample = self.sim.send_probe(key, self.now_us)
        self.last_send_us = self.now_us
        self.now_us += self.send_gap_us
        self.probes_sent += 1
        return sample

    def wait_us(self, delta_us: int) -> None:
        self.now_us += delta_us

    def wait_until_us(self, t_us: int) -> None:
        if t_us > self.now_us:
            self.now_us = t_us

    def wait_ms(self, delta_ms: float) -> None:
        self.wait_us(ms_to_us(delta_ms))


def bootstrap_thresholds(session: ProbeSession,
                         params: BootstrapParams) -> RttThresholds:
    """Calibrate the three RTT bands by driving the table into overflow.

    Each round pins one fresh key (its first probe samples the miss band,
    its delayed re-probe the hit band), then streams distinct fillers every
    ts2 until one classifies above the running miss-band median by the jump
    factor. The jump is confirmed with an immediately-sent fresh key whose
    RTT becomes the full-band sample; a failed confirmation folds both
    samples back into the miss band and the stream continues.
    """
    t1_samples: list[float] = []
    t2_samples: list[float] = []
    t3_samples: list[float] = []

    for round_no in range(params.repeat):
        if round_no and params.inter_repeat_wait_ms > 0:
            session.wait_ms(params.inter_repeat_wait_ms)

        pinned = session.fresh_key()
        first = session.probe(pinned)
        t2_samples.append(us_to_ms(first.rtt_us))

        session.wait_until_us(first.time_us + ms_to_us(params.ts1_ms))
        re_probe = session.probe(pinned)
        t1_samples.append(us_to_ms(re_probe.rtt_us))

        miss_sorted: list[int] = [first.rtt_us]
        ts2_us = ms_to_us(params.ts2_ms)
        next_send = session.now_us
        fillers = 0
        jumped = False
        while fillers < params.filler_budget:
            session.wait_until_us(next_send)
            sample = session.probe(session.fresh_key())
            fillers += 1
            next_send = sample.time_us + ts2_us
            if len(miss_sorted) >= params.min_miss_samples:
                median = miss_sorted[len(miss_sorted) // 2]
                if sample.rtt_us > params.jump_factor * median:
                    confirm = session.probe(session.fresh_key())
                    fillers += 1
                    if confirm.rtt_us > params.jump_factor * median:
                        t3_samples.append(us_to_ms(confirm.rtt_us))
                        jumped = True
                        break
                    insort(miss_sorted, sample.rtt_us)
                    insort(miss_sorted, confirm.rtt_us)
                    continue
            insort(miss_sorted, sample.rtt_us)
        if not jumped:
            raise JumpNeverObserved(
                f"no RTT jump within {params.filler_budget} fillers"
            )

    return RttThresholds.from_band_centers(
        fmean(t1_samples), fmean(t2_samples), fmean(t3_samples)
    )


def measure_idle_timeout(session: ProbeSession, thresholds: RttThresholds,
                         initial_ms: float = 100.0,
                         ceiling_ms: float = 120_000.0,
                         resolution_ms: float = 100.0,
                         strategy: str = STRATEGY_DOUBLING_BISECT) -> float:
    """Measure the idle timeout by growing, then bisecting, one key's gaps.

    A gap that still hits proves the timeout exceeds it; the first missing
    gap brackets the timeout from above (the miss also reinstalls the entry,
    so trials chain on the same key). Returns the bracket midpoint in ms.
    Meaningful when the idle timer is the binding one; a much shorter hard
    timeout will dominate what this observes.
    """
    if strategy != STRATEGY_DOUBLING_BISECT:
        raise ValueError(f"unknown strategy {strategy!r}")
    ceiling_us = ms_to_us(ceiling_ms)
    resolution_us = max(1, ms_to_us(resolution_ms))

    key = session.fresh_key()
    session.probe(key)  # install

    def survives(gap_us: int) -> bool:
        session.wait_until_us(session.last_send_us + gap_us)
        sample = session.probe(key)
        return sample.rtt_us < thresholds.hit_cut_ms * 1000.0

    lo = 0
    gap = ms_to_us(initial_ms)
    while True:
        if gap > ceiling_us:
            raise TimeoutDisabled(
                f"entry survived every gap up to {ceiling_ms} ms"
            )
        if survives(gap):
            lo = gap
            gap *= 2
        else:
            hi = gap
            break

    while hi - lo > resolution_us:
        mid = (lo + hi) // 2
        if survives(mid):
            lo = mid
        else:
            hi = mid
    return us_to_ms((lo + hi) // 2)


def measure_hard_timeout(session: ProbeSession, thresholds: RttThresholds,
                         probe_gap_ms: float = 100.0,
                         ceiling_ms: float = 120_000.0,
                         idle_timeout_ms: Optional[float] = None) -> float:
    """Measure the hard timeout by keeping one key continuously refreshed.

    Probes at a constant gap keep the idle timer from firing; the elapsed
    time from installation to the first miss is the hard timeout, with the
    gap as resolution. When a finite idle timeout is known the gap is
    required to be at most a tenth of it.
    """
    if idle_timeout_ms is not None and idle_timeout_ms > 0:
        if probe_gap_ms > idle_timeout_ms / 10:
            raise ValueError(
                f"probe gap {probe_gap_ms} ms too coarse for idle timeout "
                f"{idle_timeout_ms} ms; need gap <= idle/10"
            )
    gap_us = ms_to_us(probe_gap_ms)
    ceiling_us = ms_to_us(ceiling_ms)

    key = session.fresh_key()
    installed = session.probe(key)
    t0 = installed.time_us
    next_send = t0 + gap_us
    while True:
        if next_send - t0 > ceiling_us:
            raise TimeoutDisabled(
                f"entry survived continuous refresh for {ceiling_ms} ms"
            )
        session.wait_until_us(next_send)
        sample = session.probe(key)
        if sample.rtt_us >= thresholds.hit_cut_ms * 1000.0:
            return us_to_ms(sample.time_us - t0)
        next_send = sample.time_us + gap_us


def check_feasibility(capacity_guess: int,
                      hard_timeout_ms: float,
                      idle_timeout_ms: float,
                      v_gen_pps: float,
                      v_del_pps: float = 0.0) -> FeasibilityVerdict:
    """Can `v_gen_pps` fill `capacity_guess` entries within one timeout cycle?

    The required rate is capacity divided by the smallest enabled timeout
    (plus an explicit deletion rate when the one-cycle simplification is not
    wanted). With both timeouts disabled nothing expires, so any rate works.
    """
    finite = [t for t in (hard_timeout_ms, idle_timeout_ms) if t > 0]
    if finite:
        required = v_del_pps + capacity_guess / (min(finite) / 1000.0)
    else:
        required = v_del_pps
    return FeasibilityVerdict(
        v_gen_required=required,
        v_gen_available=v_gen_pps,
        feasible=v_gen_pps >= required,
    )


def infer_fifo(session: ProbeSession, thresholds: RttThresholds,
               key_budget: int,
               time_budget_ms: Optional[float] = None) -> InferenceReport:
    """Capacity/usage inference against a FIFO-replacement table.

    Streams distinct keys; the first full-table classification fixes n1.
    From then on each round re-probes the earliest attacker key — under
    FIFO it is provably the first attacker victim — and the first miss on
    it fixes n2 and ends the attack. Detection re-probes reuse an old key,
    so they count toward traffic but not toward the distinct-key budget;
    a detection miss also reinstalls that key, which is counted.
    """
    hit_cut_us = thresholds.hit_cut_ms * 1000.0
    full_cut_us = thresholds.full_cut_ms * 1000.0
    budget_us = None if time_budget_ms is None else ms_to_us(time_budget_ms)
    start_us = session.now_us
    probes_before = session.probes_sent

    keys: list[FlowKey] = []
    n1: Optional[int] = None
    n2: Optional[int] = None
    reinstalls = 0
    budget_exceeded = False
    probe = session.probe

    while len(keys) < key_budget:
        key = session.fresh_key()
        sample = probe(key)
        keys.append(key)
        if n1 is None and sample.rtt_us >= full_cut_us:
            n1 = len(keys) - 1
        if n1 is not None:
            detect = probe(keys[0])
            if detect.rtt_us >= hit_cut_us:
                reinstalls += 1  # the miss reinstalled our earliest key
                n2 = len(keys) - 1
                break
        if budget_us is not None and session.now_us - start_us > budget_us:
            budget_exceeded = True
            budget_us = None  # flag once, keep going
    if n2 is None:
        raise BudgetExhausted(
            f"no eviction of an attacker entry within {key_budget} keys"
        )
    assert n1 is not None  # detection only runs once the table was seen full

    return InferenceReport(
        policy_assumed="FIFO",
        f_capacity=n2,
        f_other=n2 - n1,
        n1=n1,
        n2=n2,
        probes_sent=session.probes_sent - probes_before,
        distinct_keys=len(keys),
        reinstalls=reinstalls,
        timeout_budget_exceeded=budget_exceeded,
    )


def infer_lru(session: ProbeSession, thresholds: RttThresholds,
              key_budget: int,
              time_budget_ms: Optional[float] = None) -> InferenceReport:
    """Capacity/usage inference against an LRU-replacement table.

    After inserting each new key the rolling maintainer re-accesses every
    previously inserted attacker key in insertion order, keeping them the
    most recently used entries; the first re-access that misses is the
    eviction signal. The rolling traffic is quadratic in the number of
    inserted keys, so a finite time budget turns into InfeasibleRate when
    the stream cannot complete inside it.
    """
    hit_cut_us = thresholds.hit_cut_ms * 1000.0
    full_cut_us = thresholds.full_cut_ms * 1000.0
    budget_us = None if time_budget_ms is None else ms_to_us(time_budget_ms)
    start_us = session.now_us
    probes_before = session.probes_sent

    inserted: list[FlowKey] = []
    n1: Optional[int] = None
    n2: Optional[int] = None
    reinstalls = 0
    probe = session.probe

    while len(inserted) < key_budget:
        key = session.fresh_key()
        sample = probe(key)
        inserted.append(key)
        if n1 is None and sample.rtt_us >= full_cut_us:
            n1 = len(inserted) - 1
        for old_key in inserted[:-1]:
            refresh = probe(old_key)
            if refresh.rtt_us >= hit_cut_us:
                reinstalls += 1
                n2 = len(inserted) - 1
                break
        if n2 is not None:
            break
        if budget_us is not None and session.now_us - start_us > budget_us:
            raise InfeasibleRate(
                f"rolling maintenance exceeded the {time_budget_ms} ms "
                f"timeout budget after {len(inserted)} keys"
            )
    if n2 is None:
        raise BudgetExhausted(
            f"no eviction of an attacker entry within {key_budget} keys"
        )
    if n1 is None:
        n1 = n2  # eviction observed before any of our probes saw a full table

    return InferenceReport(
        policy_assumed="LRU",
        f_capacity=n2,
        f_other=n2 - n1,
        n1=n1,
        n2=n2,
        probes_sent=session.probes_sent - probes_before,
        distinct_keys=len(inserted),
        reinstalls=reinstalls,
        timeout_budget_exceeded=False,
    )
