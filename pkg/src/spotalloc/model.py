"""Domain types shared by the workload generator, policies, engine and learner.

Quantities of work, time and capacity are integers (instance-slots, slots,
instance counts).  Money is fixed-point: prices are integer micro-units per
instance-hour.  Slots are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

MICRO = 1_000_000


def to_micro(value) -> int:
    """Convert a money amount (float, str, Decimal, int) to integer micro-units."""
    if isinstance(value, float):
        value = repr(value)
    return int((Decimal(value) * MICRO).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def from_micro(micro: int) -> float:
    return micro / MICRO


def slots_per_hour(slot_minutes: int) -> int:
    if slot_minutes <= 0 or 60 % slot_minutes:
        raise ValueError(f"slot length {slot_minutes} min does not divide an hour")
    return 60 // slot_minutes


class InfeasibleJobError(ValueError):
    """A job violates z <= delta * d, or an allocation cannot meet the deadline."""


@dataclass(frozen=True)
class Job:
    """Static description of one job.

    ``arrival`` is the arrival slot a_j, ``deadline`` is the *relative*
    deadline d_j (the job must finish by slot ``arrival + deadline - 1``),
    ``size`` is z_j in instance-slots and ``delta`` the parallelism bound.
    """

    id: int
    arrival: int
    deadline: int
    size: int
    delta: int

    def __post_init__(self):
        if self.arrival < 1:
            raise ValueError(f"job {self.id}: arrival slot must be >= 1")
        if self.deadline < 1 or self.size < 1 or self.delta < 1:
            raise ValueError(f"job {self.id}: d, z and delta must all be >= 1")
        if self.size > self.delta * self.deadline:
            raise InfeasibleJobError(
                f"job {self.id}: infeasible, z={self.size} > delta*d={self.delta * self.deadline}"
            )

    @property
    def last_slot(self) -> int:
        """Absolute deadline slot a_j + d_j - 1."""
        return self.arrival + self.deadline - 1

    @property
    def slackness(self) -> Fraction:
        return Fraction(self.deadline * self.delta, self.size)


@dataclass(frozen=True)
class PolicyParams:
    """One point of a policy grid.

    A policy is {beta0, beta, bid}.  Baselines reuse the same
    record: ``theta`` set selects the fixed spot/on-demand split (with a
    full-parallelism on-demand fallback unless ``fallback`` says otherwise), and ``self_owned="greedy"``
    selects the greedy self-owned rule.  ``bid`` is in micro-units.
    """

    beta: Fraction = Fraction(0)
    beta0: Fraction = Fraction(0)
    bid: int = 0
    theta: Fraction | None = None
    self_owned: str = "tuned"
    fallback: str | None = None   # "optimal" | "parallel"; None picks by theta

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError(f"beta={self.beta} outside [0, 1]")
        if not 0 <= self.beta0 < 1:
            raise ValueError(f"beta0={self.beta0} outside [0, 1)")
        if self.bid < 0:
            raise ValueError("bid must be non-negative")
        if self.theta is not None and not 0 <= self.theta <= 1:
            raise ValueError(f"theta={self.theta} outside [0, 1]")
        if self.self_owned not in ("tuned", "greedy"):
            raise ValueError(f"unknown self-owned rule {self.self_owned!r}")
        if self.fallback not in (None, "optimal", "parallel"):
            raise ValueError(f"unknown endgame fallback {self.fallback!r}")

    @property
    def endgame(self) -> str:
        """Which on-demand plan finishes a job that lost its flexibility."""
        if self.fallback is not None:
            return self.fallback
        return "optimal" if self.theta is None else "parallel"

    @property
    def is_baseline(self) -> bool:
        return self.theta is not None or self.self_owned == "greedy"

    def label(self) -> str:
        bid = f"b={from_micro(self.bid):.2f}"
        if self.theta is not None:
            return f"theta={float(self.theta):.1f},{bid}"
        so = "greedy" if self.self_owned == "greedy" else f"beta0={float(self.beta0):.4f}"
        return f"beta={float(self.beta):.4f},{so},{bid}"


class SpotPriceTrace:
    """Per-slot spot prices in micro-units; ``price(t)`` for t >= 1."""

    def __init__(self, prices):
        arr = np.asarray(prices, dtype=np.int64)
        if arr.ndim != 1:
            raise ValueError("price trace must be one-dimensional")
        if arr.size and arr.min() < 0:
            raise ValueError("spot prices must be non-negative")
        # index 0 is padding so that slot t lives at index t
        self._prices = np.concatenate([np.zeros(1, dtype=np.int64), arr])
        self._cumsum = np.cumsum(self._prices)
        self._runs: dict[tuple[int, int], np.ndarray] = {}

    def __len__(self) -> int:
        return self._prices.size - 1

    def __eq__(self, other) -> bool:
        return isinstance(other, SpotPriceTrace) and np.array_equal(self._prices, other._prices)

    @property
    def prices(self) -> np.ndarray:
        return self._prices[1:]

    def price(self, t: int) -> int:
        return int(self._prices[t])

    def window_sum(self, t1: int, t2: int) -> int:
        """Sum of prices over slots t1..t2 inclusive."""
        return int(self._cumsum[t2] - self._cumsum[t1 - 1])

    def run_lengths(self, bid: int, cap: int) -> np.ndarray:
        """For every slot t, how many consecutive slots from t have price <= bid (capped).

        Index t of the returned array refers to slot t.  Slots past the end
        of the trace count as unavailable.
        """
        key = (bid, cap)
        runs = self._runs.get(key)
        if runs is None:
            ok = self._prices <= bid
            ok[0] = False
            padded = np.concatenate([ok, np.zeros(cap, dtype=bool)])
            runs = np.zeros(ok.size, dtype=np.int64)
            alive = ok.copy()
            for k in range(cap):
                runs += alive
                alive &= padded[k + 1:k + 1 + ok.size]
            self._runs[key] = runs
        return runs


class SelfOwnedPool:
    """Reservation table over ``capacity`` self-owned instances."""

    def __init__(self, capacity: int, horizon: int):
        if capacity < 0:
            raise ValueError("self-owned capacity must be >= 0")
        self.capacity = capacity
        self.reserved = np.zeros(horizon + 2, dtype=np.int64)

    def _grow(self, t: int):
        if t + 1 >= self.reserved.size:
            extra = max(t + 2 - self.reserved.size, self.reserved.size)
            self.reserved = np.concatenate([self.reserved, np.zeros(extra, dtype=np.int64)])

    def available(self, t: int) -> int:
        """N(t): idle instances at slot t."""
        self._grow(t)
        return self.capacity - int(self.reserved[t])

    def min_available(self, t1: int, t2: int) -> int:
        """m_{t1}(t2) = min(N(t1), ..., N(t2))."""
        if t1 > t2:
            raise ValueError("empty query range")
        if self.capacity == 0:
            return 0
        self._grow(t2)
        return self.capacity - int(self.reserved[t1:t2 + 1].max())

    def reserve(self, t1: int, t2: int, count: int):
        if count <= 0:
            return
        self._grow(t2)
        seg = self.reserved[t1:t2 + 1]
        if seg.max() + count > self.capacity:
            raise ValueError(f"over-reservation of self-owned pool on [{t1}, {t2}]")
        seg += count

    def release(self, t1: int, t2: int, count: int):
        if count <= 0 or t1 > t2:
            return
        seg = self.reserved[t1:t2 + 1]
        if seg.min() < count:
            raise ValueError(f"releasing more than reserved on [{t1}, {t2}]")
        seg -= count


# Charge indicators for one allocation update.
FULL_HOUR = 1       # X1: spot ran the whole hour, charged
UNTIL_DONE = 2      # X2: spot ran until the job finished, full hour charged
INTERRUPTED = 3     # X3: lost or never obtained, not charged


@dataclass
class UpdateRecord:
    """One hourly allocation update of a job."""

    index: int
    start: int
    spot: int
    on_demand: int
    bid: int
    outcome: int = INTERRUPTED
    spot_slots: int = 0     # T1 (UNTIL_DONE / FULL_HOUR) or T2 (INTERRUPTED)
    spot_used: int = 0      # instance-slots the spot instances actually processed
    spot_charge: int = 0    # micro-units * Len, see CostLedger

    @property
    def indicators(self) -> tuple[int, int, int]:
        return tuple(int(self.outcome == k) for k in (FULL_HOUR, UNTIL_DONE, INTERRUPTED))


@dataclass
class JobRun:
    """Execution state and history of one job under one policy."""

    job: Job
    self_owned: int
    z_rem: int = -1
    update_index: int = 1
    updates: list[UpdateRecord] = field(default_factory=list)
    endgame_plan: object | None = None    # endgame schedule relative to its last spot slot
    endgame_start: int | None = None
    completion: int | None = None
    cost: int = 0            # micro-units * Len
    spot_cost: int = 0
    on_demand_hours: int = 0
    self_used: int = 0
    spot_used: int = 0
    on_demand_used: int = 0
    spot_run_slots: int = 0  # sum over updates of si * spot slots run
    usage: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.z_rem < 0:
            self.z_rem = self.job.size

    @property
    def endgame(self):
        """The on-demand endgame in absolute slots, or None."""
        if self.endgame_plan is None:
            return None
        return self.endgame_plan.shifted(self.endgame_start - 1)

    @property
    def done(self) -> bool:
        return self.completion is not None


def slackness(run, Len: int) -> Fraction:
    """s_j^i = (d_j - (i-1) Len) delta_j / z_j^i for the run's current update index."""
    if run.z_rem <= 0:
        raise ValueError(f"job {run.job.id} has no remaining work; slackness undefined")
    if run.update_index < 1:
        raise ValueError("update index starts at 1")
    job = run.job
    return Fraction((job.deadline - (run.update_index - 1) * Len) * job.delta, run.z_rem)


def has_flexibility(run, Len: int) -> bool:
    """Whether the job may still use spot at the next update (slackness there >= 1)."""
    if run.z_rem <= 0:
        return False
    job = run.job
    window = job.deadline - run.update_index * Len
    return window * job.delta >= run.z_rem
