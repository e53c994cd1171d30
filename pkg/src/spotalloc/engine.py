"""Allocation driver: arrivals, hourly updates, spot resolution, endgame, cost ledger.

Jobs interact only through the self-owned pool, and a job's self-owned share
is fixed at arrival.  The engine therefore admits jobs in arrival order and
plays each one forward to completion right away; pool releases are applied
lazily so that a job arriving at slot t sees exactly the reservations a
slot-by-slot loop would show it.  Inside a job, time advances an hour at a
time: within an hour nothing changes except at the slot where spot is lost
or the job completes, and both are found arithmetically.

Money inside the engine is an integer number of ticks, one tick being
1e-6 / lcm(1..Len) currency units, so that hourly means of the spot trace are
exact even over an hour cut short by the end of the trace.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .model import (
    FULL_HOUR, INTERRUPTED, MICRO, UNTIL_DONE, Job, JobRun, PolicyParams, SelfOwnedPool,
    SpotPriceTrace, UpdateRecord, from_micro, slots_per_hour, to_micro,
)
from .policy import (
    endgame_schedule, full_parallel_schedule, intuitive_self_owned, proportion,
    self_owned_allocation, theta_split,
)


class DeadlineMissed(RuntimeError):
    """A job was not finished by its deadline.  Indicates an engine bug."""


class TraceTooShort(ValueError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    slot_minutes: int = 5
    on_demand_price: int = to_micro("0.25")
    self_owned: int = 0
    self_owned_price: int = 0
    release_self_owned: bool = True

    def __post_init__(self):
        slots_per_hour(self.slot_minutes)
        if self.on_demand_price <= 0:
            raise ValueError("on-demand price must be positive")
        if self.self_owned < 0 or self.self_owned_price < 0:
            raise ValueError("self-owned count and price must be non-negative")

    @property
    def Len(self) -> int:
        return slots_per_hour(self.slot_minutes)

    @property
    def tick(self) -> int:
        """Ticks per micro-unit."""
        return math.lcm(*range(1, self.Len + 1))

    def money(self, ticks: int) -> float:
        return ticks / (self.tick * MICRO)


def spot_charge(record: UpdateRecord, trace: SpotPriceTrace, cfg: EngineConfig) -> int:
    """Spot charge of one finished update in ticks.

    Charged updates pay si times the mean price over the Len slots of that
    allocation hour, also when the job finished early in the hour.  If the
    trace ends inside the hour the mean is taken over the slots it covers.
    Interrupted updates are free.
    """
    if record.outcome == INTERRUPTED or record.spot == 0:
        return 0
    hour_slots = min(cfg.Len, len(trace) - record.start + 1)
    total = trace.window_sum(record.start, record.start + hour_slots - 1)
    return record.spot * total * (cfg.tick // hour_slots)


def allocate_self_owned(job: Job, params: PolicyParams, pool_min: int, Len: int) -> int:
    if pool_min <= 0:
        return 0
    if params.self_owned == "greedy":
        return intuitive_self_owned(job, pool_min)
    return self_owned_allocation(job, params.beta0, pool_min, Len)


def simulate_job(job: Job, self_owned: int, params: PolicyParams, trace: SpotPriceTrace,
                 cfg: EngineConfig, record: bool = False) -> JobRun:
    """Run one job from arrival to completion under ``params``."""
    Len = cfg.Len
    tick = cfg.tick
    hour_price = cfg.on_demand_price * tick
    a, d, delta = job.arrival, job.deadline, job.delta
    deadline = job.last_slot
    r = self_owned
    lanes = delta - r
    if lanes < 0:
        raise ValueError(f"job {job.id}: self-owned share {r} exceeds delta {delta}")
    if len(trace) < deadline:
        raise TraceTooShort(f"price trace ends at slot {len(trace)}, job {job.id} needs {deadline}")
    run = JobRun(job, r)
    runs = trace.run_lengths(params.bid, Len) if lanes else None
    if record:
        run.usage = {k: np.zeros(d, dtype=np.int64) for k in (
            "held_self", "held_spot", "held_od", "used_self", "used_spot", "used_od")}
    use = run.usage

    def consume(t0: int, n: int, rs: int, ss: int, os: int):
        """Process n slots from t0 at the given instance counts; return completion slot or None."""
        cap = rs + ss + os
        if n <= 0:
            return None
        if cap * n < run.z_rem:
            run.z_rem -= cap * n
            run.self_used += rs * n
            run.spot_used += ss * n
            run.on_demand_used += os * n
            if use is not None and cap:
                k = t0 - a
                for key, v in (("self", rs), ("spot", ss), ("od", os)):
                    use["held_" + key][k:k + n] += v
                    use["used_" + key][k:k + n] += v
            return None
        k = -(-run.z_rem // cap)
        last = run.z_rem - (k - 1) * cap
        u_self = min(last, rs)
        u_spot = min(last - u_self, ss)
        u_od = last - u_self - u_spot
        run.self_used += rs * (k - 1) + u_self
        run.spot_used += ss * (k - 1) + u_spot
        run.on_demand_used += os * (k - 1) + u_od
        if use is not None:
            j = t0 - a
            for key, v, u in (("self", rs, u_self), ("spot", ss, u_spot), ("od", os, u_od)):
                use["held_" + key][j:j + k] += v
                use["used_" + key][j:j + k - 1] += v
                use["used_" + key][j + k - 1] += u
        run.z_rem = 0
        return t0 + k - 1

    def finish(rec: UpdateRecord, outcome: int, slots: int, used_before: int):
        rec.outcome = outcome
        rec.spot_slots = slots
        rec.spot_used = run.spot_used - used_before
        rec.spot_charge = spot_charge(rec, trace, cfg)
        run.spot_cost += rec.spot_charge
        run.cost += rec.spot_charge
        run.spot_run_slots += rec.spot * slots

    i = 1
    while True:
        hs = a + (i - 1) * Len
        if hs > deadline:
            raise DeadlineMissed(f"job {job.id} has {run.z_rem} work left after its deadline")
        hl = min(hs + Len - 1, deadline)
        n = hl - hs + 1
        d_rem = deadline - hs + 1
        z_net = run.z_rem - r * d_rem
        if lanes == 0 or z_net <= 0:
            si = o = 0
        elif params.theta is None:
            split = proportion(z_net, d_rem, lanes, params.beta, params.bid, Len)
            si, o = split.spot, split.on_demand
        else:
            split = theta_split(lanes, params.theta, params.bid)
            si, o = split.spot, split.on_demand
        run.update_index = i
        rec = UpdateRecord(i, hs, si, o, params.bid)
        run.updates.append(rec)
        if o:
            run.cost += o * hour_price
            run.on_demand_hours += o
        used0 = run.spot_used

        T = min(int(runs[hs]), n) if si else 0
        done = consume(hs, T, r, si, o)
        if done is not None:
            finish(rec, UNTIL_DONE, done - hs + 1, used0)
            run.completion = done
            return run
        if si and T == n:
            if n < Len:
                raise DeadlineMissed(f"job {job.id}: spot ran to the deadline without finishing")
            finish(rec, FULL_HOUR, Len, used0)
            i += 1
            continue

        tl = hs + T  # first slot without spot
        finish(rec, INTERRUPTED, T, used0)
        if si:
            projected = run.z_rem - (r + o) * (hl - tl + 1)
            flexible = projected <= 0 or (hl < deadline and projected <= delta * (deadline - hl))
            if not flexible:
                _endgame(run, tl - 1, hl, o, params, trace, cfg, consume)
                return run
        done = consume(tl, hl - tl + 1, r, 0, o)
        if done is not None:
            run.completion = done
            return run
        i += 1


def _endgame(run: JobRun, t_prime: int, paid_until: int, o: int, params: PolicyParams,
             trace: SpotPriceTrace, cfg: EngineConfig, consume):
    """Finish the job on on-demand instances from slot t_prime + 1."""
    job = run.job
    r = run.self_owned
    deadline = job.last_slot
    w = deadline - t_prime
    committed = o * (paid_until - t_prime)
    rel, segments = _relative_plan(params.endgame, run.z_rem - r * w, committed, w,
                                   job.delta - r, o, cfg.Len)
    run.endgame_plan = rel
    run.endgame_start = t_prime + 1
    hour_price = cfg.on_demand_price * cfg.tick
    shifted = ((f + t_prime, l + t_prime, c, b) for f, l, c, b in segments)
    for first, last, running, bought in _split(shifted, paid_until):
        if bought:
            run.cost += bought * hour_price
            run.on_demand_hours += bought
        extra = o if last <= paid_until else 0
        done = consume(first, last - first + 1, r, 0, running + extra)
        if done is not None:
            run.completion = done
            return
    raise DeadlineMissed(f"job {job.id}: endgame left {run.z_rem} work at the deadline")


@lru_cache(maxsize=1 << 16)
def _relative_plan(kind: str, need: int, committed: int, w: int, lanes: int, o: int, Len: int):
    """Endgame plan and its segments with the last spot slot at 0.  Plans depend only on
    the window length, so many jobs and policies share them."""
    plan = endgame_schedule if kind == "optimal" else full_parallel_schedule
    sched = plan(need, committed, 0, w, lanes, o, Len)
    return sched, tuple(sched.segments())


def _split(segments, cut: int):
    """Split segments so that none straddles the slot boundary after ``cut``."""
    for first, last, running, bought in segments:
        if first <= cut < last:
            yield first, cut, running, bought
            yield cut + 1, last, running, 0
        else:
            yield first, last, running, bought


@dataclass
class CostLedger:
    cfg: EngineConfig
    job_costs: dict[int, int] = field(default_factory=dict)
    total_cost: int = 0
    total_work: int = 0
    spot_money: int = 0
    spot_run_slots: int = 0
    spot_used: int = 0
    on_demand_hours: int = 0
    on_demand_used: int = 0
    self_used: int = 0
    self_owned_cost: int = 0
    horizon_end: int = 0
    completions: list[tuple] = field(default_factory=list)

    def add(self, run: JobRun, policy_index: int = 0):
        job = run.job
        self.job_costs[job.id] = run.cost
        self.total_cost += run.cost
        self.total_work += job.size
        self.spot_money += run.spot_cost
        self.spot_run_slots += run.spot_run_slots
        self.spot_used += run.spot_used
        self.on_demand_hours += run.on_demand_hours
        self.on_demand_used += run.on_demand_used
        self.self_used += run.self_used
        if self.cfg.self_owned_price:
            extra = run.self_used * self.cfg.self_owned_price * (self.cfg.tick // self.cfg.Len)
            self.self_owned_cost += extra
            self.total_cost += extra
        self.horizon_end = max(self.horizon_end, job.last_slot)
        self.completions.append((job.id, policy_index, run.cost, run.completion,
                                 run.spot_used, run.on_demand_used, run.self_used))

    def job_cost(self, job_id: int) -> float:
        return self.cfg.money(self.job_costs[job_id])

    @property
    def total_money(self) -> float:
        return self.cfg.money(self.total_cost)

    def completion_log(self) -> str:
        """One line per job: id, policy index, c_j, completion slot, spot/od/self instance-slots."""
        lines = ["# id policy cost completion spot_slots on_demand_slots self_owned_slots"]
        for jid, pi, cost, done, sp, od, so in self.completions:
            lines.append(f"{jid} {pi} {self.cfg.money(cost):.9f} {done} {sp} {od} {so}")
        return "\n".join(lines) + "\n"


def metrics(ledger: CostLedger) -> dict:
    """alpha: money per instance-slot of work; gamma: self-owned utilisation;
    p_prime: spot money per spot instance-slot run; p_prime_hourly: the same per instance-hour."""
    cfg = ledger.cfg
    alpha = ledger.total_money / ledger.total_work if ledger.total_work else None
    gamma = None
    if cfg.self_owned and ledger.horizon_end:
        gamma = ledger.self_used / (cfg.self_owned * ledger.horizon_end)
    if ledger.spot_run_slots:
        p_prime = cfg.money(ledger.spot_money) / ledger.spot_run_slots
    else:
        p_prime = 0.0
    return {"alpha": alpha, "gamma": gamma, "p_prime": p_prime, "p_prime_hourly": p_prime * cfg.Len}


Chooser = Callable[[Job], "tuple[int, PolicyParams]"]


class Engine:
    """Admits jobs in arrival order against one price trace and one self-owned pool."""

    def __init__(self, cfg: EngineConfig, prices: SpotPriceTrace, record: bool = False):
        self.cfg = cfg
        self.prices = prices
        self.record = record
        self.pool = SelfOwnedPool(cfg.self_owned, len(prices))
        self.ledger = CostLedger(cfg)
        self._releases: list[tuple[int, int, int, int]] = []
        self._now = 0

    def pool_min(self, t1: int, t2: int) -> int:
        self._release_until(t1)
        return self.pool.min_available(t1, t2)

    def _release_until(self, t: int):
        # a completion at slot c frees slots > c for arrivals after c
        while self._releases and self._releases[0][0] < t:
            c, _, end, count = heapq.heappop(self._releases)
            self.pool.release(c + 1, end, count)

    def admit(self, job: Job, params: PolicyParams, policy_index: int = 0) -> JobRun:
        if job.arrival < self._now:
            raise ValueError("jobs must be admitted in arrival order")
        self._now = job.arrival
        pm = self.pool_min(job.arrival, job.last_slot)
        r = allocate_self_owned(job, params, pm, self.cfg.Len)
        self.pool.reserve(job.arrival, job.last_slot, r)
        run = simulate_job(job, r, params, self.prices, self.cfg, record=self.record)
        run.pool_min = pm
        if r and self.cfg.release_self_owned and run.completion < job.last_slot:
            heapq.heappush(self._releases, (run.completion, job.id, job.last_slot, r))
        self.ledger.add(run, policy_index)
        return run


def run(jobs: Iterable[Job], prices: SpotPriceTrace, policy_chooser, cfg: EngineConfig,
        record: bool = False) -> tuple[list[JobRun], CostLedger]:
    """Simulate every job.  ``policy_chooser`` is a PolicyParams (fixed policy) or
    a callable job -> (index, PolicyParams)."""
    engine = Engine(cfg, prices, record=record)
    if isinstance(policy_chooser, PolicyParams):
        fixed = policy_chooser
        policy_chooser = lambda job: (0, fixed)  # noqa: E731
    runs = []
    for job in sorted(jobs, key=lambda j: (j.arrival, j.id)):
        idx, params = policy_chooser(job)
        runs.append(engine.admit(job, params, idx))
    return runs, engine.ledger


def price_horizon(jobs: Iterable[Job]) -> int:
    return max((j.last_slot for j in jobs), default=0)
