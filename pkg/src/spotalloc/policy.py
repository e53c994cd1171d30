"""Allocation decisions: self-owned share at arrival, hourly spot/on-demand split,
and the on-demand endgame once a job can no longer afford spot interruptions.

Every function here is pure.  Fractions are used wherever a comparison sits on
an exact threshold.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction

from .model import InfeasibleJobError, Job


@dataclass(frozen=True)
class SplitDecision:
    spot: int
    on_demand: int
    bid: int = 0

    def __post_init__(self):
        if self.spot < 0 or self.on_demand < 0:
            raise ValueError(f"negative split {self}")


def kappa0(d: int, Len: int) -> int:
    if d < 1:
        raise ValueError("relative deadline must be >= 1")
    return -(-d // Len) - 1


def r_bar(job: Job, beta, Len: int) -> Fraction:
    """Self-owned instances needed so the rest is expected to finish on spot alone.

    Guarded: a non-positive denominator makes the requirement independent of
    r, in which case 0 is returned for feasible jobs (delta otherwise).
    """
    beta = Fraction(beta)
    if not 0 <= beta <= 1:
        raise ValueError(f"beta={beta} outside [0, 1]")
    d, delta, z = job.deadline, job.delta, job.size
    k0 = kappa0(d, Len)
    slack = d * delta - z
    if d - k0 * Len >= beta * Len:
        denom = d - (k0 + 1) * Len * beta
    else:
        denom = (1 - beta) * k0 * Len
    if denom <= 0:
        return Fraction(0) if slack >= 0 else Fraction(delta)
    return delta - slack / denom


def self_owned_allocation(job: Job, beta0, pool_min: int, Len: int) -> int:
    """r_j(beta0) = min(ceil(max(r_bar, 0)), pool_min, delta)."""
    need = r_bar(job, beta0, Len)
    need = max(math.ceil(need), 0)
    return max(0, min(need, pool_min, job.delta))


def intuitive_self_owned(job: Job, pool_min: int) -> int:
    """Greedy baseline: as many idle instances as the job could keep busy."""
    return max(0, min(pool_min, -(-job.size // job.deadline), job.delta))


def nu(z: int, d: int, delta: int, beta, Len: int) -> int:
    """Total spot instances bid for before the final flexible update."""
    if not isinstance(beta, Fraction):
        beta = Fraction(beta)
    if beta >= 1:
        raise ValueError("nu is undefined for beta = 1")
    slack = d * delta - z
    if slack < 0:
        raise ValueError(f"no slack: d*delta={d * delta} < z={z}")
    # floor(slack / (Len (1 - beta))) in integers
    return (slack * beta.denominator) // (Len * (beta.denominator - beta.numerator))


def kappa2(nu_value: int, delta: int) -> int:
    if delta < 1:
        raise ValueError("delta must be >= 1")
    return nu_value // delta


def proportion(z_rem: int, d_rem: int, delta_eff: int, beta, bid: int, Len: int) -> SplitDecision:
    """Spot/on-demand split at an hourly update while the job still has flexibility.

    The remaining work is treated as a fresh job of size ``z_rem``, relative
    deadline ``d_rem`` and parallelism ``delta_eff`` (self-owned excluded).
    """
    if delta_eff <= 0:
        raise ValueError("no parallelism left for cloud instances")
    n = nu(z_rem, d_rem, delta_eff, beta, Len)
    if kappa2(n, delta_eff) >= 1 or n == 0:
        return SplitDecision(delta_eff, 0, bid)
    return SplitDecision(n, delta_eff - n, bid)


def theta_split(delta: int, theta, bid: int = 0) -> SplitDecision:
    """Fixed-fraction baseline: round(theta * delta) spot, the rest on-demand."""
    theta = Fraction(theta)
    spot = math.floor(theta * delta + Fraction(1, 2))
    return SplitDecision(spot, delta - spot, bid)


def expected_max_spot_workload(job: Job, beta, Len: int) -> Fraction:
    beta = Fraction(beta)
    return (nu(job.size, job.deadline, job.delta, beta, Len) + job.delta) * Len * beta


@dataclass(frozen=True)
class EndgameSchedule:
    """On-demand plan for slots [t_start, deadline].

    ``hours`` lists every instance-hour to acquire as (start slot, slots used).
    ``counts[k]`` is the number of planned instances running at slot
    ``t_start + k`` and ``starts[k]`` the number acquired there.
    """

    t_start: int
    t_dd: int
    deadline: int
    kappa: int
    full_count: int
    extra_count: int
    hours: tuple[tuple[int, int], ...]

    @property
    def cost_hours(self) -> int:
        return len(self.hours)

    @property
    def capacity(self) -> int:
        return sum(n for _, n in self.hours)

    def segments(self) -> list[tuple[int, int, int, int]]:
        """Maximal runs (first, last, running, acquired at first) covering [t_start, deadline]."""
        return _segments(self.t_start, self.deadline, self.hours)

    @cached_property
    def counts(self) -> tuple[int, ...]:
        out = []
        for first, last, running, _ in self.segments():
            out += [running] * (last - first + 1)
        return tuple(out)

    @cached_property
    def starts(self) -> tuple[int, ...]:
        out = [0] * (self.deadline - self.t_start + 1)
        for s, _ in self.hours:
            out[s - self.t_start] += 1
        return tuple(out)

    def count_at(self, t: int) -> int:
        return sum(1 for s, n in self.hours if s <= t < s + n)

    def shifted(self, offset: int) -> "EndgameSchedule":
        """The same plan moved ``offset`` slots later."""
        return EndgameSchedule(
            self.t_start + offset, self.t_dd + offset, self.deadline + offset, self.kappa,
            self.full_count, self.extra_count, tuple((s + offset, n) for s, n in self.hours),
        )


def _segments(first: int, last: int, hours) -> list[tuple[int, int, int, int]]:
    delta_at = {}
    bought = {}
    for (s, n), k in Counter(hours).items():
        delta_at[s] = delta_at.get(s, 0) + k
        delta_at[s + n] = delta_at.get(s + n, 0) - k
        bought[s] = bought.get(s, 0) + k
    marks = sorted({first, last + 1, *(t for t in delta_at if first <= t <= last)})
    out = []
    running = sum(v for t, v in delta_at.items() if t <= first)
    for lo, hi in zip(marks, marks[1:]):
        if lo != first:
            running += delta_at.get(lo, 0)
        out.append((lo, hi - 1, running, bought.get(lo, 0)))
    return out


def _existing_slots(committed: int, o_existing: int) -> int:
    if o_existing == 0:
        return 0
    e, rem = divmod(committed, o_existing)
    if rem:
        raise ValueError("committed work must be o_existing * (paid slots left)")
    return e


def _build(t_prime, deadline, Len, hours) -> EndgameSchedule:
    w = deadline - t_prime
    kappa = w // Len
    t_dd = deadline + 1 - kappa * Len
    full = 0
    if kappa:
        full = max((c for lo, hi, c, _ in _segments(t_dd, deadline, hours)), default=0)
    extra = sum(1 for s, _ in hours if s < t_dd)
    return EndgameSchedule(
        t_start=t_prime + 1, t_dd=t_dd, deadline=deadline, kappa=kappa,
        full_count=full, extra_count=extra, hours=tuple(sorted(hours)),
    )


def endgame_schedule(z_rem: int, committed: int, t_prime: int, deadline: int, delta: int,
                     o_existing: int, Len: int) -> EndgameSchedule:
    """Cheapest hourly-charged on-demand plan finishing ``z_rem`` by ``deadline``.

    ``delta`` is the parallelism available to cloud instances, ``o_existing``
    instances are already paid and keep working for ``committed / o_existing``
    slots after ``t_prime``.  The last ``kappa`` whole hours before the
    deadline are filled first; the leftover runs on ``extra_count`` instances
    in the partial interval [t_prime + 1, t_dd - 1].  When the work is below
    the capacity of the whole hours only as many instance-hours as needed are
    bought.
    """
    if t_prime >= deadline:
        raise ValueError("endgame needs at least one slot before the deadline")
    if not 0 <= o_existing <= delta:
        raise ValueError("existing on-demand instances exceed the parallelism bound")
    w = deadline - t_prime
    e = _existing_slots(committed, o_existing)
    if e > w:
        raise ValueError("paid on-demand hour extends past the deadline")
    need = z_rem - committed
    kappa, r = divmod(w, Len)
    t_dd = deadline + 1 - kappa * Len
    if need <= 0:
        return _build(t_prime, deadline, Len, [])

    free = delta - o_existing
    # per-block capacity for whole hours; block 0 is [t_dd, t_dd + Len - 1]
    caps = [delta] * kappa
    if kappa and e > r:
        caps[0] = free
    full_hours = min(sum(caps), -(-need // Len))
    per_block = _spread(full_hours, caps)
    hours = [(t_dd + k * Len, Len) for k, c in enumerate(per_block) for _ in range(c)]

    short = need - full_hours * Len
    if short > 0:
        partials = []
        if r > 0:
            partials += [(t_prime + 1, r)] * free
        if o_existing:
            length = r - e if e <= r else Len + r - e
            if length > 0:
                partials += [(t_prime + e + 1, length)] * o_existing
        partials.sort(key=lambda h: -h[1])
        for h in partials:
            if short <= 0:
                break
            hours.append(h)
            short -= h[1]
        if short > 0:
            raise InfeasibleJobError(
                f"endgame cannot finish {need} instance-slots in {w} slots at parallelism {delta}"
            )
    return _build(t_prime, deadline, Len, hours)


def _spread(total: int, caps: list[int]) -> list[int]:
    """Split ``total`` whole hours over blocks as evenly as the caps allow, later blocks first."""
    out = [0] * len(caps)
    left = total
    while left > 0:
        open_blocks = [k for k in range(len(caps)) if out[k] < caps[k]]
        if not open_blocks:
            raise ValueError("more whole hours than block capacity")
        for k in reversed(open_blocks):
            if left == 0:
                break
            out[k] += 1
            left -= 1
    return out


def full_parallel_schedule(z_rem: int, committed: int, t_prime: int, deadline: int, delta: int,
                           o_existing: int, Len: int) -> EndgameSchedule:
    """Baseline fallback: every free lane runs on-demand back to back until the deadline.

    The engine stops buying hours once the job is done, so the job simply
    finishes as early as possible at full parallelism.
    """
    if t_prime >= deadline:
        raise ValueError("endgame needs at least one slot before the deadline")
    e = _existing_slots(committed, o_existing)
    hours = []
    for first, lanes in ((t_prime + 1, delta - o_existing), (t_prime + e + 1, o_existing)):
        s = first
        while lanes and s <= deadline:
            hours += [(s, min(Len, deadline - s + 1))] * lanes
            s += Len
    sched = _build(t_prime, deadline, Len, hours)
    if committed + sched.capacity < z_rem:
        raise InfeasibleJobError(
            f"full parallelism cannot finish {z_rem - committed} instance-slots by slot {deadline}"
        )
    return sched
