"""Independent reference implementations used as test oracles.

None of these share control flow with the package: the job simulator walks
slot by slot, the endgame oracles search every hourly-charged schedule, and
the spot-budget oracle enumerates on-demand sequences explicitly.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache

from spotalloc.model import MICRO
from spotalloc.policy import endgame_schedule, full_parallel_schedule, proportion, theta_split


# --------------------------------------------------------------------------
# slot-by-slot job simulator


class RefRun:
    def __init__(self):
        self.updates = []          # dicts: start, spot, od, outcome, slots, charge (Fraction money)
        self.cost = Fraction(0)
        self.completion = None
        self.self_used = self.spot_used = self.od_used = 0
        self.held = []             # per slot (self, spot, od) instances held
        self.endgame_at = None


def reference_job(job, r, params, prices, Len, od_price_micro) -> RefRun:
    """Follow the per-slot step order literally.  Prices are micro-units per slot."""
    out = RefRun()
    a, deadline, delta = job.arrival, job.last_slot, job.delta
    p_hour = Fraction(od_price_micro, MICRO)
    rem = job.size
    lanes = delta - r
    plan = None
    upd = None
    od_until = -1
    o_cur = 0
    spot_alive = False
    for t in range(a, deadline + 1):
        if plan is None and (t - a) % Len == 0:
            hl = min(t + Len - 1, deadline)
            d_rem = deadline - t + 1
            z_net = rem - r * d_rem
            if lanes == 0 or z_net <= 0:
                si = o = 0
            elif params.theta is None:
                s = proportion(z_net, d_rem, lanes, params.beta, params.bid, Len)
                si, o = s.spot, s.on_demand
            else:
                s = theta_split(lanes, params.theta, params.bid)
                si, o = s.spot, s.on_demand
            upd = {"start": t, "end": hl, "spot": si, "od": o, "outcome": None, "slots": 0,
                   "charge": Fraction(0)}
            out.updates.append(upd)
            out.cost += o * p_hour
            o_cur, od_until = o, hl
            spot_alive = si > 0
        lost_here = False
        if plan is None and spot_alive and prices[t - 1] > params.bid:
            spot_alive = False
            lost_here = True
        if lost_here:
            upd["outcome"] = 3
            projected = rem - (r + o_cur) * (upd["end"] - t + 1)
            flexible = projected <= 0 or (upd["end"] < deadline and
                                          projected <= delta * (deadline - upd["end"]))
            if not flexible:
                tp = t - 1
                chooser = endgame_schedule if params.endgame == "optimal" else full_parallel_schedule
                plan = chooser(rem - r * (deadline - tp), o_cur * (upd["end"] - tp), tp, deadline,
                               lanes, o_cur, Len)
                out.endgame_at = t
        od = o_cur if t <= od_until else 0
        if plan is not None:
            bought = sum(1 for s, _ in plan.hours if s == t)
            out.cost += bought * p_hour
            od += sum(1 for s, n in plan.hours if s <= t < s + n)
        spot = upd["spot"] if (spot_alive and plan is None) else 0
        if spot:
            upd["slots"] += 1
        out.held.append((r, spot, od))
        for kind, n in (("self", r), ("spot", spot), ("od", od)):
            use = min(n, rem)
            rem -= use
            setattr(out, f"{kind}_used", getattr(out, f"{kind}_used") + use)
        if rem == 0:
            out.completion = t
            if spot:
                upd["outcome"] = 2
            break
        if spot and t == upd["start"] + Len - 1:
            upd["outcome"] = 1
    for u in out.updates:
        if u["outcome"] is None:
            u["outcome"] = 3
        if u["outcome"] in (1, 2) and u["spot"]:
            n = min(Len, len(prices) - u["start"] + 1)
            window = prices[u["start"] - 1:u["start"] - 1 + n]
            u["charge"] = u["spot"] * Fraction(sum(window), n * MICRO)
            out.cost += u["charge"]
    return out


# --------------------------------------------------------------------------
# cheapest hourly-charged on-demand completion


def endgame_min_cost(need: int, w: int, lanes: int, o_ex: int, e: int, Len: int):
    """Fewest instance-hours processing >= need slots in w slots.

    ``o_ex`` lanes are busy (already paid) during the first ``e`` slots.  An
    instance bought at slot s runs until min(s + Len - 1, w).  Exhaustive DP
    over (slot, remaining lives of held instances, work done).
    """
    if need <= 0:
        return 0

    @lru_cache(maxsize=None)
    def best(s: int, lives: tuple, done: int):
        if done >= need:
            return 0
        if s > w:
            return None
        cap = lanes - (o_ex if s <= e else 0)
        held = len(lives)
        result = None
        for k in range(0, cap - held + 1):
            running = held + k
            nxt = tuple(sorted(x for x in [v - 1 for v in lives] + [Len - 1] * k if x > 0))
            sub = best(s + 1, nxt, min(need, done + running))
            if sub is not None and (result is None or sub + k < result):
                result = sub + k
        return result

    return best(1, (), 0)


def endgame_min_cost_literal(need: int, w: int, lanes: int, o_ex: int, e: int, Len: int):
    """Same question answered by listing every acquisition vector (tiny sizes only)."""
    if need <= 0:
        return 0
    best = None
    caps = [lanes - (o_ex if s <= e else 0) for s in range(1, w + 1)]
    for starts in itertools.product(range(lanes + 1), repeat=w):
        running = [0] * w
        for s, k in enumerate(starts):
            for q in range(s, min(s + Len, w)):
                running[q] += k
        if any(x > c for x, c in zip(running, caps)):
            continue
        if sum(running) >= need:
            cost = sum(starts)
            best = cost if best is None else min(best, cost)
    return best


def schedule_is_valid(sched, need: int, w: int, lanes: int, o_ex: int, e: int) -> bool:
    counts = [sched.count_at(t) for t in range(1, w + 1)]
    if any(c + (o_ex if t <= e else 0) > lanes for t, c in zip(range(1, w + 1), counts)):
        return False
    return sum(counts) >= need


# --------------------------------------------------------------------------
# spot budget before the last flexible update


@lru_cache(maxsize=None)
def reachable_spot_sums(delta: int, updates: int) -> frozenset:
    """All values of sum(delta - o_i) over o in [0, delta]^updates, by enumeration."""
    return frozenset(sum(delta - o for o in seq)
                     for seq in itertools.product(range(delta + 1), repeat=updates))


def brute_max_spot(z: int, d: int, delta: int, beta: Fraction, Len: int):
    """Max expected spot work over on-demand sequences meeting both flexibility constraints.

    A sequence of length k (1 <= k <= ceil(d/Len)) is admissible when the
    spot bids of its first k-1 updates keep the job flexible and adding the
    k-th update's bids exhausts that flexibility.  Returns None if nothing is
    admissible.
    """
    slack = d * delta - z
    K = -(-d // Len)
    best = None
    for k in range(1, K + 1):
        for A in reachable_spot_sums(delta, k - 1):
            if A * Len * (1 - beta) > slack:
                continue
            for B in range(delta + 1):
                if (A + B) * Len * (1 - beta) > slack:
                    v = (A + B) * Len * beta
                    best = v if best is None else max(best, v)
    return best


def expected_alg_spot(z: int, d: int, delta: int, beta: Fraction, Len: int):
    """Spot work of the hourly splitter when each update yields exactly beta * Len spot slots.

    Returns (expected spot work, whether the job ran out of work while still flexible).
    """
    zr, dr = Fraction(z), d
    total = 0
    while dr > 0 and zr > 0 and zr <= delta * dr:
        s = proportion(zr, dr, delta, beta, 0, Len)
        total += s.spot
        zr -= s.on_demand * Len + s.spot * Len * beta
        dr -= Len
    return total * Len * beta, zr <= 0


# --------------------------------------------------------------------------
# spot-only capacity under a deterministic availability pattern


def spot_only_capacity(r: int, d: int, delta: int, beta: Fraction, Len: int) -> Fraction:
    """Work done by r self-owned for d slots plus (delta - r) spot instances that run
    the first beta*Len slots of every allocation hour (counted slot by slot)."""
    spot_slots = Fraction(0)
    for start in range(0, d, Len):
        hour = min(Len, d - start)
        spot_slots += min(beta * Len, hour)
    return r * d + (delta - r) * spot_slots
