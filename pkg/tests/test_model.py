from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spotalloc.model import (
    InfeasibleJobError, Job, JobRun, PolicyParams, SelfOwnedPool, SpotPriceTrace,
    has_flexibility, slackness, slots_per_hour, to_micro,
)

LEN = 12
WORKED = Job(1, 1, 36, 132, 4)


def run_at(job, i, z_rem):
    run = JobRun(job, 0)
    run.update_index = i
    run.z_rem = z_rem
    return run


def test_slackness_worked_third_update_below_one():
    s = slackness(run_at(WORKED, 3, 52), LEN)
    assert s == Fraction(48, 52) and s < 1


def test_slackness_first_update():
    assert slackness(run_at(WORKED, 1, 132), LEN) == Fraction(144, 132)


def test_slackness_boundary_exactly_one():
    assert slackness(run_at(WORKED, 2, 4 * 24), LEN) == 1


def test_slackness_undefined_when_done():
    with pytest.raises(ValueError):
        slackness(run_at(WORKED, 2, 0), LEN)


def test_flexibility_examples():
    assert has_flexibility(run_at(WORKED, 2, 52), LEN) is False
    assert has_flexibility(run_at(WORKED, 1, 92), LEN) is True
    assert has_flexibility(run_at(WORKED, 1, 0), LEN) is False


@given(st.integers(1, 200), st.integers(1, 20), st.integers(1, 3000), st.integers(1, 16))
def test_slackness_strictly_decreasing(d, delta, z, i):
    if (i - 1) * LEN >= d:
        return
    job = Job(0, 1, d, min(z, d * delta), delta)
    z = job.size
    base = slackness(run_at(job, i, z), LEN)
    if z > 1:
        assert slackness(run_at(job, i, z - 1), LEN) > base
    if i * LEN < d:
        assert slackness(run_at(job, i + 1, z), LEN) < base


def test_job_invariants():
    with pytest.raises(InfeasibleJobError):
        Job(0, 1, 10, 41, 4)
    for bad in [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)]:
        with pytest.raises(ValueError):
            Job(0, *bad)
    assert Job(0, 5, 10, 40, 4).last_slot == 14


def test_slots_per_hour():
    assert slots_per_hour(5) == 12
    with pytest.raises(ValueError):
        slots_per_hour(7)


def test_policy_params_validation():
    with pytest.raises(ValueError):
        PolicyParams(beta0=Fraction(1))
    with pytest.raises(ValueError):
        PolicyParams(beta=Fraction(3, 2))
    with pytest.raises(ValueError):
        PolicyParams(self_owned="other")
    assert PolicyParams().endgame == "optimal"
    assert PolicyParams(theta=Fraction(1, 2)).endgame == "parallel"
    assert PolicyParams(theta=Fraction(1, 2), fallback="optimal").endgame == "optimal"


def test_to_micro_rounds_half_up():
    assert to_micro("0.25") == 250_000
    assert to_micro(0.1) == 100_000
    assert to_micro("0.0000005") == 1


def test_trace_rejects_negative_prices():
    with pytest.raises(ValueError):
        SpotPriceTrace([1, -1])


def test_run_lengths_match_direct_count():
    rng = np.random.default_rng(3)
    prices = rng.integers(0, 10, 200)
    trace = SpotPriceTrace(prices)
    runs = trace.run_lengths(5, 12)
    for t in range(1, 201):
        k = 0
        while k < 12 and t + k <= 200 and prices[t + k - 1] <= 5:
            k += 1
        assert runs[t] == k


def test_pool_reserve_release_min():
    pool = SelfOwnedPool(5, 30)
    assert pool.min_available(1, 20) == 5
    pool.reserve(5, 10, 3)
    assert pool.min_available(1, 20) == 2
    assert pool.min_available(11, 20) == 5
    with pytest.raises(ValueError):
        pool.reserve(1, 6, 3)
    pool.release(8, 10, 3)
    assert pool.min_available(8, 20) == 5
    assert pool.available(6) == 2
    assert SelfOwnedPool(0, 10).min_available(1, 5) == 0
