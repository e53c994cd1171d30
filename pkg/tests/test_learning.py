import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spotalloc.engine import EngineConfig, run, simulate_job
from spotalloc.learning import (
    Learner, cost_normalizer, counterfactual_cost, regret_report, run_learning,
)
from spotalloc.model import Job, PolicyParams, SpotPriceTrace, to_micro
from spotalloc.workload import PriceConfig, WorkloadConfig, generate_jobs, generate_prices

CFG = EngineConfig()


def test_uniform_sampling_frequencies():
    lr = Learner(7, 10, seed=1)
    counts = np.bincount([lr.choose() for _ in range(100_000)], minlength=7)
    assert np.all(np.abs(counts / 100_000 - 1 / 7) < 0.01)


def test_near_degenerate_sampling():
    lr = Learner(5, 1, seed=2)
    lr.update(2, [[0, 1, 1, 1, 1]] * 40)   # eta = sqrt(2 log 5): drives index 0 up
    assert lr.weights[0] > 0.99
    picks = [lr.choose() for _ in range(10_000)]
    assert picks.count(0) / 10_000 >= 0.99


def test_single_policy():
    lr = Learner(1, 5)
    assert {lr.choose() for _ in range(50)} == {0}


def test_equal_costs_leave_weights():
    lr = Learner(4, 3)
    lr.update(10, [[0.3] * 4, [0.7] * 4])
    assert np.allclose(lr.weights, 0.25)


def test_closed_form_update():
    lr = Learner(2, 1)
    lr.d = 1
    # eta_t = sqrt(2 log 2 / (d (t - d))) = 1 at t = 1 + 2 log 2
    t = 1 + 2 * math.log(2)
    assert lr.eta(t) == pytest.approx(1.0)
    lr.update(t, [[0, 1]])
    e = math.exp(-1)
    assert lr.weights == pytest.approx([1 / (1 + e), e / (1 + e)])
    assert lr.weights == pytest.approx([0.7311, 0.2689], abs=1e-4)


def test_no_update_during_warmup():
    lr = Learner(3, 10)
    lr.update(10, [[0, 1, 1]])
    assert np.allclose(lr.weights, 1 / 3)


def test_update_rejects_bad_costs():
    lr = Learner(2, 1)
    with pytest.raises(ValueError):
        lr.update(5, [[-0.1, 0.2]])
    with pytest.raises(ValueError):
        lr.update(5, [[float("nan"), 0.2]])
    with pytest.raises(ValueError):
        lr.update(5, [[0.1, 0.2, 0.3]])


@given(st.lists(st.lists(st.floats(0, 1), min_size=4, max_size=4), max_size=30), st.integers(6, 500))
def test_weights_stay_a_distribution(costs, t):
    lr = Learner(4, 5)
    before = lr.weights
    lr.update(t, costs)
    w = lr.weights
    assert np.all(w > 0) and abs(w.sum() - 1) < 1e-12
    if len(costs) == 1:
        c = np.array(costs[0])
        factor = w / before
        order = np.argsort(c)
        assert np.all(np.diff(factor[order]) <= 1e-12)


def test_counterfactual_cost_examples():
    job = Job(1, 1, 24, 30, 4)
    cheap = SpotPriceTrace([to_micro("0.12")] * 40)
    c = counterfactual_cost(job, PolicyParams(beta=Fraction(9999, 10000), bid=to_micro("0.2")), cheap, 0, CFG)
    assert c == 4 * to_micro("0.12") * CFG.tick   # one X2 hour of 4 spot instances
    never = PolicyParams(beta=Fraction(1, 2), bid=0)
    dear = SpotPriceTrace([to_micro("0.5")] * 40)
    c0 = counterfactual_cost(job, never, dear, 0, CFG)
    run_ = simulate_job(job, 0, never, dear, CFG)
    assert c0 == run_.cost and run_.spot_cost == 0
    tiny = Job(2, 1, 200, 1, 4)
    c1 = counterfactual_cost(tiny, PolicyParams(beta=Fraction(1, 2), bid=to_micro("0.2")), cheap.__class__(
        [to_micro("0.1")] * 250), 0, CFG)
    assert c1 == 4 * to_micro("0.1") * CFG.tick


def test_counterfactual_uses_frozen_pool():
    job = Job(1, 1, 24, 72, 4)
    trace = SpotPriceTrace([to_micro("0.5")] * 40)
    cfg = EngineConfig(self_owned=10)
    p = PolicyParams(beta0=Fraction(1, 2), bid=to_micro("0.2"))
    assert counterfactual_cost(job, p, trace, 1, cfg) > counterfactual_cost(job, p, trace, 2, cfg)


def test_regret_report_single_policy():
    rep = regret_report(np.array([[0.3], [0.5]]), np.array([0, 0]), 10)
    assert rep["avg_regret"] == 0


def small_world(seed, n_jobs=300, x0=5):
    jobs = generate_jobs(WorkloadConfig(rng_seed=seed, max_jobs=n_jobs, horizon=2 * n_jobs, slackness_max=x0))
    prices = generate_prices(PriceConfig(rng_seed=seed + 77), max(j.last_slot for j in jobs) + 12)
    return jobs, prices


def test_learning_one_policy_matches_fixed_run():
    jobs, prices = small_world(1)
    p = PolicyParams(beta=Fraction(1, 2), bid=to_micro("0.25"))
    res = run_learning(jobs, prices, [p], CFG, seed=3)
    _, fixed = run(jobs, prices, p, CFG)
    assert res.ledger.completion_log() == fixed.completion_log()
    assert res.regret_report()["avg_regret"] == 0


def test_chosen_counterfactual_equals_actual():
    jobs, prices = small_world(2)
    cfg = EngineConfig(self_owned=30)
    policies = [PolicyParams(beta0=Fraction(k, 4), bid=to_micro("0.2")) for k in range(3)]
    res = run_learning(jobs, prices, policies, cfg, seed=4)
    by_id = {j.id: j for j in jobs}
    for t, jid, k, c, best, _ in res.trajectory[:50]:
        assert t == by_id[jid].arrival + res.delay
    assert res.cost_matrix.shape == (len(jobs), 3)
    assert np.all(res.cost_matrix >= 0) and np.all(res.cost_matrix <= 1)


def test_dominant_policy_wins_weight():
    # every spot hour costs 5 per instance-hour: a bid that never wins spot
    # dominates bids that always win it on every job
    jobs, _ = small_world(3, n_jobs=5000, x0=3)
    prices = SpotPriceTrace([to_micro("5")] * (max(j.last_slot for j in jobs) + 12))
    good = PolicyParams(beta=Fraction(1, 2), bid=to_micro("0.1"))
    bad = [PolicyParams(beta=Fraction(1, 2), bid=to_micro("6")),
           PolicyParams(theta=Fraction(1, 2), bid=to_micro("6"))]
    res = run_learning(jobs, prices, [good] + bad, CFG, seed=5, log_weights=False)
    c = res.cost_matrix
    assert np.all(c[:, :1] <= c[:, 1:])
    assert len(c) >= 5000
    assert res.weights[0] > 0.9
