"""Weighted-majority selection over a policy grid with delayed, full-information feedback.

Each arriving job gets a policy sampled from the current weights.  Once the
prices of a job's whole window are known (``d = max d_j`` slots after its
arrival) every policy's cost on that job is recomputed by replaying the job
alone, and all weights are multiplied by exp(-eta_t * normalized cost).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import Engine, EngineConfig, allocate_self_owned, simulate_job
from .model import Job, PolicyParams, SpotPriceTrace


class Learner:
    """Global weight vector over ``n`` policies, kept in the log domain."""

    def __init__(self, n: int, delay: int, seed: int = 0):
        if n < 1:
            raise ValueError("need at least one policy")
        if delay < 1:
            raise ValueError("delay d must be >= 1")
        self.n = n
        self.d = delay
        self._log_w = np.zeros(n)
        self.rng = np.random.default_rng(seed)

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self._log_w - self._log_w.max())
        return w / w.sum()

    def eta(self, t: int) -> float:
        if t <= self.d:
            return 0.0
        return math.sqrt(2 * math.log(self.n) / (self.d * (t - self.d)))

    def choose(self, job: Job | None = None) -> int:
        if self.n == 1:
            return 0
        cum = np.cumsum(self.weights)
        return int(min(np.searchsorted(cum, self.rng.random() * cum[-1], side="right"), self.n - 1))

    def update(self, t: int, costs: Sequence[Sequence[float]]) -> None:
        """Apply one multiplicative step per resolved job, in the given order."""
        arrs = [np.asarray(c, dtype=float) for c in costs]
        for c in arrs:
            if c.shape != (self.n,):
                raise ValueError(f"cost vector has shape {c.shape}, expected ({self.n},)")
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise ValueError("costs must be finite and non-negative")
        if t <= self.d:
            return
        eta = self.eta(t)
        for c in arrs:
            self._log_w -= eta * c
            self._log_w -= self._log_w.max()


def counterfactual_cost(job: Job, params: PolicyParams, prices: SpotPriceTrace,
                        pool_min: int, cfg: EngineConfig) -> int:
    """Cost in ticks of running ``job`` alone under ``params`` with a frozen pool availability."""
    r = allocate_self_owned(job, params, pool_min, cfg.Len)
    return simulate_job(job, r, params, prices, cfg).cost


def cost_normalizer(job: Job, cfg: EngineConfig) -> int:
    """Ticks of the all-on-demand worst case: delta instances for every hour of the window."""
    return cfg.on_demand_price * cfg.tick * job.delta * -(-job.deadline // cfg.Len)


@dataclass
class LearningResult:
    ledger: object
    weights: np.ndarray
    trajectory: list[tuple] = field(default_factory=list)
    cost_matrix: np.ndarray | None = None       # normalized, one row per resolved job
    chosen: np.ndarray | None = None
    clipped: int = 0
    delay: int = 0

    def regret_report(self, confidence: float = 0.05) -> dict:
        return regret_report(self.cost_matrix, self.chosen, self.delay, confidence)


def regret_report(cost_matrix: np.ndarray, chosen: np.ndarray, delay: int,
                  confidence: float = 0.05) -> dict:
    """Average regret against the best fixed policy in hindsight, and the high-probability bound."""
    n_jobs, n = cost_matrix.shape
    if n_jobs == 0:
        return {"avg_regret": 0.0, "bound": math.inf, "resolved": 0}
    got = cost_matrix[np.arange(n_jobs), chosen].sum()
    best = cost_matrix.sum(axis=0).min()
    bound = 9 * math.sqrt(2 * delay * math.log(n / confidence) / n_jobs)
    return {"avg_regret": float((got - best) / n_jobs), "bound": bound, "resolved": n_jobs}


def run_learning(jobs: Sequence[Job], prices: SpotPriceTrace, policies: Sequence[PolicyParams],
                 cfg: EngineConfig, seed: int = 0, log_weights: bool = True) -> LearningResult:
    """Drive the engine with learner-chosen policies and update on delayed counterfactual costs."""
    jobs = sorted(jobs, key=lambda j: (j.arrival, j.id))
    if not jobs:
        return LearningResult(Engine(cfg, prices).ledger, np.full(len(policies), 1 / len(policies)),
                              cost_matrix=np.zeros((0, len(policies))), chosen=np.zeros(0, int))
    d = max(j.deadline for j in jobs)
    learner = Learner(len(policies), d, seed)
    engine = Engine(cfg, prices)
    arrivals = defaultdict(list)
    for j in jobs:
        arrivals[j.arrival].append(j)
    due = defaultdict(list)
    rows, picks, trajectory = [], [], []
    clipped = 0
    for t in sorted(set(arrivals) | {a + d for a in arrivals}):
        for job in arrivals.get(t, ()):
            k = learner.choose(job)
            run = engine.admit(job, policies[k], k)
            due[t + d].append((job, k, run.pool_min, run.cost))
        batch = due.pop(t, [])
        if not batch:
            continue
        vectors = []
        for job, k, pool_min, actual in batch:
            raw = [actual if i == k else counterfactual_cost(job, p, prices, pool_min, cfg)
                   for i, p in enumerate(policies)]
            scale = cost_normalizer(job, cfg)
            norm = np.array(raw, dtype=float) / scale
            if norm.max() > 1:
                clipped += 1
                norm = np.minimum(norm, 1.0)
            vectors.append(norm)
            rows.append(norm)
            picks.append(k)
            best = int(np.argmin(raw))
            learner.update(t, [norm])
            entry = (t, job.id, k, cfg.money(actual), best)
            trajectory.append(entry + (tuple(learner.weights),) if log_weights else entry)
    return LearningResult(engine.ledger, learner.weights, trajectory,
                          np.array(rows), np.array(picks, dtype=int), clipped, d)
