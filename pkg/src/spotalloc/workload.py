"""Synthetic job streams and spot-price traces, plus their text file formats.

Job trace: one job per line, ``id a_j d_j z_j delta_j`` as decimal integers;
blank lines and anything after ``#`` are ignored.
Price trace: one decimal price (currency per instance-hour) per line, in slot order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .model import MICRO, InfeasibleJobError, Job, SpotPriceTrace, to_micro


class TraceFormatError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class WorkloadConfig:
    arrival_rate: float = 1.0
    size_base: int = 12 * 20
    shape: float = 1 / 1.01       # epsilon
    scale: float = 1 / 6.06       # sigma
    location: float = 1 / 6       # mu
    min_x: float = 0.5
    max_x: float = 10.0
    slackness_max: float = 3.0    # x0
    delta: int = 20
    horizon: int = 3000
    rng_seed: int = 0
    max_jobs: int | None = None   # stop after this many jobs (arrival order)

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be positive")
        if self.min_x > self.max_x:
            raise ValueError("min_x must not exceed max_x")
        if self.min_x < self.location:
            raise ValueError("min_x must be at least the Pareto location")
        if self.slackness_max < 1:
            raise ValueError("slackness_max (x0) must be >= 1")
        if self.delta < 1 or self.horizon < 1:
            raise ValueError("delta and horizon must be >= 1")
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("Pareto shape and scale must be positive")
        if self.size_base * self.min_x < 1:
            raise ValueError("size_base * min_x must be >= 1")


@dataclass(frozen=True)
class PriceConfig:
    kind: str = "exponential"     # exponential | constant | file
    mean: float = 1.1
    rng_seed: int = 0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "constant", "file"):
            raise ValueError(f"unknown price kind {self.kind!r}")
        if self.kind != "file" and self.mean <= 0:
            raise ValueError("price mean must be positive")
        if self.kind == "file" and not self.path:
            raise ValueError("file price trace needs a path")


def _gpd_cdf(x, cfg: WorkloadConfig):
    return 1.0 - (1.0 + cfg.shape * (x - cfg.location) / cfg.scale) ** (-1.0 / cfg.shape)


def sample_pareto(rng: np.random.Generator, n: int, cfg: WorkloadConfig) -> np.ndarray:
    """Inverse-CDF draws from the generalized Pareto truncated to [min_x, max_x]."""
    lo, hi = _gpd_cdf(cfg.min_x, cfg), _gpd_cdf(cfg.max_x, cfg)
    u = lo + rng.random(n) * (hi - lo)
    x = cfg.location + cfg.scale / cfg.shape * ((1.0 - u) ** (-cfg.shape) - 1.0)
    return np.clip(x, cfg.min_x, cfg.max_x)


def _round_half_up(v: float) -> int:
    return int(Decimal(repr(float(v))).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def generate_jobs(cfg: WorkloadConfig) -> list[Job]:
    rng = np.random.default_rng(cfg.rng_seed)
    counts = rng.poisson(cfg.arrival_rate, cfg.horizon)
    total = int(counts.sum())
    xs = sample_pareto(rng, total, cfg)
    stretch = rng.uniform(1.0, cfg.slackness_max, total)
    jobs = []
    k = 0
    for t, c in enumerate(counts, start=1):
        for _ in range(int(c)):
            if cfg.max_jobs is not None and k >= cfg.max_jobs:
                return jobs
            z = max(1, _round_half_up(cfg.size_base * xs[k]))
            d = max(math.ceil(stretch[k] * z / cfg.delta), -(-z // cfg.delta))
            jobs.append(Job(k, t, d, z, cfg.delta))
            k += 1
    return jobs


def generate_prices(cfg: PriceConfig, horizon: int) -> SpotPriceTrace:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if cfg.kind == "constant":
        return SpotPriceTrace(np.full(horizon, to_micro(cfg.mean), dtype=np.int64))
    if cfg.kind == "file":
        trace = load_prices(cfg.path)
        if len(trace) < horizon:
            raise ValueError(f"{cfg.path}: {len(trace)} prices, {horizon} needed")
        return trace
    rng = np.random.default_rng(cfg.rng_seed)
    draws = rng.exponential(cfg.mean, horizon)
    return SpotPriceTrace(np.floor(draws * MICRO + 0.5).astype(np.int64))


def save_jobs(path, jobs) -> None:
    lines = ["# id a_j d_j z_j delta_j"]
    lines += [f"{j.id} {j.arrival} {j.deadline} {j.size} {j.delta}" for j in jobs]
    Path(path).write_text("\n".join(lines) + "\n")


def load_jobs(path) -> list[Job]:
    jobs = []
    seen = set()
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise TraceFormatError(path, no, f"expected 5 integers 'id a_j d_j z_j delta_j', got {len(parts)} fields")
        try:
            jid, a, d, z, delta = (int(p) for p in parts)
        except ValueError:
            raise TraceFormatError(path, no, "fields must be decimal integers") from None
        if jid in seen:
            raise TraceFormatError(path, no, f"duplicate job id {jid}")
        try:
            jobs.append(Job(jid, a, d, z, delta))
        except InfeasibleJobError:
            raise TraceFormatError(path, no, f"feasibility z <= delta*d violated ({z} > {delta}*{d})") from None
        except ValueError as exc:
            raise TraceFormatError(path, no, str(exc)) from None
        seen.add(jid)
    return jobs


def save_prices(path, trace: SpotPriceTrace) -> None:
    text = "".join(f"{Decimal(int(p)).scaleb(-6).normalize():f}\n" for p in trace.prices)
    Path(path).write_text(text)


def load_prices(path) -> SpotPriceTrace:
    values = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            v = to_micro(line)
        except ArithmeticError:
            raise TraceFormatError(path, no, f"not a decimal price: {line!r}") from None
        if v < 0:
            raise TraceFormatError(path, no, "spot prices must be non-negative")
        values.append(v)
    return SpotPriceTrace(np.array(values, dtype=np.int64))
