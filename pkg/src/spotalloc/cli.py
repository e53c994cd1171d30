"""Experiment runner: policy sweeps, online learning, CSV/manifest output.

Every policy in a sweep is evaluated on the same job and price traces of
each seed, and alpha is pooled over seeds (total money / total work).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .engine import EngineConfig, metrics, run
from .learning import run_learning as learn_loop
from .model import PolicyParams, from_micro, to_micro
from .workload import PriceConfig, WorkloadConfig, generate_jobs, generate_prices, load_jobs

MODES = ("sweep-spot", "sweep-selfowned", "learn")
PRESETS = ("standard",)


class ConfigError(ValueError):
    pass


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("spotalloc").joinpath(f"presets/{name}.yaml").read_text()
    return yaml.safe_load(text)


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _frac(v, field: str) -> Fraction:
    try:
        return Fraction(str(v))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{field}: {v!r} is not a rational number") from None


def _need(cfg: dict, path: str):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing config field {path!r}")
        node = node[part]
    return node


@dataclass(frozen=True)
class Grid:
    betas: tuple[Fraction, ...]
    beta0s: tuple[Fraction, ...]
    bids: tuple[int, ...]
    thetas: tuple[Fraction, ...]

    @classmethod
    def from_config(cls, cfg: dict) -> "Grid":
        g = _need(cfg, "grid")
        betas = tuple(_frac(v, "grid.betas") for v in _need(cfg, "grid.betas"))
        beta0s = tuple(_frac(v, "grid.beta0s") for v in g.get("beta0s", g["betas"]))
        bids = tuple(to_micro(str(v)) for v in _need(cfg, "grid.bids"))
        thetas = tuple(_frac(v, "grid.thetas") for v in _need(cfg, "grid.thetas"))
        for name, vals in (("betas", betas), ("beta0s", beta0s), ("bids", bids), ("thetas", thetas)):
            if not vals:
                raise ConfigError(f"grid.{name} must not be empty")
        if any(not 0 <= b < 1 for b in betas + beta0s):
            raise ConfigError("grid.betas / grid.beta0s must lie in [0, 1)")
        if any(b <= 0 for b in bids):
            raise ConfigError("grid.bids must be positive")
        if any(not 0 <= t <= 1 for t in thetas):
            raise ConfigError("grid.thetas must lie in [0, 1]")
        return cls(betas, beta0s, bids, thetas)


def engine_config(cfg: dict, self_owned: int = 0) -> EngineConfig:
    return EngineConfig(
        slot_minutes=int(cfg.get("slot_minutes", 5)),
        on_demand_price=to_micro(str(_need(cfg, "on_demand_price"))),
        self_owned=int(self_owned),
        self_owned_price=to_micro(str(cfg.get("self_owned_price", 0))),
        release_self_owned=bool(cfg.get("release_self_owned", True)),
    )


def workload_config(cfg: dict, x0, seed, n_jobs: int) -> WorkloadConfig:
    w = _need(cfg, "workload")
    par = w.get("pareto", {})
    rate = float(w.get("arrival_rate", 1.0))
    return WorkloadConfig(
        arrival_rate=rate,
        size_base=int(w.get("size_base", 240)),
        shape=float(_frac(par.get("shape", "100/101"), "workload.pareto.shape")),
        scale=float(_frac(par.get("scale", "100/606"), "workload.pareto.scale")),
        location=float(_frac(par.get("location", "1/6"), "workload.pareto.location")),
        min_x=float(par.get("min_x", 0.5)),
        max_x=float(par.get("max_x", 10)),
        slackness_max=float(x0),
        delta=int(w.get("delta", 20)),
        horizon=int(n_jobs / rate * 1.5) + 100,
        rng_seed=seed,
        max_jobs=n_jobs,
    )


def make_traces(cfg: dict, x0, seed: int, n_jobs: int, stream: int = 0):
    """Job and price traces for one (job type, seed).  ``stream`` separates calibration traces."""
    w = cfg["workload"]
    if w.get("trace"):
        jobs = load_jobs(w["trace"])[:n_jobs]
    else:
        type_key = int(round(float(x0) * 1000))
        jobs = generate_jobs(workload_config(cfg, x0, [seed, stream, 0, type_key], n_jobs))
    p = _need(cfg, "prices")
    Len = 60 // int(cfg.get("slot_minutes", 5))
    horizon = max((j.last_slot for j in jobs), default=0) + Len
    type_key = int(round(float(x0) * 1000))
    pc = PriceConfig(kind=p.get("kind", "exponential"), mean=float(p.get("mean", 1.1)),
                     rng_seed=[seed, stream, 1, type_key], path=p.get("trace"))
    return jobs, generate_prices(pc, horizon)


@dataclass
class Tally:
    """Pooled outcome of one policy over several (jobs, prices) pairs."""
    money: float = 0.0
    work: int = 0
    spot_money: float = 0.0
    spot_run_slots: int = 0
    self_used: int = 0
    self_capacity: int = 0

    def add(self, ledger):
        cfg = ledger.cfg
        self.money += ledger.total_money
        self.work += ledger.total_work
        self.spot_money += cfg.money(ledger.spot_money)
        self.spot_run_slots += ledger.spot_run_slots
        self.self_used += ledger.self_used
        self.self_capacity += cfg.self_owned * ledger.horizon_end

    @property
    def alpha(self) -> float:
        return self.money / self.work if self.work else math.nan

    def p_prime(self, Len: int) -> tuple[float, float]:
        per_slot = self.spot_money / self.spot_run_slots if self.spot_run_slots else 0.0
        return per_slot, per_slot * Len

    @property
    def gamma(self):
        return self.self_used / self.self_capacity if self.self_capacity else None


def evaluate(policies, traces, ecfg: EngineConfig) -> list[Tally]:
    out = []
    for params in policies:
        tally = Tally()
        for jobs, prices in traces:
            tally.add(run(jobs, prices, params, ecfg)[1])
        out.append(tally)
    return out


def spot_grid(grid: Grid) -> list[PolicyParams]:
    return [PolicyParams(beta=b, bid=bid) for bid in grid.bids for b in grid.betas]


def theta_grid(grid: Grid) -> list[PolicyParams]:
    return [PolicyParams(theta=t, bid=bid) for bid in grid.bids for t in grid.thetas]


def calibrate_beta(cfg: dict, grid: Grid, x0, n_jobs: int) -> dict[int, Fraction]:
    """beta* per bid: the alpha-minimising beta on a separate trace without self-owned instances."""
    seed = int(cfg.get("calibration_seed", 0))
    traces = [make_traces(cfg, x0, seed, n_jobs, stream=1)]
    ecfg = engine_config(cfg, 0)
    best = {}
    for bid in grid.bids:
        tallies = evaluate([PolicyParams(beta=b, bid=bid) for b in grid.betas], traces, ecfg)
        k = min(range(len(grid.betas)), key=lambda i: (tallies[i].alpha, i))
        best[bid] = grid.betas[k]
    return best


def _row(mode, x0, R, family, params: PolicyParams, tally: Tally, Len, group_best=False):
    pp, pph = tally.p_prime(Len)
    return {
        "mode": mode, "x0": _fmt(x0), "R": R, "family": family,
        "bid": f"{from_micro(params.bid):.2f}",
        "beta": "" if params.theta is not None else _fmt(params.beta),
        "beta0": "" if params.theta is not None or params.self_owned == "greedy" else _fmt(params.beta0),
        "theta": "" if params.theta is None else _fmt(params.theta),
        "self_owned_rule": params.self_owned,
        "alpha": f"{tally.alpha:.9f}", "money": f"{tally.money:.6f}", "work": tally.work,
        "p_prime": f"{pp:.9f}", "p_prime_hourly": f"{pph:.9f}",
        "gamma": "" if tally.gamma is None else f"{tally.gamma:.6f}",
        "group_best": int(group_best),
    }


def _fmt(v) -> str:
    v = Fraction(str(v)) if not isinstance(v, Fraction) else v
    return f"{float(v):.6g}"


POLICY_FIELDS = ["mode", "x0", "R", "family", "bid", "beta", "beta0", "theta", "self_owned_rule",
                 "alpha", "money", "work", "p_prime", "p_prime_hourly", "gamma", "group_best"]
RHO_FIELDS = ["mode", "x0", "job_type", "R", "best_ours", "alpha_ours", "best_baseline",
              "alpha_baseline", "rho"]
WEIGHT_FIELDS = ["R", "t", "job_id", "chosen_pi", "c_chosen", "argmin_pi", "weights"]


def _mark_groups(rows, key):
    groups = {}
    for i, r in enumerate(rows):
        g = key(r)
        if g not in groups or float(r["alpha"]) < float(rows[groups[g]]["alpha"]):
            groups[g] = i
    for i in groups.values():
        rows[i]["group_best"] = 1


def _job_type(cfg, x0) -> str:
    types = [float(v) for v in cfg["workload"]["slackness_max"]]
    k = types.index(float(x0)) + 1 if float(x0) in types else 0
    return f"type{k} (x0={_fmt(x0)})"


def _best(policies, tallies):
    k = min(range(len(policies)), key=lambda i: (tallies[i].alpha, i))
    return policies[k], tallies[k]


def run_sweep(cfg: dict, mode: str) -> dict:
    """Returns {"policies": rows, "rho": rows}."""
    if mode not in ("sweep-spot", "sweep-selfowned"):
        raise ConfigError(f"run_sweep needs a sweep mode, got {mode!r}")
    grid = Grid.from_config(cfg)
    seeds = [int(s) for s in _need(cfg, "seeds")]
    n_jobs = int(_need(cfg, "workload.jobs"))
    Len = engine_config(cfg).Len
    x0s = _need(cfg, "workload.slackness_max")
    if not seeds or not x0s:
        raise ConfigError("seeds and workload.slackness_max must not be empty")
    policy_rows, rho_rows = [], []
    for x0 in x0s:
        traces = [make_traces(cfg, x0, s, n_jobs) for s in seeds]
        if mode == "sweep-spot":
            R_values = [0]
            ours, base = spot_grid(grid), theta_grid(grid)
        else:
            R_values = [int(r) for r in _need(cfg, "self_owned")]
            star = calibrate_beta(cfg, grid, x0, n_jobs)
            ours = [PolicyParams(beta=star[bid], beta0=b0, bid=bid)
                    for bid in grid.bids for b0 in grid.beta0s]
            base = [PolicyParams(beta=star[bid], bid=bid, self_owned="greedy") for bid in grid.bids]
        for R in R_values:
            ecfg = engine_config(cfg, R)
            t_ours = evaluate(ours, traces, ecfg)
            t_base = evaluate(base, traces, ecfg)
            rows = [_row(mode, x0, R, "ours", p, t, Len) for p, t in zip(ours, t_ours)]
            _mark_groups(rows, lambda r: r["bid"])
            brows = [_row(mode, x0, R, "baseline", p, t, Len) for p, t in zip(base, t_base)]
            _mark_groups(brows, lambda r: r["bid"])
            policy_rows += rows + brows
            po, to = _best(ours, t_ours)
            pb, tb = _best(base, t_base)
            rho_rows.append({
                "mode": mode, "x0": _fmt(x0), "job_type": _job_type(cfg, x0), "R": R,
                "best_ours": po.label(), "alpha_ours": f"{to.alpha:.9f}",
                "best_baseline": pb.label(), "alpha_baseline": f"{tb.alpha:.9f}",
                "rho": f"{1 - to.alpha / tb.alpha:.6f}",
            })
    return {"policies": sort_policies(policy_rows), "rho": rho_rows}


def sort_policies(rows):
    def key(r):
        return (r["mode"], float(r["x0"]), int(r["R"]), r["family"], float(r["bid"]),
                float(r["beta0"] or -1), float(r["beta"] or -1), float(r["theta"] or -1))
    return sorted(rows, key=key)


def run_learning(cfg: dict) -> dict:
    """Online learning per self-owned count; returns policy, rho, weight and regret rows."""
    grid = Grid.from_config(cfg)
    lcfg = _need(cfg, "learning")
    x0 = lcfg.get("slackness_max", 5)
    n_jobs = int(lcfg.get("jobs", 30000))
    seeds = [int(s) for s in _need(cfg, "seeds")]
    seed = seeds[0]
    R_values = [int(r) for r in lcfg.get("self_owned", [0])]
    confidence = float(lcfg.get("confidence", 0.05))
    star = calibrate_beta(cfg, grid, x0, int(_need(cfg, "workload.jobs")))
    jobs, prices = make_traces(cfg, x0, seed, n_jobs)
    Len = engine_config(cfg).Len
    policy_rows, rho_rows, weight_rows, reports = [], [], [], []
    for R in R_values:
        ecfg = engine_config(cfg, R)
        if R == 0:
            policies = [PolicyParams(beta=star[bid], bid=bid) for bid in grid.bids]
            base = theta_grid(grid)
        else:
            policies = [PolicyParams(beta=star[bid], beta0=b0, bid=bid)
                        for bid in grid.bids for b0 in grid.beta0s]
            base = [PolicyParams(beta=star[bid], bid=bid, self_owned="greedy") for bid in grid.bids]
        res = learn_loop(jobs, prices, policies, ecfg, seed=seed)
        learned = Tally()
        learned.add(res.ledger)
        fixed = evaluate(policies, [(jobs, prices)], ecfg)
        t_base = evaluate(base, [(jobs, prices)], ecfg)
        pf, tf = _best(policies, fixed)
        pb, tb = _best(base, t_base)
        rep = res.regret_report(confidence)
        reports.append({"R": R, **rep, "clipped": res.clipped,
                        "alpha_learner": learned.alpha, "alpha_best_fixed": tf.alpha})
        for p, t, w in zip(policies, fixed, res.weights):
            row = _row("learn", x0, R, "ours", p, t, Len)
            row["final_weight"] = f"{w:.9f}"
            policy_rows.append(row)
        rho_rows.append({
            "mode": "learn", "x0": _fmt(x0), "job_type": f"learning (x0={_fmt(x0)})", "R": R,
            "best_ours": "learner", "alpha_ours": f"{learned.alpha:.9f}",
            "best_baseline": pb.label(), "alpha_baseline": f"{tb.alpha:.9f}",
            "rho": f"{1 - learned.alpha / tb.alpha:.6f}",
        })
        for t, jid, k, c, best, w in res.trajectory:
            weight_rows.append({"R": R, "t": t, "job_id": jid, "chosen_pi": k,
                                "c_chosen": f"{c:.9f}", "argmin_pi": best,
                                "weights": " ".join(f"{x:.9g}" for x in w)})
    return {"policies": policy_rows, "rho": rho_rows, "weights": weight_rows, "regret": reports}


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def source_digest() -> str:
    h = hashlib.sha256()
    pkg = Path(__file__).parent
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def emit(result: dict, cfg: dict, out_dir) -> list[Path]:
    """Write policies.csv, rho.csv, weights.csv (learning) and manifest.txt."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    fields = POLICY_FIELDS + (["final_weight"] if cfg.get("mode") == "learn" else [])
    files = {
        "policies.csv": _csv_text(result.get("policies", []), fields),
        "rho.csv": _csv_text(result.get("rho", []), RHO_FIELDS),
    }
    if "weights" in result:
        files["weights.csv"] = _csv_text(result["weights"], WEIGHT_FIELDS)
    if "regret" in result:
        files["regret.csv"] = _csv_text(
            [{k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()} for r in result["regret"]],
            ["R", "avg_regret", "bound", "resolved", "clipped", "alpha_learner", "alpha_best_fixed"])
    header = (f"# spotalloc {__version__} source {source_digest()}\n"
              f"# re-run: spotalloc --config manifest.txt --out <dir>\n")
    files["manifest.txt"] = header + yaml.safe_dump(cfg, sort_keys=True)
    written = []
    for name, text in files.items():
        path = out / name
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spotalloc", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="YAML config file (merged over the preset)")
    ap.add_argument("--preset", choices=PRESETS, help="start from a shipped preset")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--seed", type=int, help="single seed (replaces the seed list)")
    ap.add_argument("--jobs", type=int, help="jobs per run (sweeps) or learning jobs (learn)")
    ap.add_argument("--out", default="out", help="output directory")
    return ap


def resolve_config(args) -> dict:
    cfg = load_preset(args.preset or "standard") if (args.preset or not args.config) else {}
    if args.config:
        try:
            user = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
        cfg = merge(cfg, user)
    if args.mode:
        cfg["mode"] = args.mode
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must fit in 64 unsigned bits")
        cfg["seeds"] = [args.seed]
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        key = "learning" if cfg.get("mode") == "learn" else "workload"
        cfg.setdefault(key, {})["jobs"] = args.jobs
    if cfg.get("mode") not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    return cfg


def execute(cfg: dict) -> dict:
    if cfg["mode"] == "learn":
        return run_learning(cfg)
    return run_sweep(cfg, cfg["mode"])


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = execute(cfg)
        paths = emit(result, cfg, args.out)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"spotalloc: error: {exc}", file=sys.stderr)
        return 2
    for row in result["rho"]:
        print(f"{row['mode']} {row['job_type']} R={row['R']}: rho={row['rho']} "
              f"(ours {row['best_ours']} alpha={row['alpha_ours']}, "
              f"baseline {row['best_baseline']} alpha={row['alpha_baseline']})")
    for rep in result.get("regret", []):
        print(f"learn R={rep['R']}: avg regret {rep['avg_regret']:.4g} <= bound {rep['bound']:.4g}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


if __name__ == "__main__":
    sys.exit(main())
