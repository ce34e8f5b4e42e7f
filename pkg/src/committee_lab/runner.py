"""Experiment commands: each writes CSVs plus a manifest and returns an exit code."""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import itertools
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from committee_lab import __version__
from committee_lab import bounds, estimators, pools as pl, separation
from committee_lab.estimators import Z99
from committee_lab.protocol import SUCCESS, TRIAL_CATEGORIES, call_budget
from committee_lab.scenario import Scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VIOLATION = 3

ROW_PREFIX = ("run_id", "seed", "trials")


def fmt(value) -> str:
    """Fixed CSV formatting: 6 significant digits, empty for null."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    _atomic_write(path, buf.getvalue())


@dataclass
class RunContext:
    scenario: Scenario
    command: str
    started: float = field(default_factory=time.perf_counter)
    files: list = field(default_factory=list)
    notes: dict = field(default_factory=lambda: {"intervals": "Wilson score, 99% two-sided"})

    @property
    def out_dir(self) -> Path:
        return Path(self.scenario.out) / self.scenario.run_id

    def prefix(self, trials: int | None = None) -> tuple:
        sc = self.scenario
        return (sc.run_id, sc.seed, sc.trials if trials is None else trials)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        path = self.out_dir / name
        write_csv(path, (*ROW_PREFIX, *header), rows)
        self.files.append(name)
        return path

    def finish(self, exit_code: int) -> int:
        manifest = {
            "run_id": self.scenario.run_id,
            "scenario_hash": self.scenario.scenario_hash,
            "tool_version": __version__,
            "command": self.command,
            "wall_time_s": round(time.perf_counter() - self.started, 3),
            "exit_code": exit_code,
            "files": sorted(self.files),
            "scenario": self.scenario.to_dict(),
            "notes": self.notes,
        }
        _atomic_write(self.out_dir / f"manifest-{self.command}.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return exit_code


# ------------------------------------------------------------------ simulate


def cmd_simulate(sc: Scenario) -> int:
    ctx = RunContext(sc, "simulate")
    config, system = sc.protocol(), sc.system()
    rep = estimators.mc_err(system, config, sc.suite(), sc.latent(), sc.trials, sc.seed,
                            workers=sc.workers, engine=sc.engine)
    budget = call_budget(config, sc.L)
    rows = [(*ctx.prefix(), "err", rep.err.point, rep.err.lo, rep.err.hi)]
    for c in TRIAL_CATEGORIES:
        e = rep.rates[c]
        rows.append((*ctx.prefix(), f"rate:{c}", e.point, e.lo, e.hi))
    for role in ("proposer", "critic", "comparator"):
        rows.append((*ctx.prefix(), f"calls:{role}", rep.calls.get(role, 0), None, None))
    rows.append((*ctx.prefix(), "max_trial_calls", rep.max_trial_calls, None, None))
    rows.append((*ctx.prefix(), "call_budget", budget, None, None))
    ctx.csv("simulate.csv", ("metric", "value", "ci_lo", "ci_hi"), rows)
    return ctx.finish(EXIT_VIOLATION if rep.max_trial_calls > budget else EXIT_OK)


# ------------------------------------------------------------ verify-bounds


@dataclass(frozen=True)
class BoundCheck:
    L: int
    k: int
    m: int
    r: int
    beta: float
    sigma: float
    eps_prop: float
    err: estimators.Estimate
    bound: bounds.BoundReport

    @property
    def passed(self) -> bool:
        return self.err.point <= self.bound.global_bound + self.err.half_width


def bound_grid(sc: Scenario) -> list[tuple]:
    return list(itertools.product(sc.grid_L, sc.grid_k, sc.grid_m, sc.grid_r, sc.grid_beta, sc.grid_sigma))


def check_bound_point(sc: Scenario, L: int, k: int, m: int, r: int, beta: float, sigma: float) -> BoundCheck:
    model = sc.latent()
    suite = sc.suite(beta=beta, sigma=sigma)
    config = sc.protocol(k=k, m=m, r=r)
    eps = bounds.eps_prop_for(model, k, suite.portfolio_size)
    rep = bounds.local_error_bound(eps, k, m, r, beta, sigma, L=L)
    err = estimators.mc_err(sc.system(L), config, suite, model, sc.trials, sc.seed, workers=sc.workers).err
    return BoundCheck(L, k, m, r, beta, sigma, eps, err, rep)


def cmd_verify_bounds(sc: Scenario) -> int:
    ctx = RunContext(sc, "verify-bounds")
    checks = [check_bound_point(sc, *pt) for pt in bound_grid(sc)]
    rows = [(*ctx.prefix(), c.L, c.k, c.m, c.r, c.beta, c.sigma, c.eps_prop, c.err.point, c.err.lo, c.err.hi,
             c.err.half_width, c.bound.global_bound, c.bound.global_clamped, c.passed) for c in checks]
    ctx.csv("verify_bounds.csv", ("L", "k", "m", "r", "beta", "sigma", "eps_prop", "mc_err", "ci_lo", "ci_hi",
                                  "half_width", "bound", "clamped", "passed"), rows)
    failed = [c for c in checks if not c.passed]
    ctx.notes["summary"] = f"{len(checks) - len(failed)}/{len(checks)} points pass"
    for c in failed:
        print(f"bound violation at L={c.L} k={c.k} m={c.m} r={c.r} beta={c.beta} sigma={c.sigma}: "
              f"mc_err={c.err.point:.6g} > bound {c.bound.global_bound:.6g} + {c.err.half_width:.6g}")
    print(ctx.notes["summary"])
    return ctx.finish(EXIT_VIOLATION if failed else EXIT_OK)


# ------------------------------------------------------------------- curves


@dataclass(frozen=True)
class CurvePoint:
    k: int
    p1: float
    p_oracle: estimators.Estimate
    p_oracle_exact: float
    limit: float
    p_system: estimators.Estimate

    @property
    def recovery(self) -> float | None:
        try:
            return bounds.recovery(self.p1, self.p_oracle.point, self.p_system.point)
        except bounds.UndefinedRecovery:
            return None


def task_curves(sc: Scenario) -> list[CurvePoint]:
    model = sc.latent()
    grid = sorted(set([1, *sc.curve_k]))
    oracle = estimators.mc_oracle_curve(model, grid, sc.trials, sc.seed, families=sc.portfolio_size)
    p1 = oracle.at(1).point
    system = sc.system(1)
    out = []
    for kk in sorted(set(sc.curve_k)):
        rep = estimators.mc_err(system, sc.protocol(k=kk), sc.suite(), model, sc.trials, sc.seed,
                                workers=sc.workers, engine=sc.engine)
        p_sys = rep.rates[SUCCESS]
        exact = 1.0 - bounds.eps_prop_for(model, kk, sc.portfolio_size)
        limit = 1.0 - model.blind_mass
        out.append(CurvePoint(kk, p1, oracle.at(kk), exact, limit, p_sys))
    return out


def cmd_curves(sc: Scenario) -> int:
    ctx = RunContext(sc, "curves")
    pts = task_curves(sc)
    rows = [(*ctx.prefix(), p.k, p.p1, p.p_oracle.point, p.p_oracle.lo, p.p_oracle.hi, p.p_oracle_exact, p.limit,
             p.p_system.point, p.p_system.lo, p.p_system.hi, p.recovery) for p in pts]
    ctx.csv("curves.csv", ("k", "p1", "p_oracle", "p_oracle_lo", "p_oracle_hi", "p_oracle_exact", "oracle_limit",
                           "p_system", "p_system_lo", "p_system_hi", "recovery"), rows)
    return ctx.finish(EXIT_OK)


# ------------------------------------------------------------------- sizing


def cmd_sizing(sc: Scenario) -> int:
    ctx = RunContext(sc, "sizing")
    res = bounds.sizing_rule(sc.delta, sc.L, sc.alpha0, sc.beta0, sc.sigma0, sc.portfolio_size)
    text = json.dumps(res.as_dict(), sort_keys=True)
    print(text)
    _atomic_write(ctx.out_dir / "sizing.json", text + "\n")
    ctx.files.append("sizing.json")
    return ctx.finish(EXIT_OK)


# --------------------------------------------------------------- separation


def cmd_separation(sc: Scenario) -> int:
    ctx = RunContext(sc, "separation")
    reports = separation.run_separation(sc.sep_M, sc.sep_trials, sc.sep_samples, sc.seed)
    rows = []
    for rep in reports:
        for w in rep.worlds:
            rows.append((*ctx.prefix(sc.sep_trials), rep.critic, w.theta, w.violations, w.sound_checks, w.edge,
                         rep.transcripts_identical, rep.sound_everywhere, rep.worst_world_edge,
                         rep.demonstrates_separation))
    ctx.csv("separation.csv", ("critic", "theta", "violations", "sound_checks", "edge", "transcripts_identical",
                               "sound_everywhere", "worst_world_edge", "demonstrates_separation"), rows)
    ok = all(r.transcripts_identical and r.demonstrates_separation for r in reports)
    return ctx.finish(EXIT_OK if ok else EXIT_VIOLATION)


# -------------------------------------------------------------------- pools


def pool_params(sc: Scenario) -> dict:
    keys = ("seed", "pool_k", "pool_count", "pool_judge_votes", "pool_comparator_votes", "pool_latent_masses",
            "pool_beta", "pool_sigma", "pool_tie_prob", "pool_pos_bias", "pool_judge_false_reject")
    d = sc.to_dict()
    return {k: d[k] for k in keys}


def pool_set_id(sc: Scenario) -> str:
    blob = json.dumps(pool_params(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def generate_scenario_pools(sc: Scenario) -> list[pl.CandidatePool]:
    return pl.generate_pools(sc.pool_suite(), sc.pool_latent(), sc.pool_k, sc.pool_judge_votes,
                             sc.pool_comparator_votes, sc.pool_count, sc.seed)


def cmd_pool_gen(sc: Scenario) -> int:
    ctx = RunContext(sc, "pool-gen")
    path = Path(sc.pool_file) if sc.pool_file else ctx.out_dir / "pools.jsonl"
    pl.write_pools(path, generate_scenario_pools(sc), {"pool_set": pool_set_id(sc), **pool_params(sc)})
    ctx.files.append(str(path))
    print(path)
    return ctx.finish(EXIT_OK)


def scenario_selectors(sc: Scenario) -> dict:
    debias = sc.pool_debias
    return {
        "binary-majority": pl.select_binary_majority,
        "confidence-weighted": pl.select_confidence_weighted,
        "comparator-copeland": functools.partial(pl.select_comparator_copeland, debias=debias),
        "hybrid": functools.partial(pl.select_hybrid, tau_rate=sc.pool_tau_rate, tau_count=sc.pool_tau_count,
                                    debias=debias),
    }


@dataclass(frozen=True)
class OrderingCheck:
    better: str
    worse: str
    gap: float
    margin: float  # z times the standard error of the paired difference

    @property
    def significant(self) -> bool:
        return self.gap - self.margin > 0

    @property
    def non_inferior(self) -> bool:
        return self.gap + self.margin >= 0


def ordering_checks(indicators: dict) -> list[OrderingCheck]:
    out = []
    for better, worse in (("hybrid", "comparator-copeland"), ("comparator-copeland", "binary-majority")):
        gap, margin = pl.paired_gap(indicators[better], indicators[worse], Z99)
        out.append(OrderingCheck(better, worse, gap, margin))
    return out


def cmd_ablate(sc: Scenario) -> int:
    ctx = RunContext(sc, "ablate")
    if sc.pool_file:
        header, pools = pl.read_pools(sc.pool_file)
        set_id = header.get("pool_set") or hashlib.sha256(Path(sc.pool_file).read_bytes()).hexdigest()[:12]
    else:
        pools, set_id = generate_scenario_pools(sc), pool_set_id(sc)
    n = len(pools)
    k = pools[0].k
    pre = (*ctx.prefix(n), set_id)
    head = ("pool_set", "selector", "k_or_votes", "solve_rate", "ci_lo", "ci_hi", "pools")
    sels = scenario_selectors(sc)

    def row(name, x, ind):
        e = pl.rate(ind, name, sc.seed)
        return (*pre, name, x, e.point, e.lo, e.hi, n)

    oracle = pl.oracle_indicators(pools)
    ind = {name: pl.solve_indicators(pools, fn) for name, fn in sels.items()}
    ctx.csv("selectors.csv", head, [row(name, k, v) for name, v in ind.items()] + [row("oracle", k, oracle)])

    dominated = all((v <= oracle).all() for v in ind.values())
    checks = ordering_checks(ind)
    ctx.csv("ordering.csv", ("pool_set", "better", "worse", "gap", "margin_99", "significant", "non_inferior"),
            [(*pre, c.better, c.worse, c.gap, c.margin, c.significant, c.non_inferior) for c in checks])

    judge_n = pools[0].judge_vote_count
    thr_rows = []
    for tau in range(judge_n + 1):
        fn = functools.partial(pl.select_hybrid, tau_rate=None, tau_count=tau, debias=sc.pool_debias)
        thr_rows.append(row(f"hybrid-tau{tau}", tau, pl.solve_indicators(pools, fn)))
    ctx.csv("thresholds.csv", head, thr_rows)

    rule_rows = []
    for rule in ("copeland", "sequential-king", "strict-dominance", "single-elim"):
        fn = functools.partial(pl.tournament_variants, rule=rule, debias=sc.pool_debias)
        rule_rows.append(row(rule, k, pl.solve_indicators(pools, fn)))
    ctx.csv("tournament_rules.csv", head, rule_rows)

    budget_rows = []
    orc_curve = None
    for name in ("hybrid", "comparator-copeland", "binary-majority"):
        curve, orc_curve = pl.budget_ablation(pools, sels[name], sc.pool_budget_grid, sc.seed)
        budget_rows += [(*pre, name, kk, e.point, e.lo, e.hi, n) for kk, e in curve.points]
    budget_rows += [(*pre, "oracle", kk, e.point, e.lo, e.hi, n) for kk, e in orc_curve.points]
    ctx.csv("budget.csv", head, budget_rows)
    ctx.notes["budget_schedule"] = "k' < k uses cyclic index windows averaged over all k rotations"

    vote_rows = []
    for kind, names in (("judge", ("binary-majority", "hybrid")), ("pair", ("comparator-copeland", "hybrid"))):
        cached = judge_n if kind == "judge" else pools[0].pair_vote_count
        for name in names:
            curve = pl.vote_subset_ablation(pools, sels[name], range(1, cached + 1), kind, sc.seed)
            vote_rows += [(*pre, f"{name}:{kind}-votes", v, e.point, e.lo, e.hi, n) for v, e in curve.points]
    ctx.csv("votes.csv", head, vote_rows)
    ctx.notes["vote_schedule"] = "vote ablations keep the first n cached votes (prefix order)"

    dec_rows = []
    for name, fn in sels.items():
        counts = pl.decompose(pools, fn)
        dec_rows += [(*pre, name, cat, cnt) for cat, cnt in counts.items()]
    ctx.csv("decomposition.csv", ("pool_set", "selector", "category", "count"), dec_rows)

    for c in checks:
        print(f"{c.better} - {c.worse}: {c.gap:+.6g} +/- {c.margin:.6g}")
    return ctx.finish(EXIT_OK if dominated else EXIT_VIOLATION)
