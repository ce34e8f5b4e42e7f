"""Monte Carlo estimates with Wilson intervals, and exact small-instance oracles."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from committee_lab import batch
from committee_lab import rng as rng_mod
from committee_lab.protocol import (
    SUCCESS,
    TRIAL_CATEGORIES,
    WIN_I,
    WIN_J,
    PAIR_TIE,
    ProtocolConfig,
    run_trajectory,
    tournament,
)
from committee_lab.roles import LatentModel, RoleSuite, sample_worlds
from committee_lab.state_system import ConfigError, StateSystem

CONFIDENCE = 0.99
Z99 = float(stats.norm.ppf(0.5 + CONFIDENCE / 2))


def wilson_interval(successes: float, trials: int, z: float = Z99) -> tuple[float, float]:
    """Wilson score interval; ``successes`` may be fractional (averaged indicators)."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    margin = z / denom * math.sqrt(max(p * (1 - p), 0.0) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - margin), min(1.0, center + margin)


@dataclass(frozen=True)
class Estimate:
    metric: str
    point: float
    trials: int
    lo: float
    hi: float
    seed: int

    @classmethod
    def from_counts(cls, metric: str, successes: float, trials: int, seed: int) -> "Estimate":
        lo, hi = wilson_interval(successes, trials)
        point = successes / trials
        return cls(metric, point, trials, min(lo, point), max(hi, point), seed)

    @property
    def half_width(self) -> float:
        return (self.hi - self.lo) / 2

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


@dataclass
class CurveEstimate:
    points: list[tuple[int, Estimate]]

    @property
    def grid(self) -> list[int]:
        return [x for x, _ in self.points]

    @property
    def monotone(self) -> bool:
        vals = [e.point for _, e in self.points]
        return all(a <= b for a, b in zip(vals, vals[1:]))

    def at(self, x: int) -> Estimate:
        return dict(self.points)[x]


@dataclass
class ErrReport:
    err: Estimate
    rates: dict[str, Estimate]
    calls: dict[str, int]
    max_trial_calls: int


def mc_err(
    system: StateSystem,
    config: ProtocolConfig,
    suite: RoleSuite,
    model: LatentModel,
    trials: int,
    seed: int,
    workers: int = 1,
    engine: str = "batch",
) -> ErrReport:
    """Failure rate of the full protocol, with per-category rates."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if engine == "batch":
        tally = batch.simulate(system, config, suite, model, trials, seed, workers=workers)
        categories, calls, worst = tally.categories, tally.calls, tally.max_trial_calls
    elif engine == "scalar":
        categories = Counter(dict.fromkeys(TRIAL_CATEGORIES, 0))
        calls, worst = Counter(), 0
        for t in range(trials):
            out = run_trajectory(system, config, suite, model, seed, t)
            categories[out.category] += 1
            calls.update(out.calls)
            worst = max(worst, sum(out.calls.values()))
        calls = {r: calls.get(r, 0) for r in ("proposer", "critic", "comparator")}
    else:
        raise ConfigError(f"unknown engine {engine!r}", "engine")
    failures = trials - categories[SUCCESS]
    rates = {c: Estimate.from_counts(c, categories[c], trials, seed) for c in TRIAL_CATEGORIES}
    return ErrReport(Estimate.from_counts("err", failures, trials, seed), rates, dict(calls), worst)


def _blocks(trials: int, block: int = batch.BLOCK_SIZE) -> list[tuple[int, int]]:
    sizes = [block] * (trials // block) + ([trials % block] if trials % block else [])
    return list(enumerate(sizes))


def mc_eps_prop(model: LatentModel, families: int, k: int, trials: int, seed: int) -> Estimate:
    """Fraction of trials in which all ``k`` round-robin proposals are unsound."""
    misses = 0
    fam = np.arange(k) % families
    for b, n in _blocks(trials):
        q = sample_worlds(model, rng_mod.stream(seed, 8, b, 0), n, families)
        sound = rng_mod.stream(seed, 8, b, 1).random((n, k)) < q[:, fam]
        misses += int((~sound.any(axis=1)).sum())
    return Estimate.from_counts("eps_prop", misses, trials, seed)


def mc_oracle_curve(
    model: LatentModel, grid: Sequence[int], trials: int, seed: int, families: int = 1
) -> CurveEstimate:
    """Oracle best-of-k on coupled prefixes of one ``max(grid)`` sample per trial."""
    grid = sorted(set(int(g) for g in grid))
    if not grid or grid[0] < 1:
        raise ValueError("grid must be nonempty with k >= 1")
    kmax = grid[-1]
    fam = np.arange(kmax) % families
    hits = np.zeros(len(grid), dtype=np.int64)
    for b, n in _blocks(trials):
        q = sample_worlds(model, rng_mod.stream(seed, 9, b, 0), n, families)
        sound = rng_mod.stream(seed, 9, b, 1).random((n, kmax)) < q[:, fam]
        first_hit = np.where(sound.any(axis=1), sound.argmax(axis=1), kmax)
        for gi, kk in enumerate(grid):
            hits[gi] += int((first_hit < kk).sum())
    return CurveEstimate([(kk, Estimate.from_counts("p_oracle", int(h), trials, seed)) for kk, h in zip(grid, hits)])


# ------------------------------------------------------------------ exact oracle

ENUM_LIMITS = {"k": 6, "m": 3, "r": 3}


def _multinomial_outcomes(r: int, p_first: float, p_second: float) -> tuple[float, float, float]:
    """Distribution of the strict-majority result of ``r`` votes, by enumeration."""
    p_tie = max(0.0, 1.0 - p_first - p_second)
    out = [0.0, 0.0, 0.0]  # first, second, tie
    for votes in itertools.product((0, 1, 2), repeat=r):
        prob = 1.0
        for v in votes:
            prob *= (p_first, p_second, p_tie)[v]
        a, b = votes.count(0), votes.count(1)
        out[0 if 2 * a > r else 1 if 2 * b > r else 2] += prob
    return out[0], out[1], out[2]


def _pair_dist(a_sound: bool, b_sound: bool, config: ProtocolConfig, suite: RoleSuite) -> dict[int, float]:
    """Distribution over ``WIN_I / WIN_J / PAIR_TIE`` for the pair ``(a, b)``, ``a`` lower index."""
    pf, ps, _ = suite.vote_probs(a_sound, b_sound)
    o1 = _multinomial_outcomes(config.r, pf, ps)
    if config.orders == 1:
        return {WIN_I: o1[0], WIN_J: o1[1], PAIR_TIE: o1[2]}
    pf2, ps2, _ = suite.vote_probs(b_sound, a_sound)
    o2 = _multinomial_outcomes(config.r, pf2, ps2)
    win_i = o1[0] * o2[1]
    win_j = o1[1] * o2[0]
    return {WIN_I: win_i, WIN_J: win_j, PAIR_TIE: 1.0 - win_i - win_j}


def _copeland_sound_prob(tags: tuple[bool, ...], dists: dict) -> float:
    """P(Copeland winner is sound) by dynamic programming over score vectors."""
    n = len(tags)
    states = {tuple([0] * n): 1.0}
    for i in range(n):
        for j in range(i + 1, n):
            d = dists[(i, j)]
            nxt: dict = {}
            for scores, p in states.items():
                for res, pr in d.items():
                    if pr == 0.0:
                        continue
                    s = list(scores)
                    if res == WIN_I:
                        s[i] += 1
                    elif res == WIN_J:
                        s[j] += 1
                    key = tuple(s)
                    nxt[key] = nxt.get(key, 0.0) + p * pr
            states = nxt
    total = 0.0
    for scores, p in states.items():
        best = max(scores)
        if tags[scores.index(best)]:
            total += p
    return total


class _NeedPair(Exception):
    def __init__(self, pair):
        self.pair = pair


def _branching_sound_prob(tags: tuple[bool, ...], rule: str, dists: dict) -> float:
    """P(winner sound) for rules that consult pairs lazily, by branching on each pair."""

    def explore(fixed: dict) -> float:
        def play(i, j):
            if (i, j) not in fixed:
                raise _NeedPair((i, j))
            return fixed[(i, j)]

        try:
            winner = tournament(len(tags), rule, play).winner
        except _NeedPair as need:
            total = 0.0
            for res, pr in dists[need.pair].items():
                if pr > 0.0:
                    total += pr * explore({**fixed, need.pair: res})
            return total
        return 1.0 if tags[winner] else 0.0

    return explore({})


def _survive_prob(reject: float, config: ProtocolConfig) -> float:
    accept = 1.0 - reject
    if config.m == 0:
        return 1.0
    if config.gate_mode == "reject-any":
        return accept ** config.m
    return math.fsum(math.comb(config.m, a) * accept**a * reject ** (config.m - a)
                     for a in range(config.tau, config.m + 1))


def exact_step_success(qs: Sequence[float], config: ProtocolConfig, suite: RoleSuite, all_sound: bool = False) -> float:
    """Probability one committee step selects a sound action, given per-family q."""
    k = config.k
    qk = [qs[i % suite.portfolio_size] if len(qs) > 1 else qs[0] for i in range(k)]
    surv = {True: _survive_prob(suite.reject_prob(True), config),
            False: _survive_prob(suite.reject_prob(False), config)}
    dist_cache = {(a, b): _pair_dist(a, b, config, suite) for a in (False, True) for b in (False, True)}

    @lru_cache(maxsize=None)
    def winner_sound(tags: tuple[bool, ...]) -> float:
        if len(tags) == 1:
            return 1.0 if tags[0] else 0.0
        if all(tags):
            return 1.0
        if not any(tags):
            return 0.0
        dists = {(i, j): dist_cache[(tags[i], tags[j])]
                 for i in range(len(tags)) for j in range(i + 1, len(tags))}
        if config.tournament_rule in ("copeland", "strict-dominance"):
            # A strictly dominant survivor is the unique Copeland maximum.
            return _copeland_sound_prob(tags, dists)
        return _branching_sound_prob(tags, config.tournament_rule, dists)

    total = 0.0
    for tags in itertools.product((True, False), repeat=k):
        if all_sound and not all(tags):
            continue
        p_tags = 1.0 if all_sound else math.prod(q if t else 1 - q for q, t in zip(qk, tags))
        if p_tags == 0.0:
            continue
        for mask in itertools.product((True, False), repeat=k):
            p_mask = math.prod(surv[t] if keep else 1 - surv[t] for t, keep in zip(tags, mask))
            if p_mask == 0.0 or not any(mask):
                continue
            kept = tuple(t for t, keep in zip(tags, mask) if keep)
            total += p_tags * p_mask * winner_sound(kept)
    return total


def exact_chain_success(system: StateSystem, config: ProtocolConfig, suite: RoleSuite, model: LatentModel) -> float:
    """Exact success probability of the protocol on a chain task.

    Enumerates candidate tag vectors, gate outcomes and tournament outcomes
    for one step, then chains ``L`` steps (a chain of depth ``L`` needs a
    sound pick at every step) and mixes over the atoms of Z.
    """
    if config.k > ENUM_LIMITS["k"] or config.m > ENUM_LIMITS["m"] or config.r > ENUM_LIMITS["r"]:
        raise ConfigError(f"exact enumeration supports k <= 6, m <= 3, r <= 3; got {config}")
    if model.kind == "beta-mixture":
        raise ConfigError("exact enumeration needs a discrete latent model", "latent_kind")
    if system.width != 1:
        raise ConfigError("exact enumeration supports chain tasks only", "task")
    all_sound = not system.unsound_actions(system.initial_state)
    L = system.max_rank
    return math.fsum(w * exact_step_success(qs, config, suite, all_sound) ** L for w, qs in model.atoms if w > 0)


# ----------------------------------------------------------- failure decomposition

SOLVED = "solved"
REACHABLE_MISSED = "oracle-reachable-missed"
UNREACHABLE = "oracle-unreachable"
DECOMPOSITION = (SOLVED, REACHABLE_MISSED, UNREACHABLE)


def classify(verdicts: Sequence[bool], chosen: int) -> str:
    if verdicts[chosen]:
        return SOLVED
    return REACHABLE_MISSED if any(verdicts) else UNREACHABLE


def failure_decomposition(records: Iterable[tuple[Sequence[bool], int]]) -> dict[str, int]:
    """Partition ``(verdicts, chosen_index)`` records into the three outcome groups."""
    counts = dict.fromkeys(DECOMPOSITION, 0)
    for verdicts, chosen in records:
        counts[classify(verdicts, chosen)] += 1
    return counts
