"""The committee protocol: propose, gate, tournament, apply.

This module holds the pure aggregation rules (majority, position-swap
debiasing, Copeland and the alternative tournament rules) and a scalar
reference engine that performs every role call individually with
instrumented counters. The vectorised engine in :mod:`committee_lab.batch`
implements the same semantics for large Monte Carlo runs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from committee_lab import rng as rng_mod
from committee_lab.roles import (
    FIRST,
    SECOND,
    TIE,
    Candidate,
    LatentModel,
    RoleSuite,
    SampledWorld,
    comparator_call,
    critic_call,
    propose,
    sample_world,
)
from committee_lab.state_system import INVALID, ConfigError, StateRef, StateSystem, apply_action

GATE_MODES = ("reject-any", "yes-threshold")
TOURNAMENT_RULES = ("copeland", "sequential-king", "strict-dominance", "single-elim")
DEBIAS_MODES = ("single-order", "both-orders-conservative")

WIN_I = 1
WIN_J = -1
PAIR_TIE = 0

PROP_MISS = "prop-miss"
ID_MISS = "id-miss"
CLEAN = "clean"

SUCCESS = "success"
LOCAL_FAILURE = "local-failure"
TRIAL_CATEGORIES = (SUCCESS, PROP_MISS, ID_MISS, LOCAL_FAILURE)


@dataclass(frozen=True)
class ProtocolConfig:
    k: int = 1
    m: int = 0
    r: int = 0
    gate_mode: str = "reject-any"
    tau: int = 0
    tournament_rule: str = "copeland"
    debias_mode: str = "single-order"
    tie_break: str = "lowest-index"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be at least 1", "k")
        if self.m < 0:
            raise ConfigError("m must be non-negative", "m")
        if self.r < 0:
            raise ConfigError("r must be non-negative", "r")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"unknown gate mode {self.gate_mode!r}", "gate_mode")
        if self.gate_mode == "yes-threshold" and not 0 <= self.tau <= self.m:
            raise ConfigError(f"tau={self.tau} must lie in [0, m={self.m}]", "tau")
        if self.tournament_rule not in TOURNAMENT_RULES:
            raise ConfigError(f"unknown tournament rule {self.tournament_rule!r}", "tournament_rule")
        if self.debias_mode not in DEBIAS_MODES:
            raise ConfigError(f"unknown debias mode {self.debias_mode!r}", "debias_mode")
        if self.tie_break != "lowest-index":
            raise ConfigError("only the lowest-index tie-break is supported", "tie_break")

    @property
    def orders(self) -> int:
        return 2 if self.debias_mode == "both-orders-conservative" else 1


# ---------------------------------------------------------------- aggregation


def majority(votes: Sequence[str]) -> str:
    """Strict majority of all votes; TIE votes count for neither side."""
    n = len(votes)
    first = sum(v == FIRST for v in votes)
    second = sum(v == SECOND for v in votes)
    if 2 * first > n:
        return FIRST
    if 2 * second > n:
        return SECOND
    return TIE


def debiased_pair(votes_ij: Sequence[str], votes_ji: Sequence[str]) -> int:
    """Combine both presentation orders of the pair ``(i, j)``.

    ``votes_ij`` were cast with ``i`` shown first, ``votes_ji`` with ``j``
    shown first. A side wins only when both orders' majorities pick it.
    """
    m1 = majority(votes_ij)
    m2 = majority(votes_ji)
    if m1 == FIRST and m2 == SECOND:
        return WIN_I
    if m1 == SECOND and m2 == FIRST:
        return WIN_J
    return PAIR_TIE


def single_order_pair(votes_ij: Sequence[str]) -> int:
    return {FIRST: WIN_I, SECOND: WIN_J, TIE: PAIR_TIE}[majority(votes_ij)]


def copeland_scores(results: np.ndarray) -> np.ndarray:
    return (np.asarray(results) == WIN_I).sum(axis=1)


def copeland_winner(results: np.ndarray) -> int:
    """Most pairwise wins; ties contribute nothing; lowest index breaks ties.

    ``results[i, j]`` is ``WIN_I`` when ``i`` beat ``j``, ``WIN_J`` when it
    lost and ``PAIR_TIE`` otherwise (antisymmetric).
    """
    return int(np.argmax(copeland_scores(results)))


PlayFn = Callable[[int, int], int]


class _PairCache:
    """Lazily evaluates ``play(i, j)`` for ``i < j`` and records pairs played."""

    def __init__(self, play: PlayFn):
        self._play = play
        self.results: dict[tuple[int, int], int] = {}

    def __call__(self, i: int, j: int) -> int:
        if i == j:
            return PAIR_TIE
        a, b = (i, j) if i < j else (j, i)
        if (a, b) not in self.results:
            self.results[(a, b)] = self._play(a, b)
        res = self.results[(a, b)]
        return res if i < j else -res

    def matrix(self, n: int) -> np.ndarray:
        out = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = self(i, j)
                out[j, i] = -out[i, j]
        return out


@dataclass
class TournamentResult:
    winner: int
    pairs_played: int
    scores: list[int] | None = None


def tournament(n: int, rule: str, play: PlayFn) -> TournamentResult:
    """Select one of ``n`` survivors (local indices, in candidate order).

    ``play(i, j)`` with ``i < j`` returns the aggregated pair result and is
    invoked at most once per pair.
    """
    if n < 1:
        raise ValueError("tournament needs at least one survivor")
    if n == 1:
        return TournamentResult(winner=0, pairs_played=0, scores=[0])
    cache = _PairCache(play)
    if rule in ("copeland", "strict-dominance"):
        mat = cache.matrix(n)
        scores = copeland_scores(mat)
        winner = int(np.argmax(scores))
        if rule == "strict-dominance":
            dominant = [i for i in range(n) if scores[i] == n - 1]
            winner = dominant[0] if dominant else winner
        return TournamentResult(winner, len(cache.results), [int(s) for s in scores])
    if rule == "sequential-king":
        champ = 0
        for j in range(1, n):
            if cache(champ, j) == WIN_J:
                champ = j
        return TournamentResult(champ, len(cache.results))
    if rule == "single-elim":
        return TournamentResult(_single_elim(n, cache), len(cache.results))
    raise ConfigError(f"unknown tournament rule {rule!r}", "tournament_rule")


def _single_elim(n: int, play: PlayFn) -> int:
    size = 1 << (n - 1).bit_length()
    byes = size - n
    # Byes go to the lowest indices; the rest pair up in order.
    advancing = list(range(byes))
    rest = list(range(byes, n))
    for a, b in zip(rest[::2], rest[1::2]):
        advancing.append(b if play(a, b) == WIN_J else a)
    field_ = advancing
    while len(field_) > 1:
        nxt = []
        for a, b in zip(field_[::2], field_[1::2]):
            lo, hi = min(a, b), max(a, b)
            nxt.append(hi if play(lo, hi) == WIN_J else lo)
        field_ = nxt
    return field_[0]


def tournament_pairs(n: int, rule: str) -> int:
    """Number of pairs a tournament over ``n`` survivors evaluates."""
    if n <= 1:
        return 0
    if rule in ("copeland", "strict-dominance"):
        return n * (n - 1) // 2
    return n - 1


# --------------------------------------------------------------- scalar engine


@dataclass
class StepStreams:
    propose: np.random.Generator
    critic: np.random.Generator
    compare: np.random.Generator

    @classmethod
    def derive(cls, seed: int, trial: int, step: int) -> "StepStreams":
        return cls(
            propose=rng_mod.stream(seed, trial, step, rng_mod.PROPOSE),
            critic=rng_mod.stream(seed, trial, step, rng_mod.CRITIC),
            compare=rng_mod.stream(seed, trial, step, rng_mod.COMPARE),
        )


@dataclass
class StepOutcome:
    selected: int | None
    tag: str
    candidates: list[Candidate]
    survivors: list[int]
    calls: Counter = field(default_factory=Counter)
    pairs_played: int = 0

    @property
    def local_failure(self) -> bool:
        return self.selected is None


@dataclass
class TrialOutcome:
    success: bool
    category: str
    steps: list[StepOutcome]
    calls: Counter

    @property
    def tags(self) -> list[str]:
        return [s.tag for s in self.steps]


def critic_gate(
    candidates: Sequence[Candidate],
    config: ProtocolConfig,
    suite: RoleSuite,
    rng: np.random.Generator,
    calls: Counter | None = None,
) -> list[int]:
    """Indices that pass the critic stage (possibly none)."""
    survivors = []
    for idx, cand in enumerate(candidates):
        accepts = 0
        for _ in range(config.m):
            accepts += critic_call(cand, suite, rng)
            if calls is not None:
                calls["critic"] += 1
        if config.gate_mode == "reject-any":
            keep = accepts == config.m
        else:
            keep = accepts >= config.tau
        if keep:
            survivors.append(idx)
    return survivors


def majority_pair(
    a: Candidate,
    b: Candidate,
    r: int,
    suite: RoleSuite,
    rng: np.random.Generator,
    calls: Counter | None = None,
) -> str:
    """Majority of ``r`` fresh votes with ``a`` shown first."""
    votes = [comparator_call(a, b, suite, rng) for _ in range(r)]
    if calls is not None:
        calls["comparator"] += r
    return majority(votes)


def pair_result(
    a: Candidate,
    b: Candidate,
    config: ProtocolConfig,
    suite: RoleSuite,
    rng: np.random.Generator,
    calls: Counter | None = None,
) -> int:
    votes_ab = [comparator_call(a, b, suite, rng) for _ in range(config.r)]
    if calls is not None:
        calls["comparator"] += config.r
    if config.orders == 1:
        return single_order_pair(votes_ab)
    votes_ba = [comparator_call(b, a, suite, rng) for _ in range(config.r)]
    if calls is not None:
        calls["comparator"] += config.r
    return debiased_pair(votes_ab, votes_ba)


def run_step(
    system: StateSystem,
    state: StateRef,
    config: ProtocolConfig,
    suite: RoleSuite,
    world: SampledWorld,
    streams: StepStreams,
) -> StepOutcome:
    """One committee step at a valid nonterminal state."""
    calls: Counter = Counter()
    candidates = []
    for i in range(config.k):
        family = i % suite.portfolio_size
        candidates.append(propose(world, family, streams.propose, system, state))
        calls["proposer"] += 1
    survivors = critic_gate(candidates, config, suite, streams.critic, calls)
    covered = any(c.sound for c in candidates)
    if not survivors:
        return StepOutcome(None, ID_MISS if covered else PROP_MISS, candidates, survivors, calls)

    def play(i: int, j: int) -> int:
        return pair_result(candidates[survivors[i]], candidates[survivors[j]], config, suite, streams.compare, calls)

    result = tournament(len(survivors), config.tournament_rule, play)
    selected = survivors[result.winner]
    if not covered:
        tag = PROP_MISS
    elif candidates[selected].sound:
        tag = CLEAN
    else:
        tag = ID_MISS
    return StepOutcome(selected, tag, candidates, survivors, calls, result.pairs_played)


def run_trajectory(
    system: StateSystem,
    config: ProtocolConfig,
    suite: RoleSuite,
    model: LatentModel,
    seed: int,
    trial: int,
) -> TrialOutcome:
    """Run the protocol from the initial state for at most ``L`` steps."""
    world = sample_world(model, rng_mod.stream(seed, trial, rng_mod.WORLD))
    state = system.initial_state
    steps: list[StepOutcome] = []
    calls: Counter = Counter()
    last_bad = None
    for t in range(system.max_rank):
        out = run_step(system, state, config, suite, world, StepStreams.derive(seed, trial, t))
        steps.append(out)
        calls.update(out.calls)
        if out.local_failure:
            return TrialOutcome(False, LOCAL_FAILURE, steps, calls)
        if out.tag != CLEAN:
            last_bad = out.tag
        state = apply_action(system, state, out.candidates[out.selected].action)
        if state is INVALID:
            return TrialOutcome(False, out.tag, steps, calls)
        if system.is_terminal(state):
            return TrialOutcome(True, SUCCESS, steps, calls)
    return TrialOutcome(False, last_bad or ID_MISS, steps, calls)


def step_call_formula(config: ProtocolConfig, n_survivors: int) -> dict[str, int]:
    """Exact role-call counts for one step with ``n_survivors`` past the gate."""
    pairs = tournament_pairs(n_survivors, config.tournament_rule)
    return {
        "proposer": config.k,
        "critic": config.m * config.k,
        "comparator": config.r * pairs * config.orders,
    }


def call_budget(config: ProtocolConfig, L: int) -> int:
    """Upper bound ``L (k + mk + 2 r C(k, 2))`` on total role calls."""
    return L * (config.k + config.m * config.k + 2 * config.r * math.comb(config.k, 2))


def count_role_calls(outcome: TrialOutcome, config: ProtocolConfig, L: int) -> dict[str, int]:
    """Instrumented totals, checked step by step against the count formula."""
    for step in outcome.steps:
        expected = step_call_formula(config, len(step.survivors))
        got = {role: step.calls.get(role, 0) for role in expected}
        if got != expected:
            raise AssertionError(f"step calls {got} differ from formula {expected}")
    totals = {role: outcome.calls.get(role, 0) for role in ("proposer", "critic", "comparator")}
    totals["total"] = sum(totals.values())
    if totals["total"] > call_budget(config, L):
        raise AssertionError(f"{totals['total']} role calls exceed budget {call_budget(config, L)}")
    return totals
