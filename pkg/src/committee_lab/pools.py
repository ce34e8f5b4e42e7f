"""Offline selector laboratory over fixed candidate pools.

A pool caches, per task, k candidates with hidden verdicts, several binary
judge votes per candidate and comparator votes for both presentation orders
of every pair. Every selector reads the same cached pool, so differences in
solve rate come from the selector alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from committee_lab import rng as rng_mod
from committee_lab.estimators import CurveEstimate, Estimate, classify, DECOMPOSITION
from committee_lab.protocol import (
    debiased_pair,
    single_order_pair,
    tournament,
)
from committee_lab.roles import (
    LatentModel,
    RoleSuite,
    comparator_call,
    critic_call,
    propose,
    sample_world,
)
from committee_lab.state_system import ConfigError

POOL_FORMAT = "committee-lab-pools"
POOL_VERSION = 1


class PoolFileError(FileNotFoundError):
    pass


@dataclass(frozen=True)
class JudgeVote:
    resolves: bool
    confidence: int


@dataclass(frozen=True)
class PairVote:
    winner: str  # "first" | "second" | "tie", relative to presentation order
    confidence: int


@dataclass(frozen=True)
class CandidatePool:
    task_id: int
    k: int
    verdicts: tuple[bool, ...] | None
    judge_votes: tuple[tuple[JudgeVote, ...], ...]
    pair_votes: dict = field(hash=False)  # (i, j) -> tuple[PairVote], i shown first

    def yes_counts(self) -> list[int]:
        return [sum(v.resolves for v in votes) for votes in self.judge_votes]

    def yes_rates(self) -> list[float]:
        return [sum(v.resolves for v in votes) / len(votes) if votes else 0.0 for votes in self.judge_votes]

    def confidence_sums(self) -> list[int]:
        return [sum(v.confidence for v in votes if v.resolves) for votes in self.judge_votes]

    def pair_result(self, i: int, j: int, debias: str = "both-orders-conservative") -> int:
        votes_ij = [v.winner for v in self.pair_votes[(i, j)]]
        if debias == "single-order":
            return single_order_pair(votes_ij)
        votes_ji = [v.winner for v in self.pair_votes[(j, i)]]
        return debiased_pair(votes_ij, votes_ji)

    def restrict(self, indices: Sequence[int]) -> "CandidatePool":
        """Sub-pool over ``indices``, re-indexed in the given order."""
        idx = list(indices)
        pos = {old: new for new, old in enumerate(idx)}
        return CandidatePool(
            task_id=self.task_id,
            k=len(idx),
            verdicts=None if self.verdicts is None else tuple(self.verdicts[i] for i in idx),
            judge_votes=tuple(self.judge_votes[i] for i in idx),
            pair_votes={(pos[i], pos[j]): v for (i, j), v in self.pair_votes.items() if i in pos and j in pos},
        )

    def limit_votes(self, judge: int | None = None, pair: int | None = None) -> "CandidatePool":
        """Keep only the first ``judge`` judge votes and ``pair`` votes per ordered pair."""
        jv = self.judge_votes if judge is None else tuple(v[:judge] for v in self.judge_votes)
        pv = self.pair_votes if pair is None else {key: v[:pair] for key, v in self.pair_votes.items()}
        return replace(self, judge_votes=jv, pair_votes=pv)

    def blind(self) -> "CandidatePool":
        return replace(self, verdicts=None)

    @property
    def judge_vote_count(self) -> int:
        return len(self.judge_votes[0]) if self.judge_votes else 0

    @property
    def pair_vote_count(self) -> int:
        return len(next(iter(self.pair_votes.values()))) if self.pair_votes else 0


def generate_pool(
    suite: RoleSuite,
    model: LatentModel,
    k: int,
    judge_votes: int,
    comparator_votes: int,
    rng: np.random.Generator,
    task_id: int = 0,
) -> CandidatePool:
    """Draw one task's cached candidates and votes.

    Judges follow the critic edge on unsound candidates; with
    ``suite.judge_false_reject`` they also vote "no" on a correct candidate
    at that rate. Comparator votes use the comparator edge, tie probability
    and position bias in the order shown. Confidences are uniform on 1..5.
    """
    if k < 1 or judge_votes < 1 or comparator_votes < 1:
        raise ConfigError("k and vote counts must be at least 1")
    world = sample_world(model, rng)
    cands = [propose(world, i % suite.portfolio_size, rng) for i in range(k)]
    judges = []
    for c in cands:
        votes = []
        for _ in range(judge_votes):
            yes = critic_call(c, suite, rng)
            if c.sound and rng.random() < suite.judge_false_reject:
                yes = False
            votes.append(JudgeVote(bool(yes), int(rng.integers(1, 6))))
        judges.append(tuple(votes))
    pairs = {}
    for i in range(k):
        for j in range(k):
            if i != j:
                pairs[(i, j)] = tuple(
                    PairVote(comparator_call(cands[i], cands[j], suite, rng), int(rng.integers(1, 6)))
                    for _ in range(comparator_votes)
                )
    return CandidatePool(task_id, k, tuple(c.sound for c in cands), tuple(judges), pairs)


def generate_pools(
    suite: RoleSuite, model: LatentModel, k: int, judge_votes: int, comparator_votes: int, count: int, seed: int
) -> list[CandidatePool]:
    return [
        generate_pool(suite, model, k, judge_votes, comparator_votes, rng_mod.stream(seed, rng_mod.POOL, t), t)
        for t in range(count)
    ]


# ------------------------------------------------------------------ selectors


@dataclass(frozen=True)
class SelectorResult:
    chosen: int
    selector: str
    survivors: tuple[int, ...] | None = None
    scores: tuple[int, ...] | None = None


def _argmax_lowest(values: Sequence[float]) -> int:
    best = max(values)
    return next(i for i, v in enumerate(values) if v == best)


def select_binary_majority(pool: CandidatePool) -> SelectorResult:
    counts = pool.yes_counts()
    return SelectorResult(_argmax_lowest(counts), "binary-majority", scores=tuple(counts))


def select_confidence_weighted(pool: CandidatePool) -> SelectorResult:
    sums = pool.confidence_sums()
    return SelectorResult(_argmax_lowest(sums), "confidence-weighted", scores=tuple(sums))


def _tournament_over(pool: CandidatePool, members: Sequence[int], rule: str, debias: str):
    members = sorted(members)
    res = tournament(len(members), rule, lambda i, j: pool.pair_result(members[i], members[j], debias))
    return members[res.winner], res.scores


def select_comparator_copeland(pool: CandidatePool, debias: str = "both-orders-conservative") -> SelectorResult:
    chosen, scores = _tournament_over(pool, range(pool.k), "copeland", debias)
    return SelectorResult(chosen, "comparator-copeland", tuple(range(pool.k)), tuple(scores))


def hybrid_survivors(pool: CandidatePool, tau_rate: float | None = 0.5, tau_count: int | None = None) -> list[int]:
    if tau_count is not None:
        return [i for i, c in enumerate(pool.yes_counts()) if c >= tau_count]
    return [i for i, r in enumerate(pool.yes_rates()) if r >= tau_rate]


def select_hybrid(
    pool: CandidatePool,
    tau_rate: float | None = 0.5,
    tau_count: int | None = None,
    rule: str = "copeland",
    debias: str = "both-orders-conservative",
) -> SelectorResult:
    """Judge yes-rate gate, then a tournament among the retained candidates.

    Falls back to the binary-majority winner when nothing passes the gate.
    """
    kept = hybrid_survivors(pool, tau_rate, tau_count)
    if not kept:
        fallback = select_binary_majority(pool)
        return SelectorResult(fallback.chosen, "hybrid", (), fallback.scores)
    chosen, scores = _tournament_over(pool, kept, rule, debias)
    return SelectorResult(chosen, "hybrid", tuple(kept), None if scores is None else tuple(scores))


def tournament_variants(pool: CandidatePool, rule: str, debias: str = "both-orders-conservative") -> SelectorResult:
    chosen, scores = _tournament_over(pool, range(pool.k), rule, debias)
    return SelectorResult(chosen, rule, tuple(range(pool.k)), None if scores is None else tuple(scores))


Selector = Callable[[CandidatePool], SelectorResult]

SELECTORS: dict[str, Selector] = {
    "binary-majority": select_binary_majority,
    "confidence-weighted": select_confidence_weighted,
    "comparator-copeland": select_comparator_copeland,
    "hybrid": select_hybrid,
}

RULE_SELECTORS: dict[str, Selector] = {
    rule: (lambda pool, _rule=rule: tournament_variants(pool, _rule))
    for rule in ("copeland", "sequential-king", "strict-dominance", "single-elim")
}


# ------------------------------------------------------------------ evaluation


def _verdicts(pool: CandidatePool) -> tuple[bool, ...]:
    if pool.verdicts is None:
        raise ValueError(f"pool {pool.task_id} was loaded selector-blind; verdicts unavailable")
    return pool.verdicts


def solve_indicators(pools: Sequence[CandidatePool], selector: Selector) -> np.ndarray:
    return np.array([_verdicts(p)[selector(p).chosen] for p in pools], dtype=float)


def oracle_indicators(pools: Sequence[CandidatePool]) -> np.ndarray:
    return np.array([any(_verdicts(p)) for p in pools], dtype=float)


def rate(indicators: np.ndarray, metric: str, seed: int) -> Estimate:
    return Estimate.from_counts(metric, float(indicators.sum()), len(indicators), seed)


def paired_gap(a: np.ndarray, b: np.ndarray, z: float) -> tuple[float, float]:
    """Mean of ``a - b`` over pools and its ``z``-scaled standard error."""
    d = a - b
    n = len(d)
    se = float(d.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(d.mean()), z * se


def subsets_for(k: int, size: int) -> list[tuple[int, ...]]:
    """Distinct contiguous (cyclic) index windows of ``size``, each in index order."""
    seen = []
    for o in range(k):
        s = tuple(sorted((o + t) % k for t in range(size)))
        if s not in seen:
            seen.append(s)
    return seen


def budget_ablation(
    pools: Sequence[CandidatePool], selector: Selector, grid: Sequence[int], seed: int = 0
) -> tuple[CurveEstimate, CurveEstimate]:
    """Selector and oracle solve rates on size-``k'`` windows, averaged over rotations."""
    k = pools[0].k
    sel_pts, orc_pts = [], []
    for kk in sorted(set(grid)):
        if not 1 <= kk <= k:
            raise ConfigError(f"budget {kk} outside 1..{k}", "budget_grid")
        windows = subsets_for(k, kk)
        sel, orc = np.zeros(len(pools)), np.zeros(len(pools))
        for pi, pool in enumerate(pools):
            for w in windows:
                sub = pool.restrict(w)
                sel[pi] += sub.verdicts[selector(sub).chosen]
                orc[pi] += any(sub.verdicts)
        sel /= len(windows)
        orc /= len(windows)
        sel_pts.append((kk, rate(sel, "p_system", seed)))
        orc_pts.append((kk, rate(orc, "p_oracle", seed)))
    return CurveEstimate(sel_pts), CurveEstimate(orc_pts)


def vote_subset_ablation(
    pools: Sequence[CandidatePool], selector: Selector, grid: Sequence[int], kind: str = "judge", seed: int = 0
) -> CurveEstimate:
    """Solve rate when selectors see only the first ``n`` cached votes."""
    pts = []
    for n in sorted(set(grid)):
        limited = [p.limit_votes(judge=n) if kind == "judge" else p.limit_votes(pair=n) for p in pools]
        cached = pools[0].judge_vote_count if kind == "judge" else pools[0].pair_vote_count
        if n > cached:
            raise ConfigError(f"vote count {n} exceeds cached {cached}", "vote_grid")
        pts.append((n, rate(solve_indicators(limited, selector), "p_system", seed)))
    return CurveEstimate(pts)


def decompose(pools: Sequence[CandidatePool], selector: Selector) -> dict[str, int]:
    counts = dict.fromkeys(DECOMPOSITION, 0)
    for p in pools:
        counts[classify(_verdicts(p), selector(p).chosen)] += 1
    return counts


# ------------------------------------------------------------------ file format


def _pool_to_json(pool: CandidatePool) -> dict:
    return {
        "task_id": pool.task_id,
        "k": pool.k,
        "verdicts": list(pool.verdicts) if pool.verdicts is not None else None,
        "judge_votes": [[{"resolves": v.resolves, "confidence": v.confidence} for v in votes]
                        for votes in pool.judge_votes],
        "pair_votes": {f"{i},{j}": [{"winner": v.winner, "confidence": v.confidence} for v in votes]
                       for (i, j), votes in sorted(pool.pair_votes.items())},
    }


def _pool_from_json(obj: dict, blind: bool) -> CandidatePool:
    k = int(obj["k"])
    pairs = {}
    for key, votes in obj["pair_votes"].items():
        i, j = (int(x) for x in key.split(","))
        pairs[(i, j)] = tuple(PairVote(v["winner"], int(v["confidence"])) for v in votes)
    for i in range(k):
        for j in range(k):
            if i != j and (i, j) not in pairs:
                raise ValueError(f"task {obj['task_id']}: missing pair votes for order {i},{j}")
    verdicts = None if blind else tuple(bool(v) for v in obj["verdicts"])
    judges = tuple(tuple(JudgeVote(bool(v["resolves"]), int(v["confidence"])) for v in votes)
                   for votes in obj["judge_votes"])
    return CandidatePool(int(obj["task_id"]), k, verdicts, judges, pairs)


def write_pools(path: str | Path, pools: Iterable[CandidatePool], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", encoding="utf-8") as fh:
        header = {"format": POOL_FORMAT, "version": POOL_VERSION, **(meta or {})}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for pool in pools:
            fh.write(json.dumps(_pool_to_json(pool), sort_keys=True) + "\n")
    tmp.replace(path)


def read_pools(path: str | Path, blind: bool = False) -> tuple[dict, list[CandidatePool]]:
    """Load a pool file; ``blind=True`` drops hidden verdicts before any selector sees them."""
    path = Path(path)
    if not path.exists():
        raise PoolFileError(f"pool file {path} not found; create it with the pool-gen subcommand")
    with path.open(encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != POOL_FORMAT or header.get("version") != POOL_VERSION:
            raise ValueError(f"{path}: unsupported pool file header {header}")
        pools = [_pool_from_json(json.loads(line), blind) for line in fh if line.strip()]
    return header, pools
