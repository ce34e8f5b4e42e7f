"""Vectorised committee-protocol engine.

Trials are simulated in fixed-size blocks. Each block draws from streams
keyed by ``(seed, block, step, role)``, so the tally for a given
``(seed, trials)`` does not depend on how blocks are scheduled across
workers. Every vote and critic call is drawn individually, as in the scalar
engine; only the bookkeeping is vectorised.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from committee_lab import rng as rng_mod
from committee_lab.protocol import (
    ID_MISS,
    LOCAL_FAILURE,
    PROP_MISS,
    SUCCESS,
    TRIAL_CATEGORIES,
    WIN_I,
    WIN_J,
    ProtocolConfig,
    tournament,
    tournament_pairs,
)
from committee_lab.roles import LatentModel, RoleSuite, sample_worlds
from committee_lab.state_system import StateSystem

BLOCK_SIZE = 8192
_NAMESPACE = 7
_WORLD_STEP = 10**6


@dataclass
class Tally:
    """Associative tally of trial outcomes and role calls."""

    trials: int = 0
    categories: dict = field(default_factory=lambda: dict.fromkeys(TRIAL_CATEGORIES, 0))
    calls: dict = field(default_factory=lambda: {"proposer": 0, "critic": 0, "comparator": 0})
    max_trial_calls: int = 0

    def __add__(self, other: "Tally") -> "Tally":
        return Tally(
            trials=self.trials + other.trials,
            categories={c: self.categories[c] + other.categories[c] for c in TRIAL_CATEGORIES},
            calls={r: self.calls[r] + other.calls[r] for r in self.calls},
            max_trial_calls=max(self.max_trial_calls, other.max_trial_calls),
        )

    @property
    def failures(self) -> int:
        return self.trials - self.categories[SUCCESS]


def _pair_outcomes(u: np.ndarray, p_first: np.ndarray, p_second: np.ndarray, r: int) -> np.ndarray:
    """Strict-majority result per row from ``r`` individually drawn votes."""
    first = (u < p_first[:, None]).sum(axis=1)
    second = ((u >= p_first[:, None]) & (u < (p_first + p_second)[:, None])).sum(axis=1)
    out = np.zeros(len(u), dtype=np.int8)
    out[2 * first > r] = WIN_I
    out[2 * second > r] = WIN_J
    return out


def _vote_table(suite: RoleSuite) -> np.ndarray:
    """``table[first_sound, second_sound] = (p_first, p_second)``."""
    table = np.zeros((2, 2, 2))
    for fs in (0, 1):
        for ss in (0, 1):
            pf, ps, _ = suite.vote_probs(bool(fs), bool(ss))
            table[fs, ss] = (pf, ps)
    return table


def simulate_block(
    system: StateSystem,
    config: ProtocolConfig,
    suite: RoleSuite,
    model: LatentModel,
    seed: int,
    block: int,
    n: int,
) -> Tally:
    k, m, r = config.k, config.m, config.r
    P = suite.portfolio_size
    L = system.max_rank
    no_unsound = not system.unsound_actions(system.initial_state)
    stall = system.stall_fraction
    q = sample_worlds(model, rng_mod.stream(seed, _NAMESPACE, block, _WORLD_STEP), n, P)
    fam = np.arange(k) % P
    table = _vote_table(suite)
    reject_unsound = suite.reject_prob(False)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]

    rank = np.full(n, L)
    alive = np.ones(n, dtype=bool)
    category = np.full(n, -1)  # index into TRIAL_CATEGORIES once settled
    last_bad = np.full(n, TRIAL_CATEGORIES.index(ID_MISS))
    trial_calls = np.zeros(n, dtype=np.int64)
    calls = {"proposer": 0, "critic": 0, "comparator": 0}

    for step in range(L):
        idx = np.flatnonzero(alive)
        A = len(idx)
        if A == 0:
            break
        g = {role: rng_mod.stream(seed, _NAMESPACE, block, step, role)
             for role in (rng_mod.PROPOSE, rng_mod.CRITIC, rng_mod.COMPARE, rng_mod.ACTION)}

        sound = g[rng_mod.PROPOSE].random((A, k)) < q[idx][:, fam]
        if no_unsound:
            sound[:] = True
        covered = sound.any(axis=1)

        if m > 0:
            rej = g[rng_mod.CRITIC].random((A, k, m)) < np.where(sound, 0.0, reject_unsound)[:, :, None]
            if config.gate_mode == "reject-any":
                survive = ~rej.any(axis=2)
            else:
                survive = (m - rej.sum(axis=2)) >= config.tau
        else:
            survive = np.ones((A, k), dtype=bool)
        n_surv = survive.sum(axis=1)

        results = np.zeros((A, k, k), dtype=np.int8)
        cg = g[rng_mod.COMPARE]
        si = sound.astype(np.int64)
        for i, j in pairs:
            p1 = table[si[:, i], si[:, j]]
            res = _pair_outcomes(cg.random((A, r)), p1[:, 0], p1[:, 1], r)
            if config.orders == 2:
                p2 = table[si[:, j], si[:, i]]
                res2 = -_pair_outcomes(cg.random((A, r)), p2[:, 0], p2[:, 1], r)
                res = np.where(res == res2, res, 0).astype(np.int8)
            results[:, i, j] = res
            results[:, j, i] = -res

        winner = _select(results, survive, config.tournament_rule)
        step_calls = k + m * k + r * config.orders * np.array(
            [tournament_pairs(int(s), config.tournament_rule) for s in n_surv]
        )
        trial_calls[idx] += step_calls
        calls["proposer"] += k * A
        calls["critic"] += m * k * A
        calls["comparator"] += int((step_calls - k - m * k).sum())

        local_fail = n_surv == 0
        picked_sound = sound[np.arange(A), winner] & ~local_fail
        bad_tag = np.where(covered, TRIAL_CATEGORIES.index(ID_MISS), TRIAL_CATEGORIES.index(PROP_MISS))

        lf = idx[local_fail]
        category[lf] = TRIAL_CATEGORIES.index(LOCAL_FAILURE)
        alive[lf] = False

        wrong = ~picked_sound & ~local_fail
        stays = g[rng_mod.ACTION].random(A) < stall
        dead = wrong & ~stays
        category[idx[dead]] = bad_tag[dead]
        alive[idx[dead]] = False
        stalled = wrong & stays
        last_bad[idx[stalled]] = bad_tag[stalled]

        good = idx[picked_sound]
        rank[good] -= 1
        done = good[rank[good] == 0]
        category[done] = TRIAL_CATEGORIES.index(SUCCESS)
        alive[done] = False

    category[alive] = last_bad[alive]
    counts = np.bincount(category, minlength=len(TRIAL_CATEGORIES))
    return Tally(
        trials=n,
        categories={c: int(counts[i]) for i, c in enumerate(TRIAL_CATEGORIES)},
        calls=calls,
        max_trial_calls=int(trial_calls.max()) if n else 0,
    )


def _select(results: np.ndarray, survive: np.ndarray, rule: str) -> np.ndarray:
    A, k, _ = results.shape
    if rule in ("copeland", "strict-dominance"):
        # A strictly dominant survivor is always the unique Copeland maximum,
        # so both rules select identically.
        both = survive[:, :, None] & survive[:, None, :]
        scores = ((results == WIN_I) & both).sum(axis=2)
        scores = np.where(survive, scores, -1)
        return np.argmax(scores, axis=1)
    if rule == "sequential-king":
        champ = np.argmax(survive, axis=1)
        rows = np.arange(A)
        for j in range(k):
            play = survive[:, j] & (j > champ)
            lost = play & (results[rows, champ, j] == WIN_J)
            champ = np.where(lost, j, champ)
        return champ
    out = np.zeros(A, dtype=np.int64)
    for a in range(A):
        surv = np.flatnonzero(survive[a])
        if len(surv) == 0:
            continue
        res = results[a]
        t = tournament(len(surv), rule, lambda i, j: int(res[surv[i], surv[j]]))
        out[a] = surv[t.winner]
    return out


def simulate(
    system: StateSystem,
    config: ProtocolConfig,
    suite: RoleSuite,
    model: LatentModel,
    trials: int,
    seed: int,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> Tally:
    """Simulate ``trials`` trajectories; the result is independent of ``workers``."""
    if trials < 1:
        raise ValueError("trials must be positive")
    sizes = [block_size] * (trials // block_size)
    if trials % block_size:
        sizes.append(trials % block_size)

    def run(b: int) -> Tally:
        return simulate_block(system, config, suite, model, seed, b, sizes[b])

    if workers <= 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    total = Tally()
    for p in parts:
        total = total + p
    return total
