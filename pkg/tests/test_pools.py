import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from committee_lab import rng as rng_mod
from committee_lab.estimators import DECOMPOSITION
from committee_lab.roles import FIRST, SECOND, TIE, LatentModel, RoleSuite
from committee_lab.pools import (
    RULE_SELECTORS,
    CandidatePool,
    JudgeVote,
    PairVote,
    PoolFileError,
    budget_ablation,
    decompose,
    generate_pool,
    generate_pools,
    hybrid_survivors,
    oracle_indicators,
    paired_gap,
    read_pools,
    select_binary_majority,
    select_comparator_copeland,
    select_confidence_weighted,
    select_hybrid,
    solve_indicators,
    subsets_for,
    tournament_variants,
    vote_subset_ablation,
    write_pools,
)


def make_pool(yes, beats=None, verdicts=None, conf=None):
    """Hand-built pool: ``yes[i]`` judge yes-flags; ``beats[(i, j)]`` is the winner index of pair i<j or None."""
    k = len(yes)
    conf = conf or [[3] * len(v) for v in yes]
    judges = tuple(tuple(JudgeVote(bool(y), c) for y, c in zip(row, crow)) for row, crow in zip(yes, conf))
    pairs = {}
    for i, j in itertools.combinations(range(k), 2):
        w = (beats or {}).get((i, j))
        pairs[(i, j)] = (PairVote(TIE if w is None else (FIRST if w == i else SECOND), 3),)
        pairs[(j, i)] = (PairVote(TIE if w is None else (FIRST if w == j else SECOND), 3),)
    return CandidatePool(0, k, tuple(verdicts) if verdicts else (False,) * k, judges, pairs)


def test_binary_majority_examples():
    assert select_binary_majority(make_pool([[1, 1, 1, 0, 0], [1] * 5, [1, 0, 0, 0, 0]])).chosen == 1
    assert select_binary_majority(make_pool([[1, 1, 0], [1, 0, 1]])).chosen == 0
    assert select_binary_majority(make_pool([[0, 0], [0, 0], [0, 0]])).chosen == 0


def test_confidence_weighted_examples():
    pool = make_pool([[1, 0], [1, 1]], conf=[[5, 1], [2, 2]])
    assert select_confidence_weighted(pool).chosen == 0
    assert select_confidence_weighted(make_pool([[0], [0]])).chosen == 0
    assert select_confidence_weighted(make_pool([[1, 0], [0, 1]])).chosen == 0


def test_copeland_examples():
    dominant = make_pool([[0]] * 4, {(0, 2): 2, (1, 2): 2, (2, 3): 2})
    assert select_comparator_copeland(dominant).chosen == 2
    assert select_comparator_copeland(make_pool([[0]] * 4)).chosen == 0
    # 0 beats 1, 1 beats 2, 2 ties 0: scores (1, 1, 0) so the lowest index wins
    res = select_comparator_copeland(make_pool([[0]] * 3, {(0, 1): 0, (1, 2): 1}))
    assert res.scores == (1, 1, 0) and res.chosen == 0


def test_copeland_orders_disagree_gives_ties():
    pool = make_pool([[0]] * 3)
    pairs = {}
    for i, j in itertools.permutations(range(3), 2):
        pairs[(i, j)] = (PairVote(FIRST, 3),)  # always prefers whichever is shown first
    pool = CandidatePool(0, 3, pool.verdicts, pool.judge_votes, pairs)
    res = select_comparator_copeland(pool)
    assert res.scores == (0, 0, 0) and res.chosen == 0
    # read in a single order, the same votes favour the lower index
    assert select_comparator_copeland(pool, debias="single-order").scores == (2, 1, 0)


def test_hybrid_examples():
    pool = make_pool([[1, 0, 0, 0, 0], [1, 1, 1, 1, 0], [1, 1, 1, 0, 0]], {(1, 2): 2})
    assert hybrid_survivors(pool, 0.5) == [1, 2]
    res = select_hybrid(pool, 0.5)
    assert res.survivors == (1, 2) and res.chosen == 2
    low = make_pool([[1, 0, 0], [0, 0, 0], [1, 1, 0]])
    res = select_hybrid(low, 0.9)
    assert res.survivors == () and res.chosen == select_binary_majority(low).chosen == 2
    cyc = make_pool([[0], [1], [0]], {(0, 1): 1, (0, 2): 2, (1, 2): 2})
    assert select_hybrid(cyc, 0.0).chosen == select_comparator_copeland(cyc).chosen == 2
    assert hybrid_survivors(pool, tau_rate=None, tau_count=4) == [1]


def test_tournament_variants():
    dominant = make_pool([[0]] * 4, {(0, 1): 1, (1, 2): 1, (1, 3): 1})
    assert {tournament_variants(dominant, r).chosen for r in RULE_SELECTORS} == {1}
    two = make_pool([[0], [0]], {(0, 1): 1})
    assert {tournament_variants(two, r).chosen for r in RULE_SELECTORS} == {1}
    # cycle 0>1, 1>2, 2>0 plus 3 losing to all: hand enumeration per rule
    cyc = make_pool([[0]] * 4, {(0, 1): 0, (1, 2): 1, (0, 2): 2, (0, 3): 0, (1, 3): 1, (2, 3): 2})
    got = {r: tournament_variants(cyc, r).chosen for r in RULE_SELECTORS}
    # Copeland scores (2, 2, 2, 0) -> index 0; king: 0 beats 1, loses to 2, 2 beats 3 -> 2;
    # strict dominance finds no beater-of-all and falls back to Copeland -> 0;
    # bracket: 0 beats 1, 2 beats 3, final 2 beats 0 -> 2
    assert got == {"copeland": 0, "sequential-king": 2, "strict-dominance": 0, "single-elim": 2}


def _pools(n, seed, **suite):
    s = RoleSuite(**{"beta": 0.6, "sigma": 0.3, **suite})
    return generate_pools(s, LatentModel.point_masses([(0.0, 0.2), (0.4, 0.8)]), 4, 3, 3, n, seed)


def test_generate_pool_examples():
    g = rng_mod.stream(1, 0)
    all_good = generate_pool(RoleSuite(), LatentModel.point_masses([(1.0, 1.0)]), 5, 2, 1, g)
    assert all(all_good.verdicts)
    perfect = generate_pool(RoleSuite(beta=1.0), LatentModel.point_masses([(0.5, 1.0)]), 6, 3, 1, g)
    for v, votes in zip(perfect.verdicts, perfect.judge_votes):
        assert all(j.resolves == v for j in votes)
        assert all(1 <= j.confidence <= 5 for j in votes)
    with pytest.raises(Exception):
        generate_pool(RoleSuite(), LatentModel.point_masses([(1.0, 1.0)]), 0, 1, 1, g)


def test_mean_verdict_count():
    pools = generate_pools(RoleSuite(), LatentModel.point_masses([(0.5, 1.0)]), 8, 1, 1, 10_000, 3)
    counts = np.array([sum(p.verdicts) for p in pools])
    se = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 4) <= 2.576 * se


def test_budget_ablation_examples():
    pools = _pools(400, 2)
    sel, orc = budget_ablation(pools, select_binary_majority, [1, 2, 3, 4])
    p1 = np.mean([np.mean([p.verdicts[i] for i in range(4)]) for p in pools])
    assert sel.at(1).point == pytest.approx(p1) and orc.at(1).point == pytest.approx(p1)
    assert sel.at(4).point == pytest.approx(solve_indicators(pools, select_binary_majority).mean())
    assert orc.at(4).point == pytest.approx(oracle_indicators(pools).mean())
    assert orc.monotone
    assert subsets_for(4, 4) == [(0, 1, 2, 3)]
    assert subsets_for(4, 3) == [(0, 1, 2), (1, 2, 3), (0, 2, 3), (0, 1, 3)]


def test_vote_subset_ablation():
    pools = _pools(300, 4)
    full = vote_subset_ablation(pools, select_binary_majority, [3])
    assert full.at(3).point == pytest.approx(solve_indicators(pools, select_binary_majority).mean())
    # with no comparator votes every pair ties and Copeland picks index 0
    zero = [p.limit_votes(pair=0) for p in pools]
    assert all(select_comparator_copeland(p).chosen == 0 for p in zero)
    with pytest.raises(Exception):
        vote_subset_ablation(pools, select_binary_majority, [9])


def test_more_judge_votes_do_not_hurt():
    pools = generate_pools(RoleSuite(beta=0.7, sigma=0.3), LatentModel.point_masses([(0.4, 1.0)]), 6, 5, 1, 4000, 5)
    one = solve_indicators([p.limit_votes(judge=1) for p in pools], select_binary_majority)
    five = solve_indicators(pools, select_binary_majority)
    gap, margin = paired_gap(five, one, 2.576)
    assert gap >= -margin


def test_perfect_signal_recovers_oracle():
    pools = _pools(300, 6, beta=1.0, sigma=0.5)
    orc = oracle_indicators(pools)
    for sel in (select_comparator_copeland, select_hybrid):
        ind = solve_indicators(pools, sel)
        assert np.array_equal(ind[orc == 1], orc[orc == 1])


def test_oracle_dominance_and_decomposition():
    pools = _pools(500, 7)
    orc = oracle_indicators(pools)
    for sel in (select_binary_majority, select_confidence_weighted, select_comparator_copeland, select_hybrid):
        assert np.all(solve_indicators(pools, sel) <= orc)
        counts = decompose(pools, sel)
        assert set(counts) == set(DECOMPOSITION) and sum(counts.values()) == len(pools)


def test_pools_are_fixed_across_selectors(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    pools = _pools(50, 8)
    write_pools(a, pools)
    for sel in (select_binary_majority, select_hybrid):
        solve_indicators(pools, sel)
    write_pools(b, _pools(50, 8))
    assert a.read_bytes() == b.read_bytes()


def test_round_trip_and_blind_loading(tmp_path):
    path = tmp_path / "p.jsonl"
    pools = _pools(30, 9)
    write_pools(path, pools, {"seed": 9})
    header, back = read_pools(path)
    assert header["seed"] == 9 and back == pools
    _, blind = read_pools(path, blind=True)
    assert all(p.verdicts is None for p in blind)
    assert [select_hybrid(p).chosen for p in blind] == [select_hybrid(p).chosen for p in pools]
    with pytest.raises(ValueError):
        solve_indicators(blind, select_hybrid)
    with pytest.raises(PoolFileError):
        read_pools(tmp_path / "missing.jsonl")


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31), beta=st.floats(0, 1), sigma=st.floats(0, 0.5))
def test_selectors_never_beat_oracle(seed, beta, sigma):
    pools = _pools(20, seed, beta=beta, sigma=sigma)
    orc = oracle_indicators(pools)
    for sel in list(RULE_SELECTORS.values()) + [select_hybrid, select_binary_majority]:
        ind = solve_indicators(pools, sel)
        assert np.all(ind <= orc)
        assert all(0 <= sel(p).chosen < p.k for p in pools)
