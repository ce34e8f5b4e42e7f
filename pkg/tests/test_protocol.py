import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from committee_lab import protocol as P
from committee_lab.estimators import exact_chain_success, wilson_interval
from committee_lab.protocol import (
    CLEAN,
    ID_MISS,
    PAIR_TIE,
    PROP_MISS,
    SUCCESS,
    TOURNAMENT_RULES,
    TRIAL_CATEGORIES,
    WIN_I,
    WIN_J,
    ProtocolConfig,
    StepStreams,
    call_budget,
    copeland_winner,
    count_role_calls,
    critic_gate,
    debiased_pair,
    majority,
    majority_pair,
    run_step,
    run_trajectory,
    tournament,
)
from committee_lab.roles import FIRST, SECOND, TIE, Candidate, LatentModel, RoleSuite, sample_world
from committee_lab.state_system import ConfigError, make_chain_task

GOOD = Candidate(0, True)
BAD = Candidate(1, False)


def matrix(n, wins):
    """Antisymmetric result matrix from a set of (winner, loser) pairs."""
    res = np.zeros((n, n), dtype=int)
    for a, b in wins:
        res[a, b], res[b, a] = WIN_I, WIN_J
    return res


# ------------------------------------------------------------------ config


def test_tau_above_m_names_the_field():
    with pytest.raises(ConfigError) as exc:
        ProtocolConfig(k=2, m=2, gate_mode="yes-threshold", tau=3)
    assert exc.value.field_path == "tau"


@pytest.mark.parametrize("kw,field", [({"k": 0}, "k"), ({"m": -1}, "m"), ({"tournament_rule": "borda"}, "tournament_rule"),
                                      ({"debias_mode": "x"}, "debias_mode")])
def test_config_errors(kw, field):
    with pytest.raises(ConfigError) as exc:
        ProtocolConfig(**kw)
    assert exc.value.field_path == field


# -------------------------------------------------------------------- gate


def test_gate_reject_any_perfect_critic(rng):
    cfg = ProtocolConfig(k=3, m=3)
    assert critic_gate([GOOD, BAD, GOOD], cfg, RoleSuite(beta=1.0), rng) == [0, 2]
    assert critic_gate([GOOD, BAD, GOOD], cfg, RoleSuite(beta=0.0), rng) == [0, 1, 2]


def test_gate_yes_threshold_counts(monkeypatch, rng):
    script = iter([True] * 5 + [True, True, False, False, False] + [True, False, True, False, True])
    monkeypatch.setattr(P, "critic_call", lambda c, s, g: next(script))
    cfg = ProtocolConfig(k=3, m=5, gate_mode="yes-threshold", tau=3)
    assert critic_gate([GOOD, BAD, BAD], cfg, RoleSuite(), rng) == [0, 2]


# ------------------------------------------------------------- aggregation


def test_debiased_pair_examples():
    assert debiased_pair([FIRST] * 3, [SECOND] * 3) == WIN_I
    assert debiased_pair([SECOND] * 3, [FIRST] * 3) == WIN_J
    assert debiased_pair([FIRST] * 3, [FIRST] * 3) == PAIR_TIE
    assert debiased_pair([FIRST] * 3, [TIE, TIE, SECOND]) == PAIR_TIE


def test_majority_is_strict_over_all_votes():
    assert majority([FIRST, SECOND]) == TIE
    assert majority([FIRST, TIE, TIE]) == TIE
    assert majority([FIRST, FIRST, TIE]) == FIRST
    assert majority([]) == TIE


def test_majority_pair_examples(rng):
    assert majority_pair(GOOD, BAD, 1, RoleSuite(sigma=0.5), rng) == FIRST
    # r=3 at per-vote 0.8: 0.8^3 + 3 * 0.8^2 * 0.2 = 0.896
    n = 50_000
    wins = sum(majority_pair(GOOD, BAD, 3, RoleSuite(sigma=0.3), rng) == FIRST for _ in range(n))
    lo, hi = wilson_interval(wins, n)
    assert lo <= 0.896 <= hi


def test_copeland_examples():
    assert copeland_winner(matrix(3, [(0, 1), (0, 2), (1, 2)])) == 0
    assert copeland_winner(matrix(3, [])) == 0
    assert copeland_winner(matrix(3, [(0, 1), (1, 2), (2, 0)])) == 0
    assert copeland_winner(matrix(3, [(1, 0), (1, 2)])) == 1


def play_from(res):
    return lambda i, j: int(res[i, j])


def test_tournament_single_survivor():
    for rule in TOURNAMENT_RULES:
        t = tournament(1, rule, lambda i, j: pytest.fail("no pairs expected"))
        assert (t.winner, t.pairs_played) == (0, 0)


def test_cycle_rules_disagree_as_hand_enumerated():
    res = matrix(3, [(0, 1), (1, 2), (2, 0)])
    got = {rule: tournament(3, rule, play_from(res)).winner for rule in TOURNAMENT_RULES}
    # king: 0 beats 1, then loses to 2; bracket: 0 has the bye, 1 beats 2, 0 beats 1
    assert got == {"copeland": 0, "sequential-king": 2, "strict-dominance": 0, "single-elim": 0}


def test_strict_dominance_picks_dominant():
    res = matrix(4, [(2, 0), (2, 1), (2, 3), (0, 1)])
    assert tournament(4, "strict-dominance", play_from(res)).winner == 2


def test_single_elim_byes_and_ties():
    # 5 players: bracket size 8, byes to 0, 1, 2; then 3 vs 4 tie -> 3 advances
    t = tournament(5, "single-elim", play_from(matrix(5, [])))
    assert t.winner == 0 and t.pairs_played == 4


@pytest.mark.parametrize("rule", TOURNAMENT_RULES)
@pytest.mark.parametrize("sound_at", range(4))
def test_perfect_edges_pick_the_sound_survivor(rule, sound_at):
    tags = [i == sound_at for i in range(4)]
    res = np.zeros((4, 4), dtype=int)
    for i, j in itertools.combinations(range(4), 2):
        if tags[i] != tags[j]:
            res[i, j] = WIN_I if tags[i] else WIN_J
            res[j, i] = -res[i, j]
    assert tournament(4, rule, play_from(res)).winner == sound_at


def test_copeland_soundness_exhaustive():
    """Every win/tie matrix over <= 5 survivors where sound beats unsound."""
    checked = 0
    for n in range(1, 6):
        for tags in itertools.product([False, True], repeat=n):
            if not any(tags):
                continue
            free = [(i, j) for i, j in itertools.combinations(range(n), 2) if tags[i] == tags[j]]
            for outcome in itertools.product((WIN_I, PAIR_TIE, WIN_J), repeat=len(free)):
                res = np.zeros((n, n), dtype=int)
                for i, j in itertools.combinations(range(n), 2):
                    if tags[i] != tags[j]:
                        res[i, j] = WIN_I if tags[i] else WIN_J
                for (i, j), o in zip(free, outcome):
                    res[i, j] = o
                res -= res.T
                assert tags[copeland_winner(res)]
                checked += 1
    assert checked > 10_000


# --------------------------------------------------------------- run_step


def _world(q):
    return sample_world(LatentModel.point_masses([(q, 1.0)]), np.random.default_rng(0))


def test_run_step_examples():
    sys_ = make_chain_task(2, 2, 1)
    s0 = sys_.initial_state
    out = run_step(sys_, s0, ProtocolConfig(k=1), RoleSuite(), _world(1.0), StepStreams.derive(0, 0, 0))
    assert out.tag == CLEAN and out.selected == 0
    out = run_step(sys_, s0, ProtocolConfig(k=3, m=1, r=1), RoleSuite(), _world(0.0), StepStreams.derive(0, 0, 0))
    assert out.tag == PROP_MISS


def test_run_step_gate_removes_unsound():
    sys_ = make_chain_task(1, 2, 1)
    world = sample_world(LatentModel.per_family([(1.0, [1.0, 0.0])]), np.random.default_rng(0))
    suite = RoleSuite(portfolio_size=2, beta=1.0)
    out = run_step(sys_, sys_.initial_state, ProtocolConfig(k=2, m=1, r=1), suite, world, StepStreams.derive(1, 0, 0))
    assert out.survivors == [0] and out.selected == 0 and out.tag == CLEAN


def test_local_failure_is_tagged_by_coverage():
    sys_ = make_chain_task(1, 2, 1)
    cfg = ProtocolConfig(k=2, m=1, gate_mode="yes-threshold", tau=1)
    # beta=1 rejects every unsound call; with all candidates unsound nothing survives
    out = run_trajectory(sys_, cfg, RoleSuite(beta=1.0), LatentModel.point_masses([(0.0, 1.0)]), 0, 0)
    assert out.category == "local-failure" and out.steps[0].tag == PROP_MISS


def test_trajectory_examples():
    perfect = RoleSuite(beta=1.0, sigma=0.5)
    out = run_trajectory(make_chain_task(1, 2, 1), ProtocolConfig(k=2, m=1, r=1), perfect,
                         LatentModel.point_masses([(1.0, 1.0)]), 0, 0)
    assert out.success and len(out.steps) == 1
    out = run_trajectory(make_chain_task(3, 2, 1), ProtocolConfig(k=4, m=1, r=1), perfect,
                         LatentModel.common_shock(1.0, 0.0), 0, 0)
    assert not out.success and out.steps[0].tag == PROP_MISS and len(out.steps) == 1
    out = run_trajectory(make_chain_task(3, 2, 1), ProtocolConfig(k=4), perfect, LatentModel.common_shock(1.0, 0.0), 0, 0)
    assert out.category == PROP_MISS


def test_scalar_engine_matches_exact_oracle():
    sys_ = make_chain_task(3, 4, 1)
    cfg = ProtocolConfig(k=4, m=2, r=3)
    suite = RoleSuite(beta=0.8, sigma=0.3)
    model = LatentModel.point_masses([(0.9, 1.0)])
    n = 6000
    wins = sum(run_trajectory(sys_, cfg, suite, model, 3, t).success for t in range(n))
    lo, hi = wilson_interval(wins, n)
    assert lo <= exact_chain_success(sys_, cfg, suite, model) <= hi


# ------------------------------------------------------------ call counts


def test_count_formula_example():
    cfg = ProtocolConfig(k=4, m=2, r=3, debias_mode="both-orders-conservative")
    out = run_trajectory(make_chain_task(1, 2, 1), cfg, RoleSuite(beta=0.5, sigma=0.3),
                         LatentModel.point_masses([(1.0, 1.0)]), 0, 0)
    assert count_role_calls(out, cfg, 1) == {"proposer": 4, "critic": 8, "comparator": 36, "total": 48}


def test_no_comparator_calls_without_votes_or_pairs():
    model = LatentModel.point_masses([(0.5, 1.0)])
    cfg = ProtocolConfig(k=3, m=1, r=0)
    out = run_trajectory(make_chain_task(2, 2, 1), cfg, RoleSuite(), model, 0, 0)
    assert count_role_calls(out, cfg, 2)["comparator"] == 0
    cfg = ProtocolConfig(k=1, m=1, r=5)
    out = run_trajectory(make_chain_task(2, 2, 1), cfg, RoleSuite(), model, 0, 0)
    assert count_role_calls(out, cfg, 2)["comparator"] == 0


@given(k=st.integers(1, 5), m=st.integers(0, 3), r=st.integers(0, 3), L=st.integers(1, 4),
       rule=st.sampled_from(TOURNAMENT_RULES), both=st.booleans(), seed=st.integers(0, 10**6),
       beta=st.floats(0, 1), q=st.floats(0, 1))
def test_call_counts_follow_formula(k, m, r, L, rule, both, seed, beta, q):
    cfg = ProtocolConfig(k=k, m=m, r=r, tournament_rule=rule,
                         debias_mode="both-orders-conservative" if both else "single-order")
    out = run_trajectory(make_chain_task(L, 3, 1, stall_count=1), cfg, RoleSuite(beta=beta, sigma=0.2),
                         LatentModel.point_masses([(q, 1.0)]), seed, 0)
    totals = count_role_calls(out, cfg, L)
    assert totals["total"] <= call_budget(cfg, L)
    assert len(out.steps) <= L


# -------------------------------------------------------------- invariants


def test_perfect_critic_never_lets_unsound_through():
    cfg = ProtocolConfig(k=3, m=1, r=1)
    model = LatentModel.point_masses([(0.4, 1.0)])
    cats = Counter(run_trajectory(make_chain_task(3, 3, 1), cfg, RoleSuite(beta=1.0, sigma=0.1), model, 7, t).category
                   for t in range(1500))
    assert cats[ID_MISS] == 0


def test_perfect_comparator_selects_sound_when_one_survives():
    cfg = ProtocolConfig(k=4, m=1, r=3)
    model = LatentModel.point_masses([(0.3, 1.0)])
    sys_ = make_chain_task(2, 3, 1)
    for t in range(800):
        out = run_trajectory(sys_, cfg, RoleSuite(beta=0.2, sigma=0.5), model, 11, t)
        for step in out.steps:
            if any(step.candidates[i].sound for i in step.survivors):
                assert step.candidates[step.selected].sound


def test_event_accounting_partitions_trials():
    cfg = ProtocolConfig(k=2, m=1, r=1, gate_mode="yes-threshold", tau=1)
    model = LatentModel.point_masses([(0.0, 0.2), (0.6, 0.8)])
    cats = Counter(run_trajectory(make_chain_task(3, 3, 1, 1), cfg, RoleSuite(beta=0.7, sigma=0.2), model, 5, t).category
                   for t in range(1000))
    assert set(cats) <= set(TRIAL_CATEGORIES)
    assert sum(cats.values()) == 1000
    assert cats[SUCCESS] > 0


@given(seed=st.integers(0, 10**6), trial=st.integers(0, 1000), k=st.integers(1, 7), q=st.floats(0, 1))
def test_coverage_is_monotone_in_k(seed, trial, k, q):
    sys_ = make_chain_task(1, 3, 1)
    world = _world(q)
    small = run_step(sys_, sys_.initial_state, ProtocolConfig(k=k), RoleSuite(), world, StepStreams.derive(seed, trial, 0))
    big = run_step(sys_, sys_.initial_state, ProtocolConfig(k=k + 1), RoleSuite(), world, StepStreams.derive(seed, trial, 0))
    assert [c.sound for c in big.candidates[:k]] == [c.sound for c in small.candidates]
    if small.tag != PROP_MISS:
        assert big.tag != PROP_MISS
