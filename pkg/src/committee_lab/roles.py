"""Parametric proposers, critics, comparators and verifiers.

Roles are stochastic processes with exactly configurable edges. The latent
variable Z is drawn once per trial (a :class:`SampledWorld`) and every
proposer call in that trial conditions on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from committee_lab.state_system import ConfigError, StateRef, StateSystem

FIRST = "first"
SECOND = "second"
TIE = "tie"

_WEIGHT_TOL = 1e-12

LATENT_KINDS = ("point-mass-mixture", "common-shock", "beta-mixture", "per-family")


@dataclass(frozen=True)
class LatentModel:
    """Law of Z and the per-family success probabilities ``q_g(Z)``.

    Discrete kinds are stored as atoms ``(weight, (q_1, ..., q_G))``; a row
    with a single ``q`` applies to every proposer family. The beta mixture
    keeps a point mass ``blind_mass`` at q = 0 plus weighted Beta components.
    """

    kind: str
    atoms: tuple[tuple[float, tuple[float, ...]], ...] = ()
    beta_components: tuple[tuple[float, float, float], ...] = ()
    blind_mass_beta: float = 0.0
    rho: float | None = None
    alpha: float | None = None
    tail_C: float | None = None
    tail_a: float | None = None

    def __post_init__(self):
        if self.kind not in LATENT_KINDS:
            raise ConfigError(f"unknown latent kind {self.kind!r}", "latent_kind")
        if self.kind == "beta-mixture":
            total = self.blind_mass_beta + sum(w for w, _, _ in self.beta_components)
            if not self.beta_components:
                raise ConfigError("beta mixture needs components", "latent_beta_components")
            for w, a, b in self.beta_components:
                if w < 0 or a <= 0 or b <= 0:
                    raise ConfigError("beta components need w >= 0, a, b > 0", "latent_beta_components")
        else:
            if not self.atoms:
                raise ConfigError("latent model needs at least one atom", "latent_masses")
            widths = {len(qs) for _, qs in self.atoms}
            if len(widths) != 1:
                raise ConfigError("every atom must list the same number of families", "latent_family_table")
            for w, qs in self.atoms:
                if not 0.0 <= w <= 1.0 or any(not 0.0 <= q <= 1.0 for q in qs):
                    raise ConfigError("weights and probabilities must lie in [0, 1]", "latent_masses")
            total = math.fsum(w for w, _ in self.atoms)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ConfigError(f"weights sum to {total!r}, not 1", "latent_masses")

    @classmethod
    def point_masses(cls, masses: Sequence[tuple[float, float]]) -> "LatentModel":
        """Exchangeable model from ``(q, weight)`` pairs."""
        return cls("point-mass-mixture", atoms=tuple((float(w), (float(q),)) for q, w in masses))

    @classmethod
    def common_shock(cls, rho: float, alpha: float) -> "LatentModel":
        # Shock branch: the whole committee shares one fate (all succeed w.p.
        # alpha, all fail otherwise). Independent branch: each call succeeds w.p. alpha.
        if not (0.0 <= rho <= 1.0 and 0.0 <= alpha <= 1.0):
            raise ConfigError("rho and alpha must lie in [0, 1]", "latent_rho")
        atoms = ((rho * alpha, (1.0,)), (rho * (1.0 - alpha), (0.0,)), (1.0 - rho, (alpha,)))
        return cls("common-shock", atoms=atoms, rho=rho, alpha=alpha)

    @classmethod
    def per_family(cls, rows: Sequence[tuple[float, Sequence[float]]]) -> "LatentModel":
        return cls("per-family", atoms=tuple((float(w), tuple(float(q) for q in qs)) for w, qs in rows))

    @classmethod
    def beta_mixture(cls, blind_mass: float, components: Sequence[tuple[float, float, float]]) -> "LatentModel":
        """``components`` are ``(weight, a, b)``; weights plus ``blind_mass`` sum to 1."""
        return cls(
            "beta-mixture",
            beta_components=tuple((float(w), float(a), float(b)) for w, a, b in components),
            blind_mass_beta=float(blind_mass),
        )

    @property
    def n_families(self) -> int:
        return 1 if self.kind == "beta-mixture" else len(self.atoms[0][1])

    @property
    def blind_mass(self) -> float:
        """Probability that every family has zero success probability."""
        if self.kind == "beta-mixture":
            return self.blind_mass_beta
        return math.fsum(w for w, qs in self.atoms if all(q == 0.0 for q in qs))

    def family_q(self, qs: Sequence[float], family: int) -> float:
        if len(qs) == 1:
            return qs[0]
        if family >= len(qs):
            raise ConfigError(f"family {family} not in latent table of width {len(qs)}", "portfolio_size")
        return qs[family]


@dataclass(frozen=True)
class SampledWorld:
    atom: int
    q: tuple[float, ...]

    def q_for(self, family: int) -> float:
        if len(self.q) == 1:
            return self.q[0]
        return self.q[family]


def sample_world(model: LatentModel, rng: np.random.Generator) -> SampledWorld:
    """Draw Z once for a trial."""
    if model.kind == "beta-mixture":
        weights = [model.blind_mass_beta] + [w for w, _, _ in model.beta_components]
        idx = int(rng.choice(len(weights), p=np.asarray(weights) / math.fsum(weights)))
        if idx == 0:
            return SampledWorld(atom=0, q=(0.0,))
        _, a, b = model.beta_components[idx - 1]
        return SampledWorld(atom=idx, q=(float(rng.beta(a, b)),))
    weights = np.array([w for w, _ in model.atoms])
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(weights), u, side="right"))
    idx = min(idx, len(weights) - 1)
    while weights[idx] == 0.0:
        idx -= 1
    return SampledWorld(atom=idx, q=model.atoms[idx][1])


def sample_worlds(model: LatentModel, rng: np.random.Generator, n: int, families: int) -> np.ndarray:
    """Vectorised :func:`sample_world`: returns q with shape ``(n, families)``."""
    if model.kind == "beta-mixture":
        weights = np.array([model.blind_mass_beta] + [w for w, _, _ in model.beta_components])
        idx = rng.choice(len(weights), size=n, p=weights / weights.sum())
        q = np.zeros(n)
        for c, (_, a, b) in enumerate(model.beta_components, start=1):
            sel = idx == c
            q[sel] = rng.beta(a, b, size=int(sel.sum()))
        return np.repeat(q[:, None], families, axis=1)
    table = np.array([qs for _, qs in model.atoms], dtype=float)
    if table.shape[1] == 1:
        table = np.repeat(table, families, axis=1)
    elif table.shape[1] < families:
        raise ConfigError(f"latent table has {table.shape[1]} families, portfolio needs {families}", "portfolio_size")
    cdf = np.cumsum([w for w, _ in model.atoms])
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    return table[idx, :families]


@dataclass(frozen=True)
class RoleSuite:
    """Role edges and knobs.

    ``beta`` is the exact per-call rejection probability for unsound
    candidates, ``sigma`` the comparator edge on mixed pairs, ``nu`` the
    verifier leakage. ``pos_bias`` is added to the first-shown side's vote
    probability. ``judge_false_reject`` only affects offline judge votes in
    candidate pools; protocol critics stay one-sided.
    """

    portfolio_size: int = 1
    beta: float = 1.0
    sigma: float = 0.5
    nu: float = 0.0
    tie_prob: float = 0.0
    pos_bias: float = 0.0
    judge_false_reject: float = 0.0
    critic_kind: str = "edge"
    comparator_kind: str = "edge"

    def __post_init__(self):
        if self.portfolio_size < 1:
            raise ConfigError("portfolio size must be positive", "portfolio_size")
        for name in ("beta", "nu", "tie_prob", "judge_false_reject"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]", name)
        if not 0.0 <= self.sigma <= 0.5:
            raise ConfigError("sigma must lie in [0, 1/2]", "sigma")
        if abs(self.pos_bias) > 1.0:
            raise ConfigError("pos_bias must lie in [-1, 1]", "pos_bias")
        if self.critic_kind not in ("edge", "verifier"):
            raise ConfigError(f"unknown critic kind {self.critic_kind!r}", "critic_kind")
        if self.comparator_kind not in ("edge", "verifier"):
            raise ConfigError(f"unknown comparator kind {self.comparator_kind!r}", "comparator_kind")

    def reject_prob(self, sound: bool) -> float:
        """Per-call critic rejection probability."""
        if sound:
            return 0.0
        return 1.0 - self.nu if self.critic_kind == "verifier" else self.beta

    def vote_probs(self, first_sound: bool, second_sound: bool) -> tuple[float, float, float]:
        """``(P[first], P[second], P[tie])`` for one comparator vote."""
        if self.comparator_kind == "verifier":
            acc_f = 1.0 if first_sound else self.nu
            acc_s = 1.0 if second_sound else self.nu
            p_first = acc_f * (1 - acc_s) + 0.5 * (acc_f * acc_s + (1 - acc_f) * (1 - acc_s))
            return p_first, 1.0 - p_first, 0.0
        t = self.tie_prob
        if first_sound == second_sound:
            base = 0.5
        else:
            base = 0.5 + self.sigma if first_sound else 0.5 - self.sigma
        p_first = min(max(base * (1 - t) + self.pos_bias, 0.0), 1 - t)
        return p_first, 1 - t - p_first, t


@dataclass(frozen=True)
class Candidate:
    """A proposed action; ``sound`` is hidden ground truth for evaluation."""

    action: int
    sound: bool
    family: int = 0


def propose(
    world: SampledWorld,
    family: int,
    rng: np.random.Generator,
    system: StateSystem | None = None,
    state: StateRef | None = None,
) -> Candidate:
    """One proposer call from prompt ``family``.

    Sound with probability ``q_family(Z)``. With a system and state the action
    id is drawn uniformly from the matching label set; a state without
    unsound actions always yields a sound action.
    """
    sound = bool(rng.random() < world.q_for(family))
    if system is None:
        return Candidate(action=-1, sound=sound, family=family)
    pool = system.sound_actions(state) if sound else system.unsound_actions(state)
    if not pool:
        sound, pool = True, system.sound_actions(state)
    action = pool[int(rng.integers(len(pool)))]
    return Candidate(action=action, sound=sound, family=family)


def critic_call(candidate: Candidate, suite: RoleSuite, rng: np.random.Generator) -> bool:
    """Return True for accept. Sound candidates are never rejected."""
    if suite.critic_kind == "verifier":
        return verifier_call(candidate, suite, rng)
    return not (rng.random() < suite.reject_prob(candidate.sound))


def verifier_call(candidate: Candidate, suite: RoleSuite, rng: np.random.Generator) -> bool:
    """One-sided verifier: unsound candidates pass only with probability nu."""
    u = rng.random()
    return candidate.sound or bool(u < suite.nu)


def comparator_call(first: Candidate, second: Candidate, suite: RoleSuite, rng: np.random.Generator) -> str:
    if suite.comparator_kind == "verifier":
        ok_first = verifier_call(first, suite, rng)
        ok_second = verifier_call(second, suite, rng)
        coin = rng.random()
        if ok_first != ok_second:
            return FIRST if ok_first else SECOND
        return FIRST if coin < 0.5 else SECOND
    p_first, p_second, _ = suite.vote_probs(first.sound, second.sound)
    u = rng.random()
    if u < p_first:
        return FIRST
    if u < p_first + p_second:
        return SECOND
    return TIE


def derive_roles_from_verifier(suite: RoleSuite) -> RoleSuite:
    """Use the verifier as critic and as a verify-both comparator."""
    return replace(
        suite,
        critic_kind="verifier",
        comparator_kind="verifier",
        beta=1.0 - suite.nu,
        sigma=(1.0 - suite.nu) / 2.0,
        tie_prob=0.0,
        pos_bias=0.0,
    )


def measure_edges(suite: RoleSuite, n: int, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Count critic rejections of unsound candidates and sound wins in mixed pairs.

    Returns ``(rejections, n, sound_wins, n)``; the sound candidate is shown
    first in half of the pairs.
    """
    bad = Candidate(action=-1, sound=False)
    good = Candidate(action=-1, sound=True)
    rejections = sum(not critic_call(bad, suite, rng) for _ in range(n))
    wins = 0
    for i in range(n):
        if i % 2 == 0:
            wins += comparator_call(good, bad, suite, rng) == FIRST
        else:
            wins += comparator_call(bad, good, suite, rng) == SECOND
    return rejections, n, wins, n
