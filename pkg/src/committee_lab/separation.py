"""Coverage without identifiability: the M-world construction.

Actions are ``1..M``. In world ``theta`` every action except ``theta`` is
sound, and the proposer is uniform over all actions in every world, so the
proposer has coverage ``(M-1)/M`` everywhere yet its samples carry no
information about ``theta``. A critic that only sees the candidate and
proposer samples therefore behaves identically in every world. It can be
one-sided sound in all worlds only by never rejecting, which leaves it no
rejection edge in the worst world.

Each catalog critic is replayed on the same streams in every world, and the
raw observable transcript is compared byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from committee_lab import rng as rng_mod
from committee_lab.state_system import ConfigError

# candidate action, proposer samples (trials x n), action count M, rng -> reject flag per trial
CriticFn = Callable[[int, np.ndarray, int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class HiddenWorld:
    theta: int
    M: int

    def sound(self, action: int) -> bool:
        return action != self.theta

    def propose(self, rng: np.random.Generator, shape) -> np.ndarray:
        # Uniform in every world; theta never enters the draw.
        return rng.integers(1, self.M + 1, size=shape)


def reject_fixed_action(target: int = 1) -> CriticFn:
    def critic(action, samples, M, rng):
        return np.full(len(samples), action == target)
    return critic


def reject_most_frequent(action, samples, M, rng):
    """Reject the candidate when it is the modal proposer sample (lowest action on ties)."""
    counts = np.stack([(samples == a).sum(axis=1) for a in range(1, M + 1)], axis=1)
    modal = counts.argmax(axis=1) + 1
    return modal == action


def never_reject(action, samples, M, rng):
    return np.zeros(len(samples), dtype=bool)


def reject_at_random(p: float = 0.3) -> CriticFn:
    def critic(action, samples, M, rng):
        return rng.random(len(samples)) < p
    return critic


CATALOG: dict[str, CriticFn] = {
    "reject-fixed-action": reject_fixed_action(1),
    "reject-most-frequent": reject_most_frequent,
    "never-reject": never_reject,
    "reject-at-random": reject_at_random(0.3),
}


@dataclass(frozen=True)
class WorldStats:
    theta: int
    violations: int  # rejections of sound actions, over all trials
    sound_checks: int
    edge: float  # rejection rate of the unique unsound action
    transcript: bytes


@dataclass(frozen=True)
class SeparationReport:
    critic: str
    M: int
    trials: int
    worlds: tuple[WorldStats, ...]

    @property
    def transcripts_identical(self) -> bool:
        first = self.worlds[0].transcript
        return all(w.transcript == first for w in self.worlds)

    @property
    def sound_everywhere(self) -> bool:
        return all(w.violations == 0 for w in self.worlds)

    @property
    def worst_world_edge(self) -> float:
        return min(w.edge for w in self.worlds)

    @property
    def demonstrates_separation(self) -> bool:
        return (not self.sound_everywhere) or self.worst_world_edge == 0.0

    def reject_rates(self) -> dict[int, list[float]]:
        """Per world, the rejection rate of each action 1..M, decoded from the transcript."""
        return {w.theta: _rates_from_transcript(w.transcript, self.M, self.trials) for w in self.worlds}


def _rates_from_transcript(blob: bytes, M: int, trials: int) -> list[float]:
    out = []
    step = len(blob) // M
    for a in range(M):
        chunk = blob[a * step:(a + 1) * step]
        flags = np.frombuffer(chunk[-trials:], dtype=np.uint8)
        out.append(float(flags.mean()))
    return out


def run_world(world: HiddenWorld, critic: CriticFn, critic_id: int, trials: int, samples: int, seed: int) -> WorldStats:
    """Evaluate ``critic`` on every action, replaying the same streams in any world."""
    blob = bytearray()
    violations = 0
    edge = 0.0
    for a in range(1, world.M + 1):
        g = rng_mod.stream(seed, rng_mod.SEPARATION, critic_id, a)
        obs = world.propose(g, (trials, samples))
        rej = np.asarray(critic(a, obs, world.M, g), dtype=bool)
        blob += obs.astype("<i4").tobytes()
        blob += rej.astype(np.uint8).tobytes()
        if world.sound(a):
            violations += int(rej.sum())
        else:
            edge = float(rej.mean())
    return WorldStats(world.theta, violations, trials * (world.M - 1), edge, bytes(blob))


def run_separation(M: int = 5, trials: int = 2000, samples: int = 16, seed: int = 0,
                   catalog: dict[str, CriticFn] | None = None) -> list[SeparationReport]:
    if M < 2:
        raise ConfigError("the construction needs at least two worlds", "sep_M")
    if trials < 1 or samples < 1:
        raise ConfigError("trials and samples must be positive", "sep_samples")
    catalog = CATALOG if catalog is None else catalog
    reports = []
    for cid, (name, critic) in enumerate(catalog.items()):
        worlds = tuple(run_world(HiddenWorld(theta, M), critic, cid, trials, samples, seed)
                       for theta in range(1, M + 1))
        reports.append(SeparationReport(name, M, trials, worlds))
    return reports
