"""Ranked valid-state systems with ground-truth soundness labels."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from committee_lab import rng as rng_mod


class ConfigError(ValueError):
    """Raised when a task, role, or protocol configuration is inconsistent."""

    def __init__(self, message: str, field_path: str | None = None):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path


class Tag(str, enum.Enum):
    SOUND = "sound"
    STALL = "unsound-valid"
    INVALIDATING = "invalidating"


_TAG_CODES = (Tag.SOUND, Tag.STALL, Tag.INVALIDATING)


@dataclass(frozen=True)
class StateRef:
    rank: int
    index: int = 0
    path: tuple[int, ...] = ()


class _Invalid:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INVALID"


# Absorbing state reached by any invalidating action.
INVALID = _Invalid()


@dataclass(frozen=True)
class StateSystem:
    """A ranked search space with stored labels.

    ``labels[d, i, a]`` is the tag code of action ``a`` at state ``i`` of rank
    ``d`` and ``successor[d, i, a]`` is the index of the next state within its
    rank level (-1 for invalidating actions). Row ``d = 0`` holds terminal
    states and is never consulted.
    """

    max_rank: int
    width: int
    arity: int
    labels: np.ndarray = field(repr=False)
    successor: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.labels.setflags(write=False)
        self.successor.setflags(write=False)

    @property
    def initial_state(self) -> StateRef:
        return StateRef(rank=self.max_rank, index=0)

    def is_terminal(self, s) -> bool:
        return isinstance(s, StateRef) and s.rank == 0

    def is_valid(self, s) -> bool:
        return isinstance(s, StateRef)

    def tag(self, s: StateRef, a: int) -> Tag:
        self._check_nonterminal(s, a)
        return _TAG_CODES[int(self.labels[s.rank, s.index, a])]

    def actions_with(self, s: StateRef, tags) -> list[int]:
        codes = [_TAG_CODES.index(t) for t in tags]
        row = self.labels[s.rank, s.index]
        return [a for a in range(self.arity) if int(row[a]) in codes]

    def sound_actions(self, s: StateRef) -> list[int]:
        return self.actions_with(s, (Tag.SOUND,))

    def unsound_actions(self, s: StateRef) -> list[int]:
        return self.actions_with(s, (Tag.STALL, Tag.INVALIDATING))

    @property
    def stall_fraction(self) -> float:
        """Share of unsound actions that keep the state valid (regular systems only)."""
        row = self.labels[self.max_rank, 0]
        unsound = int(np.sum(row != 0))
        return 0.0 if unsound == 0 else float(np.sum(row == 1)) / unsound

    def _check_nonterminal(self, s, a: int) -> None:
        if not isinstance(s, StateRef):
            raise ValueError("action applied to the invalid state")
        if s.rank == 0:
            raise ValueError("action applied to a terminal state")
        if not 0 <= a < self.arity:
            raise ValueError(f"action {a} outside arity {self.arity}")


def make_chain_task(
    L: int,
    arity: int,
    sound_count: int,
    stall_count: int = 0,
    shuffle_seed: int | None = None,
) -> StateSystem:
    """Build a depth-``L`` chain with one state per rank.

    Each nonterminal state has ``sound_count`` sound actions (rank drops by
    one), ``stall_count`` unsound actions that stay at the same state, and
    the rest lead to the absorbing invalid state. With ``shuffle_seed`` the
    label positions are permuted per state so action ids carry no signal.
    """
    if L < 1:
        raise ConfigError("depth must be at least 1", "L")
    if arity < 1:
        raise ConfigError("arity must be positive", "arity")
    if not 1 <= sound_count <= arity:
        raise ConfigError("need 1 <= sound_count <= arity", "sound_count")
    if stall_count < 0 or sound_count + stall_count > arity:
        raise ConfigError("sound_count + stall_count exceeds arity", "stall_count")

    base = np.array(
        [0] * sound_count + [1] * stall_count + [2] * (arity - sound_count - stall_count),
        dtype=np.int8,
    )
    labels = np.zeros((L + 1, 1, arity), dtype=np.int8)
    successor = np.full((L + 1, 1, arity), -1, dtype=np.int32)
    for d in range(1, L + 1):
        row = base.copy()
        if shuffle_seed is not None:
            rng_mod.stream(shuffle_seed, d).shuffle(row)
        labels[d, 0] = row
        successor[d, 0] = np.where(row == 2, -1, 0)
    return StateSystem(max_rank=L, width=1, arity=arity, labels=labels, successor=successor)


def apply_action(system: StateSystem, s: StateRef, a: int):
    """Return the successor of ``s`` under ``a``, or ``INVALID``."""
    code = _TAG_CODES.index(system.tag(s, a))
    nxt = int(system.successor[s.rank, s.index, a])
    if code == 2:
        return INVALID
    rank = s.rank - 1 if code == 0 else s.rank
    return StateRef(rank=rank, index=nxt, path=s.path + (a,))


def is_sound(system: StateSystem, s: StateRef, a: int) -> bool:
    return system.tag(s, a) is Tag.SOUND
