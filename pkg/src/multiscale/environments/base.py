"""Common interface for leveled reward simulators."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import LevelSpec, RngStream, check_level_stack
from ..policies import PolicyFamily, sample_actions


@dataclass
class Users:
    """A batch of simulated users with per-level features and hidden group labels."""

    features: dict
    groups: dict

    @property
    def n(self) -> int:
        return int(next(iter(self.groups.values())).shape[0])

    def take(self, index) -> "Users":
        return Users(
            {k: v[index] for k, v in self.features.items()},
            {k: v[index] for k, v in self.groups.items()},
        )


@dataclass
class StepRecord:
    """Outcome of one lower-level step for every user in a batch.

    ``rewards`` are the rewards observed at that lower level; ``level_means`` maps
    each level at or below it to per-user mean rewards; ``extras`` holds whatever
    the environment needs to compute the next level's reward.
    """

    rewards: np.ndarray
    level_means: dict
    actions: Optional[np.ndarray] = None
    components: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def sample_by_member(family: PolicyFamily, member_index: np.ndarray, X: np.ndarray, rng: RngStream):
    """Sample one action per user from the family member assigned to that user."""
    member_index = np.asarray(member_index, dtype=np.int64)
    actions = np.zeros(member_index.shape[0], dtype=np.int64)
    props = np.zeros(member_index.shape[0])
    for j in np.unique(member_index):
        mask = member_index == j
        a, p = sample_actions(family.member(int(j)), X[mask], rng)
        actions[mask], props[mask] = a, p
    return actions, props


class MultiScaleEnv:
    """Base class. Subclasses define ``levels`` and the step/reward hooks."""

    name = "env"
    levels: tuple = ()

    def __init__(self, levels) -> None:
        check_level_stack(levels)
        self.levels = tuple(levels)

    def level(self, k: int) -> LevelSpec:
        return self.levels[k - 1]

    @property
    def top_level(self) -> int:
        return len(self.levels)

    def sample_users(self, n: int, rng: RngStream) -> Users:
        raise NotImplementedError

    def new_session(self, users: Users) -> dict:
        return {}

    def micro_feedback(self, users: Users, actions: np.ndarray, rng: RngStream):
        """Reward of primitive actions chosen by a level-1 logging policy: (rewards, components)."""
        raise NotImplementedError(f"{self.name} has no learnable micro level")

    def micro_step(self, users, family, member_index, t, session, rng) -> StepRecord:
        raise NotImplementedError

    def level_reward(self, level, users, records, actions, family, rng):
        """Reward at ``level`` from its lower-level step records: (rewards, components)."""
        raise NotImplementedError

    def given_micro_policy(self):
        """Fixed micro policy for environments whose lowest level is not learned."""
        return None

    def group_centres(self, level: int) -> np.ndarray:
        """Feature-space centre of every context group at ``level``."""
        raise NotImplementedError

    def is_enumerable(self, level: int) -> bool:
        return False

    def ground_truth(self) -> dict:
        return {}

    def dump_tables(self, directory) -> list:
        """Write ground-truth tables as CSV files for audit; returns written paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name, table in self.ground_truth().items():
            arr = np.asarray(table, dtype=float)
            path = directory / f"{self.name}_{name}.csv"
            np.savetxt(path, arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[None, :], delimiter=",", fmt="%.17g")
            written.append(path)
        return written


def group_means(groups: int, dim: int, spread: float = 2.0, offset: int = 0) -> np.ndarray:
    """Fixed group centres: scaled coordinate vectors, pairwise distance spread*sqrt(2) >= 2."""
    if groups > dim:
        raise ValueError("need context_dim >= number of groups for coordinate-vector centres")
    mu = np.zeros((groups, dim))
    for g in range(groups):
        mu[g, (g + offset) % dim] = spread
    return mu
