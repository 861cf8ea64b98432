"""Small enumerable two-level environment used as a test oracle."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import LevelSpec, RngStream
from ..policies import PolicyFamily, action_distribution
from .base import MultiScaleEnv, StepRecord, Users, sample_by_member


class FiniteEnv(MultiScaleEnv):
    """Finite contexts, Bernoulli rewards with known means.

    Level 1: reward ~ Bernoulli(short_means[c, a]).
    Level 2: after ``horizon`` micro steps, reward ~ Bernoulli(mean_t long_means[c, a_t]).
    """

    name = "finite"

    def __init__(
        self,
        short_means,
        long_means=None,
        context_probs=None,
        features=None,
        horizon: int = 3,
        macro_count: int = 2,
    ) -> None:
        self.short_means = np.asarray(short_means, dtype=float)
        C, A = self.short_means.shape
        self.long_means = self.short_means if long_means is None else np.asarray(long_means, dtype=float)
        self.context_probs = np.full(C, 1.0 / C) if context_probs is None else np.asarray(context_probs, float)
        self.features = np.eye(C) if features is None else np.asarray(features, dtype=float)
        if self.long_means.shape != (C, A) or self.features.shape[0] != C:
            raise ValueError("table shapes disagree")
        if not np.isclose(self.context_probs.sum(), 1.0):
            raise ValueError("context probabilities must sum to 1")
        d = self.features.shape[1]
        super().__init__((LevelSpec(1, 1, A, d), LevelSpec(2, horizon, macro_count, d)))

    def sample_users(self, n: int, rng: RngStream) -> Users:
        c = rng.choice(len(self.context_probs), size=n, p=self.context_probs)
        X = self.features[c]
        return Users({1: X, 2: X}, {1: c, 2: c})

    def micro_feedback(self, users, actions, rng):
        c = users.groups[1]
        return (rng.random(users.n) < self.short_means[c, actions]).astype(float), None

    def micro_step(self, users, family, member_index, t, session, rng) -> StepRecord:
        a, _ = sample_by_member(family, member_index, users.features[1], rng)
        c = users.groups[1]
        r = (rng.random(users.n) < self.short_means[c, a]).astype(float)
        return StepRecord(r, {1: r}, actions=a, extras={"long": self.long_means[c, a]})

    def level_reward(self, level, users, records, actions, family, rng):
        p = np.mean([rec.extras["long"] for rec in records], axis=0)
        return (rng.random(users.n) < p).astype(float), None

    def group_centres(self, level: int) -> np.ndarray:
        return self.features

    def is_enumerable(self, level: int) -> bool:
        return level in (1, 2)

    def context_table(self, level: int):
        return self.features, self.context_probs

    def mean_reward_table(self, level: int, lower: Optional[PolicyFamily] = None) -> np.ndarray:
        if level == 1:
            return self.short_means
        if lower is None:
            raise ValueError("level-2 values need the micro family")
        cols = [np.sum(np.atleast_2d(action_distribution(m, self.features)) * self.long_means, axis=1) for m in lower.members]
        return np.stack(cols, axis=1)

    def ground_truth(self) -> dict:
        return {"short_means": self.short_means, "long_means": self.long_means, "context_probs": self.context_probs}
