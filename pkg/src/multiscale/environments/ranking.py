"""Two-level ranking environment: a fixed ranker picks top-k items per step, a macro
policy chooses which item group to boost, and retention depends on how much of the
user's preferred item group was shown over the session."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import LevelSpec, RngStream, make_rng
from ..policies import BoostMod, MacroAction, PolicyFamily, FamilyMode, Policy
from .base import MultiScaleEnv, StepRecord, Users, group_means

RETURN_FLOOR = 1e-3


@dataclass(frozen=True)
class RankEnvSpec:
    groups: int = 2
    items_per_group: int = 40
    k: int = 10
    horizon: int = 5
    sigma_s: float = 0.0
    boost: float = 1.0
    preferred_p: float = 0.9
    other_p: float = 0.1
    score_low: float = 0.2
    score_high: float = 0.9
    context_dim: int = 5
    sigma_f: float = 0.1
    construction_seed: int = 4321

    def __post_init__(self) -> None:
        if not 1 <= self.groups <= self.context_dim:
            raise ValueError("groups must be in [1, context_dim]")
        if not 1 <= self.k <= self.n_items:
            raise ValueError(f"k={self.k} exceeds the {self.n_items} items")
        if self.sigma_s < 0 or self.sigma_f < 0:
            raise ValueError("noise levels must be non-negative")
        if not (0 <= self.other_p <= 1 and 0 <= self.preferred_p <= 1):
            raise ValueError("preferences must lie in [0, 1]")

    @property
    def n_items(self) -> int:
        return self.groups * self.items_per_group

    @property
    def preference(self) -> np.ndarray:
        """p[u, i]: preference of user group u for item group i; group u prefers item group u."""
        p = np.full((self.groups, self.groups), self.other_p)
        np.fill_diagonal(p, self.preferred_p)
        return p


def rank_step(scores: np.ndarray, offsets: np.ndarray, k: int, sigma_s: float, rng: RngStream):
    """Top-k of noisy boosted scores, then Bernoulli clicks on the clean scores.

    ``scores`` has shape (n, items) with values in [0, 1]; ``offsets`` is the boost
    per item, shape (items,) or (n, items). Returns (selection, clicks), each (n, k).
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if k > scores.shape[1]:
        raise ValueError(f"k={k} exceeds the {scores.shape[1]} items")
    noisy = scores + (sigma_s * rng.standard_normal(scores.shape) if sigma_s > 0 else 0.0)
    order = np.argsort(-(noisy + offsets), axis=1, kind="stable")[:, :k]
    p = np.clip(np.take_along_axis(scores, order, axis=1), 0.0, 1.0)
    clicks = (rng.random(p.shape) < p).astype(float)
    return order, clicks


def retention_weight(counts: np.ndarray, user_group, preference: np.ndarray) -> np.ndarray:
    """w = sum_i p[u, i] n_i / sum_i n_i over item groups i."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    total = counts.sum(axis=1)
    if np.any(total <= 0):
        raise ValueError("selection history is empty")
    p = preference[np.atleast_1d(user_group)]
    return (p * counts).sum(axis=1) / total


def retention_reward(counts, user_group, preference, rng: RngStream):
    """Return probability p_r = max(w, floor) and r2 = 1 / d with d ~ Geometric(p_r), d >= 1."""
    w = retention_weight(counts, user_group, preference)
    p_r = np.maximum(w, RETURN_FLOOR)
    d = rng.geometric(p_r)
    return p_r, 1.0 / d


def expected_inverse_return_day(p_r) -> np.ndarray:
    """E[1/d] for d ~ Geometric(p): -p log p / (1 - p), equal to 1 at p = 1."""
    p = np.asarray(p_r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -p * np.log(p) / (1.0 - p)
    return np.where(p >= 1.0, 1.0, out)


class GroupRanker(Policy):
    """Given micro ranker: scores every item with the base scores of the nearest user group."""

    policy_id = "group_ranker"
    beta = 1.0

    def __init__(self, base_scores: np.ndarray, centres: np.ndarray) -> None:
        self.base_scores = base_scores
        self.centres = centres
        self.action_count = base_scores.shape[1]

    def user_group(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d = ((X[:, None, :] - self.centres[None]) ** 2).sum(axis=2)
        return np.argmin(d, axis=1)

    def scores(self, X) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        s = self.base_scores[self.user_group(X)]
        return s[0] if single else s

    def probs(self, X) -> np.ndarray:
        raise NotImplementedError("the ranker selects k items; use RankingEnv.micro_step")


class RankingEnv(MultiScaleEnv):
    name = "ranking"

    def __init__(self, spec: RankEnvSpec = RankEnvSpec()) -> None:
        self.spec = spec
        s = spec
        super().__init__((LevelSpec(1, 1, s.n_items, s.context_dim), LevelSpec(2, s.horizon, s.groups, s.context_dim)))
        build = make_rng(s.construction_seed).spawn("ranking-construction")
        self.base_scores = build.uniform(s.score_low, s.score_high, size=(s.groups, s.n_items))
        self.item_group = np.repeat(np.arange(s.groups), s.items_per_group)
        self.centres = group_means(s.groups, s.context_dim)
        self.ranker = GroupRanker(self.base_scores, self.centres)
        self.boosts = [
            MacroAction(BoostMod(s.boost, tuple(np.flatnonzero(self.item_group == j))), j) for j in range(s.groups)
        ]

    def boost_family(self) -> PolicyFamily:
        return PolicyFamily(self.ranker, tuple(self.boosts), FamilyMode.POLICY_MODIFICATION)

    def no_boost_family(self) -> PolicyFamily:
        return PolicyFamily.explicit([self.ranker], ["no_boost"])

    def given_micro_policy(self):
        return self.ranker

    def group_centres(self, level: int) -> np.ndarray:
        return self.centres

    def sample_users(self, n: int, rng: RngStream) -> Users:
        g = rng.integers(self.spec.groups, size=n)
        X = self.centres[g] + self.spec.sigma_f * rng.standard_normal((n, self.spec.context_dim))
        return Users({1: X, 2: X}, {1: g, 2: g})

    def micro_step(self, users, family, member_index, t, session, rng) -> StepRecord:
        X = users.features[1]
        member_index = np.asarray(member_index, dtype=np.int64)
        boosted = np.zeros((users.n, self.spec.n_items))
        for j in np.unique(member_index):
            mask = member_index == j
            boosted[mask] = family.member(int(j)).scores(X[mask])
        clean = self.ranker.scores(X)
        sel, clicks = rank_step(clean, boosted - clean, self.spec.k, self.spec.sigma_s, rng)
        counts = np.zeros((users.n, self.spec.groups))
        np.add.at(counts, (np.repeat(np.arange(users.n), self.spec.k), self.item_group[sel].reshape(-1)), 1.0)
        rate = clicks.mean(axis=1)
        return StepRecord(rate, {1: rate}, actions=sel, extras={"counts": counts})

    def level_reward(self, level, users, records, actions, family, rng):
        if level != 2:
            raise ValueError(f"no level {level}")
        counts = np.sum([rec.extras["counts"] for rec in records], axis=0)
        _, r2 = retention_reward(counts, users.groups[2], self.spec.preference, rng)
        return r2, None

    def ground_truth(self) -> dict:
        return {
            "base_scores": self.base_scores,
            "item_group": self.item_group.astype(float),
            "preference": self.spec.preference,
            "user_group_means": self.centres,
        }
