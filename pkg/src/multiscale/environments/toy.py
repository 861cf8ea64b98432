"""Toy k-of-n selection problem where myopic relevance ranking misses a long-term preference.

Each of two contexts has a preferred item that sits just outside the unboosted
top-k. A macro action adds a boost to the relevance vector: preferred items get
slope 1, a block of "competitor" items gets slope 2. Small boosts leave the
preferred item below a gatekeeper item; large boosts let the competitors
overtake it again. The per-step windows are placed so that exactly one of the
eight boost magnitudes keeps the preferred item in the top-k at every step.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import LevelSpec, RngStream
from ..policies import BoostMod, MacroAction, PolicyFamily, FamilyMode, Policy
from .base import MultiScaleEnv, StepRecord, Users

GRID_STEP = 0.1
HALF = GRID_STEP / 2
COMPETITOR_SLOPE = 2.0

# per-context best boost level and per-step slack below/above it (in grid steps)
DEFAULT_BEST_LEVEL = (2, 4)
DEFAULT_SLACK_BELOW = ((0, 1, 1, 2, 0), (1, 0, 2, 1, 1))
DEFAULT_SLACK_ABOVE = ((1, 0, 2, 1, 1), (0, 1, 1, 2, 0))


@dataclass(frozen=True)
class ToyEnvSpec:
    n_items: int = 10
    context_count: int = 2
    k: int = 2
    horizon: int = 5
    boost_levels: tuple = tuple(np.round(np.linspace(0.0, 0.7, 8), 10))
    best_level: tuple = DEFAULT_BEST_LEVEL
    slack_below: tuple = DEFAULT_SLACK_BELOW
    slack_above: tuple = DEFAULT_SLACK_ABOVE

    def __post_init__(self) -> None:
        if self.n_items != 10 or self.context_count != 2:
            raise ValueError("the construction is defined for 10 items and 2 contexts")
        if not 1 <= self.k <= self.n_items - 3:
            raise ValueError(f"k must be in [1, {self.n_items - 3}]")
        if len(self.boost_levels) != 8:
            raise ValueError("boost set must have 8 magnitudes")


def build_tables(spec: ToyEnvSpec):
    """Relevance tables r[c, t, item], preferred items, and the boost scale vector."""
    k, T, n = spec.k, spec.horizon, spec.n_items
    competitors = list(range(k))  # slope-2 block
    preferred = (n - 2, n - 1)
    fillers = list(range(k, n - 2))  # slope 0
    scale = np.zeros(n)
    scale[competitors] = COMPETITOR_SLOPE
    scale[list(preferred)] = 1.0
    levels = np.asarray(spec.boost_levels)
    rel = np.zeros((spec.context_count, T, n))
    for c in range(spec.context_count):
        p, other = preferred[c], preferred[1 - c]
        for t in range(T):
            lo = levels[spec.best_level[c] - spec.slack_below[c][t]]
            hi_idx = spec.best_level[c] + spec.slack_above[c][t]
            hi = levels[hi_idx]
            # preferred relevance must leave room for a gatekeeper above and the k-th competitor below
            upper = 1.0 + HALF - lo - 0.02
            lower = hi + HALF + 0.02
            if lower > upper:
                raise ValueError(f"window for context {c}, step {t} is infeasible")
            r_p = 0.5 * (lower + upper)
            row = np.zeros(n)
            row[p] = r_p
            row[other] = r_p - 0.015
            # k-1 competitors always above the preferred item
            for i, item in enumerate(competitors[:-1]):
                row[item] = r_p + (1.0 - r_p) * (i + 1) / k
            # the last competitor overtakes once the boost exceeds hi
            gap = hi + HALF if hi_idx < len(levels) - 1 else levels[-1] + HALF
            row[competitors[-1]] = r_p - gap
            below = np.linspace(0.3, 0.8, len(fillers)) * r_p if fillers else []
            for item, v in zip(fillers, below):
                row[item] = v
            if lo > 0:
                # gatekeeper: passed by the preferred item once the boost reaches lo
                row[fillers[0]] = r_p + lo - HALF
            rel[c, t] = row
    return rel, preferred, scale


def toy_long_term_reward(trajectory: Sequence[Sequence[int]], preferred_item: int, horizon: int = 5) -> float:
    """Fraction of steps whose selection contains the preferred item."""
    if len(trajectory) != horizon:
        raise ValueError(f"trajectory has {len(trajectory)} steps, expected {horizon}")
    return float(np.mean([preferred_item in set(sel) for sel in trajectory]))


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the lower index."""
    order = np.argsort(-np.asarray(scores), axis=-1, kind="stable")
    return np.sort(order[..., :k], axis=-1)


class ToyRelevancePolicy(Policy):
    """Myopic micro policy: pick the top-k items by (boosted) relevance."""

    policy_id = "relevance_argmax"

    def __init__(self, env: "ToyEnv") -> None:
        self.env = env
        self.action_count = len(env.subsets)
        self.beta = 1.0

    def scores(self, X):
        raise NotImplementedError("selections depend on the step; use ToyEnv.toy_micro_policy")


class ToyEnv(MultiScaleEnv):
    name = "toy"

    def __init__(self, spec: ToyEnvSpec = ToyEnvSpec()) -> None:
        self.spec = spec
        self.relevance, self.preferred, self.scale = build_tables(spec)
        self.subsets = list(itertools.combinations(range(spec.n_items), spec.k))
        self._subset_index = {s: i for i, s in enumerate(self.subsets)}
        targets = np.flatnonzero(self.scale)
        self.boosts = [
            MacroAction(BoostMod(float(d), tuple(targets), tuple(self.scale[targets])), j)
            for j, d in enumerate(spec.boost_levels)
        ]
        d = spec.context_count
        super().__init__((LevelSpec(1, 1, len(self.subsets), d), LevelSpec(2, spec.horizon, len(self.boosts), d)))
        self.micro_policy = ToyRelevancePolicy(self)

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    # --- micro policy ------------------------------------------------------------
    def toy_micro_policy(self, context: int, boost, t: int = 0) -> tuple:
        """Top-k items by relevance plus the boost offsets, at step ``t``."""
        kind = boost.kind if isinstance(boost, MacroAction) else boost
        offsets = np.zeros(self.spec.n_items) if kind is None else kind.offsets(self.spec.n_items)
        return tuple(int(i) for i in top_k(self.relevance[context, t] + offsets, self.k))

    def subset_index(self, items) -> int:
        return self._subset_index[tuple(sorted(int(i) for i in items))]

    def boost_family(self) -> PolicyFamily:
        return PolicyFamily(self.micro_policy, tuple(self.boosts), FamilyMode.POLICY_MODIFICATION)

    def given_micro_policy(self):
        return self.micro_policy

    def macro_value_table(self, family: Optional[PolicyFamily] = None) -> np.ndarray:
        """Exact long-term reward for every (context, boost) pair."""
        actions = self.boosts if family is None else family.macro_actions
        V = np.zeros((self.spec.context_count, len(actions)))
        for c in range(self.spec.context_count):
            for j, m in enumerate(actions):
                traj = [self.toy_micro_policy(c, m, t) for t in range(self.horizon)]
                V[c, j] = toy_long_term_reward(traj, self.preferred[c], self.horizon)
        return V

    # --- multi-level interface ------------------------------------------------------
    def sample_users(self, n: int, rng: RngStream) -> Users:
        c = rng.integers(self.spec.context_count, size=n)
        X = np.eye(self.spec.context_count)[c]
        return Users({1: X, 2: X}, {1: c, 2: c})

    def micro_step(self, users, family, member_index, t, session, rng) -> StepRecord:
        c = users.groups[1]
        offsets = np.stack([m.kind.offsets(self.spec.n_items) for m in family.macro_actions])
        scores = self.relevance[c, t] + offsets[member_index]
        sel = top_k(scores, self.k)
        hit = np.any(sel == np.asarray(self.preferred)[c][:, None], axis=1)
        relevance = np.take_along_axis(self.relevance[c, t], sel, axis=1).mean(axis=1)
        actions = np.array([self._subset_index[tuple(s)] for s in sel.tolist()])
        return StepRecord(relevance, {1: relevance}, actions=actions, extras={"hit": hit})

    def level_reward(self, level, users, records, actions, family, rng):
        return np.mean([rec.extras["hit"] for rec in records], axis=0).astype(float), None

    def group_centres(self, level: int) -> np.ndarray:
        return np.eye(self.spec.context_count)

    def is_enumerable(self, level: int) -> bool:
        return level == 2

    def context_table(self, level: int):
        C = self.spec.context_count
        return np.eye(C), np.full(C, 1.0 / C)

    def mean_reward_table(self, level: int, lower: Optional[PolicyFamily] = None) -> np.ndarray:
        if level != 2:
            raise ValueError("only the macro level is enumerable")
        return self.macro_value_table(lower)

    def ground_truth(self) -> dict:
        return {
            "relevance": self.relevance.reshape(-1, self.spec.n_items),
            "preferred": np.asarray(self.preferred, dtype=float),
            "boost_scale": self.scale,
            "boost_levels": np.asarray(self.spec.boost_levels),
        }
