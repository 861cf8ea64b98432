"""Comparison policies: uniform, fixed macro action, oracle skyline, and tabular Q-learning,
plus the sample-efficiency comparison between Q-learning and multi-scale learning."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import RngStream, make_rng
from .environments.base import MultiScaleEnv
from .environments.toy import ToyEnv
from .msbl import LevelConfig, collect_logged_data, execute, learn_macro_policy
from .optim import OptimizerConfig
from .policies import FixedPolicy, Policy, UniformPolicy


def uniform_policy(action_count: int) -> UniformPolicy:
    return UniformPolicy(action_count)


def fixed_macro_policy(j: int, action_count: int) -> FixedPolicy:
    if not 0 <= j < action_count:
        raise ValueError(f"macro action {j} outside [0, {action_count})")
    return FixedPolicy(action_count, j, policy_id=f"fixed_{j}")


# --- skyline ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GroupOraclePolicy(Policy):
    """Plays a fixed action per context group; the group is the nearest centre to the features."""

    centres: np.ndarray
    best_actions: np.ndarray
    action_count: int
    policy_id: str = "skyline"

    def group(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.argmin(((X[:, None, :] - self.centres[None]) ** 2).sum(axis=2), axis=1)

    def probs(self, X) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        P = np.zeros((np.atleast_2d(X).shape[0], self.action_count))
        P[np.arange(P.shape[0]), np.asarray(self.best_actions)[self.group(X)]] = 1.0
        return P[0] if single else P


@dataclass
class SkylineResult:
    """Per-group conditional values of every macro action and the best one per group."""

    values: np.ndarray
    best_actions: np.ndarray
    group_weights: np.ndarray
    standard_errors: Optional[np.ndarray] = None

    @property
    def value(self) -> float:
        return float(np.sum(self.group_weights * self.values[np.arange(len(self.best_actions)), self.best_actions]))


def oracle_skyline(
    env: MultiScaleEnv,
    level: int,
    families: Optional[dict] = None,
    budget: int = 0,
    rng: Optional[Union[int, RngStream]] = None,
) -> SkylineResult:
    """Best macro action per context group by exhaustive evaluation; ties go to the lowest index.

    Enumerable levels use the environment's exact tables. Otherwise each action is
    run for the same ``budget`` simulated users and values are averaged per group.
    """
    if env.is_enumerable(level):
        _, weights = env.context_table(level)
        lower = None if families is None else families.get(level - 1)
        V = np.asarray(env.mean_reward_table(level, lower), dtype=float)
        return SkylineResult(V, np.argmax(V, axis=1), np.asarray(weights, dtype=float))
    if level < 2 or budget <= 0 or families is None:
        raise ValueError(f"level {level} of {env.name} is not enumerable; pass families and a Monte Carlo budget")
    rng = make_rng(rng if rng is not None else 0)
    users = env.sample_users(budget, rng.spawn("users"))
    g = users.groups[level]
    G = int(g.max()) + 1
    A = env.level(level).action_count
    V = np.zeros((G, A))
    SE = np.zeros((G, A))
    for j in range(A):
        r, _, _ = execute(env, level, users, np.full(budget, j), families, rng.spawn(f"action{j}"))
        for h in range(G):
            rh = r[g == h]
            V[h, j] = rh.mean()
            SE[h, j] = rh.std(ddof=1) / np.sqrt(len(rh)) if len(rh) > 1 else 0.0
    weights = np.bincount(g, minlength=G) / budget
    return SkylineResult(V, np.argmax(V, axis=1), weights, SE)


def skyline_policy(env: MultiScaleEnv, level: int, result: SkylineResult) -> GroupOraclePolicy:
    return GroupOraclePolicy(env.group_centres(level), result.best_actions, env.level(level).action_count)


# --- tabular Q-learning -------------------------------------------------------------

class EpisodicTask:
    """Finite-horizon task with deterministic dynamics over states (context, t)."""

    context_probs: np.ndarray
    horizon: int
    action_count: int

    def rewards(self, context: int, actions: Sequence[int]) -> np.ndarray:
        raise NotImplementedError


class TabularChain(EpisodicTask):
    """Per-step rewards ``step_rewards[c, t, a]``."""

    def __init__(self, step_rewards, context_probs=None) -> None:
        self.step_rewards = np.asarray(step_rewards, dtype=float)
        C, self.horizon, self.action_count = self.step_rewards.shape
        self.context_probs = np.full(C, 1.0 / C) if context_probs is None else np.asarray(context_probs, float)

    def rewards(self, context, actions) -> np.ndarray:
        return self.step_rewards[context, np.arange(self.horizon), np.asarray(actions)]

    def value_iteration(self, gamma: float = 1.0) -> np.ndarray:
        Q = np.zeros_like(self.step_rewards)
        nxt = np.zeros(Q.shape[0])
        for t in range(self.horizon - 1, -1, -1):
            Q[:, t] = self.step_rewards[:, t] + gamma * nxt[:, None]
            nxt = Q[:, t].max(axis=1)
        return Q


class ToyTask(EpisodicTask):
    """The toy problem with the micro actions (item subsets) chosen directly.

    The long-term reward is the fraction of steps that showed the preferred item.
    ``delivery="per_step"`` pays it as hit_t / T at each step, which sums to the same
    episode return and keeps (context, t) a Markov state; ``"terminal"`` pays it all
    at the last step, where the bootstrapped targets of earlier steps no longer
    depend on the action taken.
    """

    def __init__(self, env: ToyEnv, delivery: str = "per_step") -> None:
        if delivery not in ("per_step", "terminal"):
            raise ValueError("delivery must be 'per_step' or 'terminal'")
        self.env = env
        self.delivery = delivery
        C = env.spec.context_count
        self.context_probs = np.full(C, 1.0 / C)
        self.horizon = env.horizon
        self.action_count = len(env.subsets)
        self.hits = np.array([[p in s for s in env.subsets] for p in env.preferred], dtype=float)

    def rewards(self, context, actions) -> np.ndarray:
        hits = self.hits[context, np.asarray(actions)]
        if self.delivery == "per_step":
            return hits / self.horizon
        r = np.zeros(self.horizon)
        r[-1] = hits.mean()
        return r


@dataclass
class QTable:
    """Q-values over (context, timestep, action) and the settings that produced them."""

    values: np.ndarray
    alpha: float
    gamma: float
    epsilon: tuple
    curve: list = field(default_factory=list)

    def greedy(self) -> np.ndarray:
        """Greedy action per (context, t); ties go to the lowest index."""
        return np.argmax(self.values, axis=2)


def greedy_value(task: EpisodicTask, actions: np.ndarray, gamma: float = 1.0) -> float:
    """Expected return of an open-loop action table ``actions[c, t]``."""
    disc = gamma ** np.arange(task.horizon)
    return float(sum(p * np.dot(disc, task.rewards(c, actions[c])) for c, p in enumerate(task.context_probs)))


def q_learning(
    task: EpisodicTask,
    episodes: int,
    alpha: float = 0.1,
    gamma: float = 1.0,
    epsilon: tuple = (0.1, 0.01),
    rng: Optional[Union[int, RngStream]] = None,
    q_init: Union[float, np.ndarray] = 1.0,
    checkpoint: int = 100,
    target: Optional[float] = None,
) -> QTable:
    """One-step Q-learning with a linearly decaying epsilon-greedy behaviour policy.

    Exploitation breaks ties between maximal Q-values uniformly at random. Every
    ``checkpoint`` episodes the greedy policy is evaluated exactly and appended to
    the curve as ``(episode, value)``; with ``target`` set, learning stops at the
    first checkpoint whose value reaches it. ``q_init`` is a scalar or a full
    (context, t, action) table to continue from.
    """
    rng = make_rng(rng if rng is not None else 0)
    C, T, A = len(task.context_probs), task.horizon, task.action_count
    Q = np.broadcast_to(np.asarray(q_init, dtype=float), (C, T, A)).copy()
    table = QTable(Q, alpha, gamma, tuple(epsilon))
    eps0, eps1 = epsilon
    contexts = rng.choice(C, size=episodes, p=task.context_probs)
    explore = rng.random((episodes, T))
    random_actions = rng.integers(A, size=(episodes, T))
    ties = rng.random((episodes, T))
    for ep in range(episodes):
        eps = eps0 + (eps1 - eps0) * ep / max(episodes - 1, 1)
        c = contexts[ep]
        acts = np.empty(T, dtype=np.int64)
        for t in range(T):
            if explore[ep, t] < eps:
                acts[t] = random_actions[ep, t]
            else:
                best = np.flatnonzero(Q[c, t] == Q[c, t].max())
                acts[t] = best[int(ties[ep, t] * len(best))]
        r = task.rewards(c, acts)
        for t in range(T):
            nxt = gamma * Q[c, t + 1].max() if t < T - 1 else 0.0
            Q[c, t, acts[t]] += alpha * (r[t] + nxt - Q[c, t, acts[t]])
        if (ep + 1) % checkpoint == 0:
            v = greedy_value(task, table.greedy(), gamma)
            table.curve.append((ep + 1, v))
            if target is not None and v >= target - 1e-12:
                break
    return table


def episodes_to_target(curve: Sequence[tuple], target: float) -> float:
    """First checkpoint episode whose value reaches ``target``; inf if never (censored)."""
    for episode, value in curve:
        if value >= target - 1e-12:
            return float(episode)
    return float("inf")


# --- sample efficiency ------------------------------------------------------------------

DEFAULT_GRID = (2, 4, 6, 8, 10, 12, 16, 20, 24, 32, 40, 48, 64, 80, 96, 128, 160, 192, 256, 320, 384, 512, 640, 768, 1024)
TOY_MACRO_CONFIG = LevelConfig(
    n_samples=0, hidden_dims=(16,), beta=1.0, opt=OptimizerConfig(learning_rate=0.01, batch_size=1024, epochs=300)
)


def msbl_toy_curve(
    env: ToyEnv,
    rng: Union[int, RngStream],
    grid: Sequence[int] = DEFAULT_GRID,
    cfg: LevelConfig = TOY_MACRO_CONFIG,
    target: Optional[float] = None,
) -> list:
    """Greedy expected long-term reward of the macro policy learned from the first n
    logged macro samples, for each n in ``grid``: a list of (n, value)."""
    rng = make_rng(rng)
    family = env.boost_family()
    A = len(family)
    D = collect_logged_data(env, 2, UniformPolicy(A), max(grid), rng.spawn("collect-L2"), {1: family})
    V = env.macro_value_table(family)
    X = np.eye(env.spec.context_count)
    curve = []
    for n in grid:
        pi = learn_macro_policy(D.take(slice(0, n)), A, cfg, rng.spawn(f"train-L2-n{n}"))
        best = np.argmax(pi.probs(X), axis=1)
        value = float(np.mean(V[np.arange(len(best)), best]))
        curve.append((n, value))
        if target is not None and value >= target - 1e-12:
            break
    return curve


@dataclass
class SampleEfficiency:
    k: int
    target: float
    n0: np.ndarray
    n_l2: np.ndarray
    q_curves: list
    msbl_curves: list

    @property
    def median_n0(self) -> float:
        return float(np.median(self.n0))

    @property
    def median_n_l2(self) -> float:
        return float(np.median(self.n_l2))

    @property
    def censored(self) -> bool:
        return not (np.isfinite(self.median_n0) and np.isfinite(self.median_n_l2))

    @property
    def ratio(self) -> float:
        return float("nan") if self.censored else self.median_n0 / self.median_n_l2


def sample_efficiency_ratio(
    env: ToyEnv,
    target_value: Optional[float] = None,
    seeds: Sequence[int] = (1, 2, 3, 4, 5),
    q_episodes: int = 60000,
    q_kwargs: Optional[dict] = None,
    grid: Sequence[int] = DEFAULT_GRID,
    cfg: LevelConfig = TOY_MACRO_CONFIG,
) -> SampleEfficiency:
    """Median Q-learning episodes and median macro samples to reach ``target_value``.

    With no target, the target is the median over seeds of Q-learning's final greedy
    value (its asymptotic value within the episode cap). Seeds that never reach the
    target count as infinitely many samples.
    """
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    task = ToyTask(env)
    q_kwargs = dict(q_kwargs or {})
    tables = [
        q_learning(task, q_episodes, rng=make_rng(s).spawn("q-learning"), target=None, **q_kwargs) for s in seeds
    ]
    if target_value is None:
        target_value = float(np.median([t.curve[-1][1] for t in tables]))
    n0 = np.array([episodes_to_target(t.curve, target_value) for t in tables])
    curves = [msbl_toy_curve(env, make_rng(s).spawn("msbl"), grid, cfg, target_value) for s in seeds]
    n_l2 = np.array([episodes_to_target(c, target_value) for c in curves])
    return SampleEfficiency(env.k, target_value, n0, n_l2, [t.curve for t in tables], curves)
