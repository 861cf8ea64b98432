"""Off-policy value estimators for logged bandit data."""
from __future__ import annotations

from abc import ABCMeta, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PROPENSITY_FLOOR, LoggedDataset, RngStream
from .optim import backward
from .policies import Policy, SoftmaxPolicy, action_distribution, softmax

__all__ = [
    "ValueEstimate",
    "tree_sum",
    "softmax",
    "ips_value",
    "clipped_ips_value",
    "ips_gradient",
    "ips_logit_gradient",
    "brute_force_value",
    "BaseOffPolicyEstimator",
    "InverseProbabilityWeighting",
    "ClippedInverseProbabilityWeighting",
    "DirectMethod",
    "DoublyRobust",
    "get_estimator",
]

DEFAULT_CLIP = 100.0


def tree_sum(x: np.ndarray) -> float:
    """Sum with a fixed pairwise reduction tree, so the result depends only on the values and their order."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size == 0:
        return 0.0
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0])


@dataclass(frozen=True)
class ValueEstimate:
    """Point estimate with the standard error of the mean of its per-example terms."""

    value: float
    standard_error: float
    n: int
    estimator_id: str
    clip_level: Optional[float] = None

    @classmethod
    def from_terms(cls, terms: np.ndarray, estimator_id: str, clip_level: Optional[float] = None) -> "ValueEstimate":
        terms = np.asarray(terms, dtype=float)
        n = terms.size
        value = tree_sum(terms) / n
        se = float(np.std(terms, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(value, se, n, estimator_id, clip_level)


def _check(policy: Policy, D: LoggedDataset) -> None:
    if D.n == 0:
        raise ValueError("empty dataset")
    if policy.action_count != D.action_count:
        raise ValueError(f"policy has {policy.action_count} actions, data has {D.action_count}")
    if np.any(D.propensities < PROPENSITY_FLOOR):
        raise ValueError(f"propensity below floor {PROPENSITY_FLOOR}")


def _ratios(policy: Policy, D: LoggedDataset) -> np.ndarray:
    P = np.atleast_2d(action_distribution(policy, D.contexts))
    return P[np.arange(D.n), D.actions] / D.propensities


def ips_value(policy: Policy, D: LoggedDataset) -> ValueEstimate:
    """IPS estimate (1/n) sum_i pi(a_i|x_i)/p_i * r_i.

    Parameters
    ----------
    policy: Policy
        Evaluation policy over the dataset's action space.

    D: LoggedDataset
        Logged data with full-support propensities.

    Returns
    -------
    estimate: ValueEstimate
    """
    _check(policy, D)
    return ValueEstimate.from_terms(_ratios(policy, D) * D.rewards, "ips")


def clipped_ips_value(policy: Policy, D: LoggedDataset, M: float = DEFAULT_CLIP) -> ValueEstimate:
    """IPS with importance weights clipped at ``M``; ``M = inf`` disables clipping.

    Parameters
    ----------
    policy: Policy
        Evaluation policy.

    D: LoggedDataset
        Logged data.

    M: float, default=100
        Clip level, must be positive.

    Returns
    -------
    estimate: ValueEstimate
    """
    if not M > 0:
        raise ValueError(f"clip level must be positive, got {M}")
    _check(policy, D)
    w = np.minimum(_ratios(policy, D), M)
    return ValueEstimate.from_terms(w * D.rewards, "clipped_ips", clip_level=float(M))


def ips_logit_gradient(P: np.ndarray, actions: np.ndarray, w: np.ndarray, beta: float) -> np.ndarray:
    """d/d(logits) of sum_i w_i-weighted log pi(a_i): beta * w_i * (onehot(a_i) - pi_i).

    With ``w_i = pi(a_i|x_i)/p_i * r_i`` this is the per-example gradient of the IPS
    objective through the score identity.
    """
    G = -P * w[:, None]
    G[np.arange(len(actions)), actions] += w
    return beta * G


def ips_gradient(policy: SoftmaxPolicy, D: LoggedDataset) -> np.ndarray:
    """Gradient of the IPS value w.r.t. the policy parameters.

    Parameters
    ----------
    policy: SoftmaxPolicy
        Differentiable policy; its network parameters define the gradient layout.

    D: LoggedDataset
        Logged data.

    Returns
    -------
    grad: array of shape (n_params,)
        (1/n) sum_i [pi(a_i|x_i)/p_i] r_i grad log pi(a_i|x_i).
    """
    _check(policy, D)
    logits = policy.scores(D.contexts)
    P = softmax(policy.beta * logits)
    w = P[np.arange(D.n), D.actions] / D.propensities * D.rewards
    upstream = ips_logit_gradient(P, D.actions, w, policy.beta)
    return backward(policy.network, policy.theta, D.contexts, upstream) / D.n


def brute_force_value(
    policy: Policy,
    env,
    level: int = 1,
    lower=None,
    budget: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> ValueEstimate:
    """Expected reward of ``policy`` at ``level``, exactly when the env is enumerable.

    Enumerable envs expose ``context_table(level)`` and ``mean_reward_table(level, lower)``.
    Otherwise a Monte Carlo estimate over ``budget`` simulated contexts is returned.
    ``lower`` is the family of lower-level policies the level's actions index.
    """
    if hasattr(env, "is_enumerable") and env.is_enumerable(level):
        features, weights = env.context_table(level)
        R = env.mean_reward_table(level, lower)
        P = np.atleast_2d(action_distribution(policy, features))
        value = float(np.sum(weights * np.sum(P * R, axis=1)))
        return ValueEstimate(value, 0.0, len(weights), "enumeration")
    if budget is None or rng is None:
        raise ValueError(f"level {level} is not enumerable; pass a Monte Carlo budget and rng")
    rewards = env.simulate_rewards(level, policy, lower, budget, rng)
    return ValueEstimate.from_terms(rewards, "monte_carlo")


# --- estimator interface ---------------------------------------------------------

@dataclass
class BaseOffPolicyEstimator(metaclass=ABCMeta):
    """Interface shared by off-policy estimators."""

    estimator_name: str = "base"

    @abstractmethod
    def estimate_policy_value(self, policy: Policy, D: LoggedDataset) -> ValueEstimate:
        raise NotImplementedError


@dataclass
class InverseProbabilityWeighting(BaseOffPolicyEstimator):
    estimator_name: str = "ips"

    def estimate_policy_value(self, policy: Policy, D: LoggedDataset) -> ValueEstimate:
        return ips_value(policy, D)


@dataclass
class ClippedInverseProbabilityWeighting(BaseOffPolicyEstimator):
    estimator_name: str = "clipped_ips"
    clip_level: float = DEFAULT_CLIP

    def estimate_policy_value(self, policy: Policy, D: LoggedDataset) -> ValueEstimate:
        return clipped_ips_value(policy, D, self.clip_level)


@dataclass
class DirectMethod(BaseOffPolicyEstimator):
    """Reward-regression estimator. Interface only: no regression model ships with the package."""

    estimator_name: str = "dm"

    def estimate_policy_value(self, policy: Policy, D: LoggedDataset) -> ValueEstimate:
        raise NotImplementedError("the direct method is an extension point; plug in a reward model")


@dataclass
class DoublyRobust(BaseOffPolicyEstimator):
    """Regression plus IPS correction. Interface only."""

    estimator_name: str = "dr"

    def estimate_policy_value(self, policy: Policy, D: LoggedDataset) -> ValueEstimate:
        raise NotImplementedError("the doubly robust estimator is an extension point; plug in a reward model")


_REGISTRY = {
    "ips": InverseProbabilityWeighting,
    "clipped_ips": ClippedInverseProbabilityWeighting,
    "dm": DirectMethod,
    "dr": DoublyRobust,
}


def get_estimator(name: str, **kwargs) -> BaseOffPolicyEstimator:
    try:
        return _REGISTRY[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(_REGISTRY)}") from None
