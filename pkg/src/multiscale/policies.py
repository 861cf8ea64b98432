"""Softmax bandit policies, policy modifications, and families of micro policies."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import RngStream
from .optim import NetworkSpec, forward

TAU_MIN = 1e-3


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite scores")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _greedy(scores: np.ndarray) -> np.ndarray:
    """One-hot argmax; ``np.argmax`` already breaks ties toward the lowest index."""
    out = np.zeros_like(scores)
    idx = np.argmax(scores, axis=-1)
    np.put_along_axis(out, np.expand_dims(idx, -1), 1.0, axis=-1)
    return out


# --- macro actions ----------------------------------------------------------

@dataclass(frozen=True)
class TemperatureMod:
    tau: float

    def __post_init__(self) -> None:
        if not self.tau >= 0:
            raise ValueError(f"temperature must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class BoostMod:
    """Add ``delta * scale[a]`` to the score of every action ``a`` in ``target_set``.

    ``scale`` defaults to 1 for every target; a per-target scale lets one boost
    magnitude move different targets at different rates.
    """

    delta: float
    target_set: tuple
    scale: Optional[tuple] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_set", tuple(int(a) for a in self.target_set))
        if not self.target_set:
            raise ValueError("BoostMod target_set must be non-empty")
        if self.scale is not None:
            object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
            if len(self.scale) != len(self.target_set):
                raise ValueError("scale must have one entry per target")

    def offsets(self, action_count: int) -> np.ndarray:
        out = np.zeros(action_count)
        targets = np.asarray(self.target_set)
        if targets.max() >= action_count or targets.min() < 0:
            raise ValueError("boost target outside the action space")
        scale = np.ones(len(targets)) if self.scale is None else np.asarray(self.scale)
        out[targets] += self.delta * scale
        return out


@dataclass(frozen=True)
class FeedbackWeights:
    weights: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not self.weights or any(w < 0 for w in self.weights):
            raise ValueError("feedback weights must be a non-empty vector of non-negative reals")

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


@dataclass(frozen=True)
class MacroAction:
    kind: Union[TemperatureMod, BoostMod, FeedbackWeights]
    index: int

    def __post_init__(self) -> None:
        if not isinstance(self.kind, (TemperatureMod, BoostMod, FeedbackWeights)):
            raise TypeError(f"unknown macro action kind {type(self.kind).__name__}")
        if self.index < 0:
            raise ValueError("macro action index must be >= 0")

    @property
    def is_modification(self) -> bool:
        return isinstance(self.kind, (TemperatureMod, BoostMod))

    def label(self) -> str:
        k = self.kind
        if isinstance(k, TemperatureMod):
            return f"temp={k.tau:g}"
        if isinstance(k, BoostMod):
            return f"boost={k.delta:g}@{'+'.join(map(str, k.target_set))}"
        return "w=" + ",".join(f"{w:g}" for w in k.weights)


def temperature_actions(taus: Sequence[float]) -> list:
    return [MacroAction(TemperatureMod(float(t)), i) for i, t in enumerate(taus)]


def feedback_actions(weight_vectors) -> list:
    return [MacroAction(FeedbackWeights(tuple(w)), i) for i, w in enumerate(weight_vectors)]


# --- policies -----------------------------------------------------------------

class Policy:
    """Anything that maps a batch of features to action probabilities."""

    action_count: int
    policy_id: str = "policy"

    def probs(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy(Policy):
    """pi(a | x) = softmax(beta * phi(x, theta))_a with phi a ReLU network.

    With ``conditional=True`` the network input is the context followed by a
    feedback weight vector.
    """

    network: NetworkSpec
    theta: np.ndarray
    beta: float = 1.0
    conditional: bool = False
    policy_id: str = "softmax"

    def __post_init__(self) -> None:
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.network.n_params,):
            raise ValueError(f"theta must have {self.network.n_params} entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if not self.beta > 0:
            raise ValueError("inverse temperature must be positive")

    @property
    def action_count(self) -> int:
        return self.network.output_dim

    def scores(self, X) -> np.ndarray:
        return forward(self.network, self.theta, X)

    def probs(self, X) -> np.ndarray:
        return softmax(self.beta * self.scores(X))

    def with_theta(self, theta: np.ndarray) -> "SoftmaxPolicy":
        return SoftmaxPolicy(self.network, theta, self.beta, self.conditional, self.policy_id)


@dataclass(frozen=True, eq=False)
class UniformPolicy(Policy):
    action_count: int
    policy_id: str = "uniform"

    def __post_init__(self) -> None:
        if self.action_count < 1:
            raise ValueError("action_count must be >= 1")

    def probs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n = 1 if X.ndim <= 1 else X.shape[0]
        P = np.full((n, self.action_count), 1.0 / self.action_count)
        return P[0] if X.ndim == 1 else P


@dataclass(frozen=True, eq=False)
class FixedPolicy(Policy):
    """Always plays ``action``."""

    action_count: int
    action: int
    policy_id: str = "fixed"

    def __post_init__(self) -> None:
        if not 0 <= self.action < self.action_count:
            raise ValueError(f"action {self.action} outside [0, {self.action_count})")

    def probs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n = 1 if X.ndim <= 1 else X.shape[0]
        P = np.zeros((n, self.action_count))
        P[:, self.action] = 1.0
        return P[0] if X.ndim == 1 else P


@dataclass(frozen=True, eq=False)
class ModifiedPolicy(Policy):
    """A score-based policy transformed by a temperature or boost modification."""

    base: Policy
    modification: Union[TemperatureMod, BoostMod]

    @property
    def action_count(self) -> int:
        return self.base.action_count

    @property
    def beta(self) -> float:
        return self.base.beta

    @property
    def policy_id(self) -> str:
        return f"{self.base.policy_id}|{MacroAction(self.modification, 0).label()}"

    @property
    def decode_temperature(self) -> float:
        if isinstance(self.modification, TemperatureMod):
            return self.modification.tau
        return getattr(self.base, "decode_temperature", 1.0)

    def scores(self, X) -> np.ndarray:
        s = self.base.scores(X)
        m = self.modification
        if isinstance(m, TemperatureMod):
            return s / max(m.tau, TAU_MIN)
        return s + m.offsets(self.action_count)

    def probs(self, X) -> np.ndarray:
        m = self.modification
        if isinstance(m, TemperatureMod) and m.tau == 0:
            return _greedy(self.base.scores(X))
        return softmax(self.beta * self.scores(X))


@dataclass(frozen=True, eq=False)
class ConditionedPolicy(Policy):
    """A conditional softmax policy with its weight input pinned to ``weights``."""

    base: SoftmaxPolicy
    weights: FeedbackWeights

    def __post_init__(self) -> None:
        if not self.base.conditional:
            raise ValueError("base policy is not conditional")
        expected = self.base.network.input_dim
        if len(self.weights.weights) >= expected:
            raise ValueError("weight vector leaves no room for context features")

    @property
    def action_count(self) -> int:
        return self.base.action_count

    @property
    def policy_id(self) -> str:
        return f"{self.base.policy_id}|{MacroAction(self.weights, 0).label()}"

    @property
    def feedback_weights(self) -> np.ndarray:
        return self.weights.vector

    def _inputs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X.reshape(1, -1) if single else X
        w = np.broadcast_to(self.weights.vector, (X2.shape[0], len(self.weights.weights)))
        Z = np.concatenate([X2, w], axis=1)
        return Z[0] if single else Z

    def scores(self, X) -> np.ndarray:
        return self.base.scores(self._inputs(X))

    @property
    def beta(self) -> float:
        return self.base.beta

    def probs(self, X) -> np.ndarray:
        return self.base.probs(self._inputs(X))


def with_objective(policy: Policy, weights) -> Policy:
    """Tag a policy with the feedback weights it was trained to maximize."""
    return _TaggedPolicy(policy, np.asarray(weights, dtype=float))


@dataclass(frozen=True, eq=False)
class _TaggedPolicy(Policy):
    inner: Policy
    feedback_weights: np.ndarray

    @property
    def action_count(self) -> int:
        return self.inner.action_count

    @property
    def policy_id(self) -> str:
        return self.inner.policy_id

    def probs(self, X) -> np.ndarray:
        return self.inner.probs(X)


# --- families -------------------------------------------------------------------

class FamilyMode(enum.Enum):
    POLICY_MODIFICATION = "policy_modification"
    FEEDBACK_MODIFICATION = "feedback_modification"
    EXPLICIT = "explicit"


@dataclass(frozen=True, eq=False)
class PolicyFamily:
    """A finite family of lower-level policies indexed by macro actions.

    ``EXPLICIT`` families hold ready-made members (used for baselines whose
    members are not derived from one base policy).
    """

    base: Optional[Policy]
    macro_actions: tuple
    mode: FamilyMode
    members: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "macro_actions", tuple(self.macro_actions))
        object.__setattr__(self, "members", tuple(self.members))
        if self.mode is FamilyMode.EXPLICIT:
            if not self.members:
                raise ValueError("explicit family needs members")
            return
        if not self.macro_actions:
            raise ValueError("family needs at least one macro action")
        for j, m in enumerate(self.macro_actions):
            if m.index != j:
                raise ValueError(f"macro action at position {j} has index {m.index}")
        if self.mode is FamilyMode.FEEDBACK_MODIFICATION:
            if not getattr(self.base, "conditional", False):
                raise ValueError("feedback-modification family needs a conditional base policy")
            if any(not isinstance(m.kind, FeedbackWeights) for m in self.macro_actions):
                raise ValueError("feedback-modification family takes FeedbackWeights actions")
        elif any(not m.is_modification for m in self.macro_actions):
            raise ValueError("policy-modification family takes TemperatureMod/BoostMod actions")
        members = tuple(self._build(m) for m in self.macro_actions)
        object.__setattr__(self, "members", members)

    def _build(self, m: MacroAction) -> Policy:
        if self.mode is FamilyMode.FEEDBACK_MODIFICATION:
            return ConditionedPolicy(self.base, m.kind)
        return apply_policy_modification(self.base, m)

    @classmethod
    def explicit(cls, members: Sequence[Policy], labels: Optional[Sequence[str]] = None) -> "PolicyFamily":
        return cls(base=None, macro_actions=tuple(labels or ()), mode=FamilyMode.EXPLICIT, members=tuple(members))

    def __len__(self) -> int:
        return len(self.members)

    def member(self, j: int) -> Policy:
        return self.members[j]

    @property
    def action_count(self) -> int:
        return self.members[0].action_count


# --- operations -------------------------------------------------------------

def action_distribution(policy: Policy, features) -> np.ndarray:
    P = np.asarray(policy.probs(features), dtype=float)
    if not np.all(np.isfinite(P)):
        raise ValueError("policy produced non-finite probabilities")
    return P


def sample_actions(policy: Policy, X, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Draw one action per row of ``X`` by inverse CDF; returns (actions, propensities)."""
    P = np.atleast_2d(action_distribution(policy, X))
    u = rng.random(P.shape[0])
    cdf = np.cumsum(P, axis=1)
    a = (cdf <= u[:, None]).sum(axis=1)
    # rounding can leave cdf[-1] slightly below u; fall back to the last supported action
    last = P.shape[1] - 1 - np.argmax(P[:, ::-1] > 0, axis=1)
    a = np.minimum(a, last)
    return a, P[np.arange(P.shape[0]), a]


def sample_action(policy: Policy, features, rng: RngStream) -> tuple[int, float]:
    a, p = sample_actions(policy, np.asarray(features, dtype=float).reshape(1, -1), rng)
    return int(a[0]), float(p[0])


def apply_policy_modification(base: Policy, m: Union[MacroAction, TemperatureMod, BoostMod]) -> ModifiedPolicy:
    kind = m.kind if isinstance(m, MacroAction) else m
    if isinstance(kind, FeedbackWeights):
        raise TypeError("feedback weights are not a policy modification")
    if isinstance(kind, TemperatureMod) and kind.tau < 0:
        raise ValueError("negative temperature")
    if not hasattr(base, "scores"):
        raise TypeError("policy modification needs a score-based policy")
    return ModifiedPolicy(base, kind)


def conditional_distribution(family: PolicyFamily, features, m: Union[MacroAction, FeedbackWeights]) -> np.ndarray:
    if family.mode is not FamilyMode.FEEDBACK_MODIFICATION:
        raise ValueError("conditional_distribution needs a feedback-modification family")
    kind = m.kind if isinstance(m, MacroAction) else m
    if not isinstance(kind, FeedbackWeights):
        raise TypeError("expected feedback weights")
    features = np.asarray(features, dtype=float)
    expected = family.base.network.input_dim - features.shape[-1]
    if len(kind.weights) != expected:
        raise ValueError(f"weight vector has length {len(kind.weights)}, family expects {expected}")
    return action_distribution(ConditionedPolicy(family.base, kind), features)


def entropy(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, -P * np.log(P), 0.0)
    return terms.sum(axis=-1)


# --- serialization --------------------------------------------------------------

def save_policy(policy: SoftmaxPolicy, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"{policy.action_count},{format(policy.beta, '.17g')},{int(policy.conditional)},{policy.network.describe()},{policy.policy_id}"
    body = ",".join(format(float(v), ".17g") for v in policy.theta)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(header + "\n" + body + "\n", encoding="utf-8")
    tmp.replace(path)


def load_policy(path: Union[str, Path]) -> SoftmaxPolicy:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    action_count, beta, conditional, arch, policy_id = lines[0].split(",", 4)
    spec = NetworkSpec.parse(arch)
    if spec.output_dim != int(action_count):
        raise ValueError("architecture and action_count disagree")
    theta = np.array([float(v) for v in lines[1].split(",")]) if len(lines) > 1 and lines[1] else np.zeros(0)
    return SoftmaxPolicy(spec, theta, beta=float(beta), conditional=bool(int(conditional)), policy_id=policy_id)
