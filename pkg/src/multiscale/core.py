"""Shared data model: level layout, logged bandit data, and seeded random streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

PROPENSITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LevelSpec:
    """Shape of one level of a multi-level problem.

    ``timescale_ratio`` counts how many level-(k-1) steps make up one step at
    this level; it is 1 for the lowest level.
    """

    level_index: int
    timescale_ratio: int
    action_count: int
    context_dim: int

    def __post_init__(self) -> None:
        if self.level_index < 1:
            raise ValueError(f"level_index must be >= 1, got {self.level_index}")
        if self.timescale_ratio < 1:
            raise ValueError("timescale_ratio must be >= 1")
        if self.level_index == 1 and self.timescale_ratio != 1:
            raise ValueError("the lowest level has timescale_ratio 1")
        if self.action_count < 1:
            raise ValueError("action_count must be >= 1")
        if self.context_dim < 0:
            raise ValueError("context_dim must be >= 0")


def check_level_stack(levels: Sequence[LevelSpec]) -> None:
    """Raise if level indices are not consecutive from 1."""
    for expected, spec in enumerate(levels, start=1):
        if spec.level_index != expected:
            raise ValueError(
                f"level indices must be consecutive from 1; position {expected} has {spec.level_index}"
            )


@dataclass(frozen=True)
class ContextSample:
    """A single context. ``group_id`` is simulator ground truth and never fed to policies."""

    level_index: int
    features: np.ndarray
    group_id: Optional[int] = None


@dataclass(frozen=True)
class LoggedInteraction:
    context: ContextSample
    action_index: int
    reward: float
    propensity: float
    reward_components: tuple = ()


@dataclass
class LoggedDataset:
    """Column-oriented store of logged ``(x, a, r, p)`` tuples for one level.

    Parameters
    ----------
    level_index: int
        Level the interactions were logged at.

    contexts: array-like, shape (n, context_dim)
        Context features.

    actions: array-like, shape (n,)
        Logged action indices.

    rewards: array-like, shape (n,)
        Observed scalar rewards.

    propensities: array-like, shape (n,)
        Logging-policy probability of each logged action.

    action_count: int
        Size of the action space at this level.

    logging_policy_id: str
        Identifier of the logging policy.

    reward_components: array-like, shape (n, m), optional
        Vector feedback, present only when a family is built by reweighting feedback.
    """

    level_index: int
    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    action_count: int
    logging_policy_id: str = "uniform"
    reward_components: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.contexts = np.asarray(self.contexts, dtype=float)
        if self.contexts.ndim == 1:
            self.contexts = self.contexts.reshape(-1, 1)
        n = self.contexts.shape[0]
        self.actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.propensities = np.asarray(self.propensities, dtype=float).reshape(-1)
        if self.reward_components is not None:
            rc = np.asarray(self.reward_components, dtype=float)
            if rc.ndim == 1:
                rc = rc.reshape(-1, 1)
            self.reward_components = rc if rc.shape[1] > 0 else None
        for name in ("actions", "rewards", "propensities"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, contexts has {n}")
        if self.reward_components is not None and self.reward_components.shape[0] != n:
            raise ValueError("reward_components row count differs from contexts")
        if self.action_count < 1:
            raise ValueError("action_count must be >= 1")

    @property
    def n(self) -> int:
        return int(self.actions.shape[0])

    @property
    def context_dim(self) -> int:
        return int(self.contexts.shape[1])

    @property
    def component_dim(self) -> int:
        return 0 if self.reward_components is None else int(self.reward_components.shape[1])

    def __len__(self) -> int:
        return self.n

    @property
    def interactions(self) -> Iterator[LoggedInteraction]:
        for i in range(self.n):
            rc = () if self.reward_components is None else tuple(self.reward_components[i])
            yield LoggedInteraction(
                context=ContextSample(self.level_index, self.contexts[i]),
                action_index=int(self.actions[i]),
                reward=float(self.rewards[i]),
                propensity=float(self.propensities[i]),
                reward_components=rc,
            )

    def take(self, index: Union[slice, np.ndarray]) -> "LoggedDataset":
        """Row subset, e.g. ``D.take(slice(0, 100))`` for the first 100 samples."""
        rc = None if self.reward_components is None else self.reward_components[index]
        return LoggedDataset(
            level_index=self.level_index,
            contexts=self.contexts[index],
            actions=self.actions[index],
            rewards=self.rewards[index],
            propensities=self.propensities[index],
            action_count=self.action_count,
            logging_policy_id=self.logging_policy_id,
            reward_components=rc,
        )

    @classmethod
    def from_interactions(
        cls,
        interactions: Iterable[LoggedInteraction],
        action_count: int,
        logging_policy_id: str = "uniform",
        level_index: Optional[int] = None,
        context_dim: Optional[int] = None,
    ) -> "LoggedDataset":
        rows = list(interactions)
        if not rows and (level_index is None or context_dim is None):
            raise ValueError("empty interaction list needs explicit level_index and context_dim")
        levels = {r.context.level_index for r in rows}
        if len(levels) > 1:
            raise ValueError(f"interactions span several levels: {sorted(levels)}")
        level = level_index if level_index is not None else levels.pop()
        dim = context_dim if context_dim is not None else len(rows[0].context.features)
        comps = [r.reward_components for r in rows]
        has_rc = bool(rows) and len(comps[0]) > 0
        return cls(
            level_index=level,
            contexts=np.array([r.context.features for r in rows], dtype=float).reshape(len(rows), dim),
            actions=np.array([r.action_index for r in rows], dtype=np.int64),
            rewards=np.array([r.reward for r in rows], dtype=float),
            propensities=np.array([r.propensity for r in rows], dtype=float),
            action_count=action_count,
            logging_policy_id=logging_policy_id,
            reward_components=np.array(comps, dtype=float) if has_rc else None,
        )

    def equals(self, other: "LoggedDataset") -> bool:
        same_rc = (self.reward_components is None) == (other.reward_components is None)
        if same_rc and self.reward_components is not None:
            same_rc = np.array_equal(self.reward_components, other.reward_components)
        return (
            self.level_index == other.level_index
            and self.action_count == other.action_count
            and self.logging_policy_id == other.logging_policy_id
            and np.array_equal(self.contexts, other.contexts)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.propensities, other.propensities)
            and same_rc
        )


# --- random streams -------------------------------------------------------

def _label_words(label: str) -> list[int]:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class RngStream:
    """Counter-based (Philox) generator with label-derived child streams.

    Children depend only on the root seed and the chain of labels, so the order
    in which unrelated components draw numbers cannot perturb each other.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()) -> None:
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self.path = tuple(path)
        words = [w for label in self.path for w in _label_words(label)]
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(words))
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, label: str) -> "RngStream":
        return RngStream(self.seed, self.path + (str(label),))

    def __getattr__(self, name: str):
        # forward draws (random, integers, normal, ...) to the numpy generator
        return getattr(self.generator, name)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"


def make_rng(seed: Union[int, RngStream]) -> RngStream:
    if isinstance(seed, RngStream):
        return seed
    return RngStream(int(seed))


# --- validation -------------------------------------------------------------

@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok


def validate_dataset(D: LoggedDataset, logging_policy=None, tol: float = 1e-9) -> ValidationReport:
    """Check full support, propensity range and action indices; never mutates ``D``."""
    report = ValidationReport()
    p = D.propensities
    for i in np.flatnonzero(~(p > 0)):
        report.issues.append(f"row {i}: propensity {p[i]!r} is not positive")
    for i in np.flatnonzero(p > 1):
        report.issues.append(f"row {i}: propensity {p[i]!r} exceeds 1")
    bad = (D.actions < 0) | (D.actions >= D.action_count)
    for i in np.flatnonzero(bad):
        report.issues.append(f"row {i}: action {D.actions[i]} outside [0, {D.action_count})")
    if not np.all(np.isfinite(D.rewards)):
        report.issues.append("non-finite rewards present")
    if logging_policy is not None and D.n:
        ok_rows = ~bad
        probs = np.asarray(logging_policy.probs(D.contexts[ok_rows]))
        expected = probs[np.arange(probs.shape[0]), D.actions[ok_rows]]
        rows = np.flatnonzero(ok_rows)
        for j in np.flatnonzero(np.abs(expected - p[ok_rows]) > tol):
            report.issues.append(
                f"row {rows[j]}: logged propensity {p[rows[j]]:.12g} but policy gives {expected[j]:.12g}"
            )
    return report


# --- file format ------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dataset(D: LoggedDataset, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{D.level_index},{D.n},{D.context_dim},{D.action_count},{D.logging_policy_id}"]
    for i in range(D.n):
        cells = [_fmt(v) for v in D.contexts[i]]
        cells += [str(int(D.actions[i])), _fmt(D.rewards[i]), _fmt(D.propensities[i])]
        if D.reward_components is not None:
            cells += [_fmt(v) for v in D.reward_components[i]]
        lines.append(",".join(cells))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_dataset(path: Union[str, Path]) -> LoggedDataset:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    level, n, dim, action_count, policy_id = text[0].split(",", 4)
    n, dim = int(n), int(dim)
    rows = [line.split(",") for line in text[1 : n + 1]]
    width = len(rows[0]) if rows else dim + 3
    m = width - dim - 3
    data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(n, width)
    return LoggedDataset(
        level_index=int(level),
        contexts=data[:, :dim],
        actions=data[:, dim].astype(np.int64),
        rewards=data[:, dim + 1],
        propensities=data[:, dim + 2],
        action_count=int(action_count),
        logging_policy_id=policy_id,
        reward_components=data[:, dim + 3 :] if m > 0 else None,
    )
