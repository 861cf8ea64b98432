"""Multi-scale policy learning: bottom-up training of one contextual bandit per level
and top-down execution of the resulting stack."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import LoggedDataset, RngStream, make_rng, read_dataset, write_dataset
from .environments.base import MultiScaleEnv, StepRecord, Users, sample_by_member
from .estimators import ValueEstimate
from .optim import Conditional, NetworkSpec, OptimizerConfig, Plain, train_policy
from .policies import (
    BoostMod,
    FamilyMode,
    FeedbackWeights,
    MacroAction,
    Policy,
    PolicyFamily,
    SoftmaxPolicy,
    TemperatureMod,
    UniformPolicy,
    load_policy,
    sample_actions,
    save_policy,
)


@dataclass(frozen=True)
class LevelConfig:
    """Training setup for one level.

    ``macro_actions`` index the family built from this level's policy, i.e. they are
    the action space of the level above; ``family_mode`` says how members are built.
    The top level has no macro actions. ``learn=False`` (level 1 only) takes the
    environment's given micro policy instead of training one.
    """

    n_samples: int = 1000
    family_mode: FamilyMode = FamilyMode.POLICY_MODIFICATION
    macro_actions: tuple = ()
    hidden_dims: tuple = (64, 64)
    beta: float = 1.0
    opt: OptimizerConfig = OptimizerConfig()
    logging_policy: Optional[Policy] = None
    learn: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "macro_actions", tuple(self.macro_actions))
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if self.family_mode is FamilyMode.EXPLICIT:
            raise ValueError("a trained level builds its family by policy or feedback modification")

    @property
    def conditional(self) -> bool:
        return self.family_mode is FamilyMode.FEEDBACK_MODIFICATION and bool(self.macro_actions)

    @property
    def weight_matrix(self) -> np.ndarray:
        return np.asarray([m.kind.weights for m in self.macro_actions], dtype=float)


@dataclass(frozen=True)
class LevelStack:
    """Per-level configs, bottom (level 1) to top."""

    levels: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise ValueError("a stack needs at least two levels")
        if self.levels[-1].macro_actions:
            raise ValueError("the top level indexes no family")
        for k, cfg in enumerate(self.levels[:-1], start=1):
            if not cfg.macro_actions:
                raise ValueError(f"level {k} needs macro actions for the level above")
        if any(not cfg.learn for cfg in self.levels[1:]):
            raise ValueError("only level 1 may use a given policy")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> LevelConfig:
        return self.levels[k - 1]

    def check(self, env: MultiScaleEnv) -> None:
        if env.top_level < self.depth:
            raise ValueError(f"stack has {self.depth} levels, env has {env.top_level}")
        for k in range(1, self.depth):
            size = len(self.level(k).macro_actions)
            if size != env.level(k + 1).action_count:
                raise ValueError(
                    f"level {k} family has {size} members but level {k + 1} has {env.level(k + 1).action_count} actions"
                )

    def truncated(self, depth: int) -> "LevelStack":
        levels = list(self.levels[:depth])
        levels[-1] = replace(levels[-1], macro_actions=())
        return LevelStack(tuple(levels))


@dataclass
class MultiScalePolicy:
    """Trained policies per level and the families that connect adjacent levels.

    ``families[k]`` is the family of level-k policies indexed by level-(k+1) actions.
    """

    policies: dict
    families: dict
    datasets: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return max(self.policies)

    @property
    def top(self) -> Policy:
        return self.policies[self.depth]

    def check(self, env: MultiScaleEnv) -> None:
        K = self.depth
        if K > env.top_level:
            raise ValueError(f"policy stack has {K} levels, env has {env.top_level}")
        for k in range(1, K):
            if k not in self.families:
                raise ValueError(f"missing level-{k} family")
            if k + 1 not in self.policies:
                continue
            upper = self.policies[k + 1].action_count
            if upper != len(self.families[k]):
                raise ValueError(f"level {k + 1} has {upper} actions but the level-{k} family has {len(self.families[k])}")


# --- execution ------------------------------------------------------------------

def execute(env: MultiScaleEnv, level: int, users: Users, actions: np.ndarray, families: dict, rng: RngStream):
    """Run one level-``level`` step per user whose level action is ``actions``.

    Returns (rewards, reward_components, level_means) where ``level_means`` maps
    every level up to ``level`` to per-user mean rewards.
    """
    if level < 2:
        raise ValueError("execute runs macro levels (>= 2)")
    family = families[level - 1]
    T = env.level(level).timescale_ratio
    actions = np.asarray(actions, dtype=np.int64)
    records = []
    if level == 2:
        session = env.new_session(users)
        for t in range(T):
            records.append(env.micro_step(users, family, actions, t, session, rng.spawn(f"t{t}")))
    else:
        X = users.features[level - 1]
        for t in range(T):
            step = rng.spawn(f"t{t}")
            lower, _ = sample_by_member(family, actions, X, step.spawn("act"))
            r, comps, means = execute(env, level - 1, users, lower, families, step.spawn("run"))
            records.append(StepRecord(r, means, actions=lower, components=comps))
    rewards, comps = env.level_reward(level, users, records, actions, family, rng.spawn("reward"))
    means = {lvl: np.mean([rec.level_means[lvl] for rec in records], axis=0) for lvl in records[0].level_means}
    means[level] = np.asarray(rewards, dtype=float)
    return means[level], comps, means


def collect_logged_data(
    env: MultiScaleEnv,
    level: int,
    logging_policy: Policy,
    n: int,
    rng: RngStream,
    lower_families: Optional[dict] = None,
) -> LoggedDataset:
    """Log ``n`` level-``level`` interactions under ``logging_policy``.

    At level >= 2 each logged action is executed by running the indexed lower
    policies, so ``lower_families`` must hold the families of every level below.
    """
    spec = env.level(level)
    if level >= 2 and (lower_families is None or any(k not in lower_families for k in range(1, level))):
        raise ValueError(f"level {level} data needs the families of levels 1..{level - 1}")
    if logging_policy.action_count != spec.action_count:
        raise ValueError(f"logging policy has {logging_policy.action_count} actions, level has {spec.action_count}")
    policy_id = getattr(logging_policy, "policy_id", "logging")
    if n == 0:
        return LoggedDataset(level, np.zeros((0, spec.context_dim)), [], [], [], spec.action_count, policy_id)
    users = env.sample_users(n, rng.spawn("users"))
    X = users.features[level]
    a, p = sample_actions(logging_policy, X, rng.spawn("log"))
    if level == 1:
        r, comps = env.micro_feedback(users, a, rng.spawn("feedback"))
    else:
        r, comps, _ = execute(env, level, users, a, lower_families, rng.spawn("execute"))
    return LoggedDataset(level, X, a, r, p, spec.action_count, policy_id, comps)


# --- learning -------------------------------------------------------------------

def _network(D: LoggedDataset, cfg: LevelConfig) -> NetworkSpec:
    extra = cfg.weight_matrix.shape[1] if cfg.conditional else 0
    return NetworkSpec(D.context_dim + extra, cfg.hidden_dims, D.action_count)


def _train(D: LoggedDataset, cfg: LevelConfig, rng: RngStream, history: Optional[list], policy_id: str) -> SoftmaxPolicy:
    mode = Conditional(cfg.weight_matrix) if cfg.conditional else Plain()
    return train_policy(D, _network(D, cfg), cfg.beta, cfg.opt, mode, rng, history, policy_id)


def build_family(policy: Policy, cfg: LevelConfig) -> PolicyFamily:
    return PolicyFamily(policy, cfg.macro_actions, cfg.family_mode)


def learn_micro_family(
    D: LoggedDataset,
    cfg: LevelConfig,
    rng: Optional[RngStream] = None,
    history: Optional[list] = None,
) -> PolicyFamily:
    """Train the level's base policy and expand it into a family over ``cfg.macro_actions``.

    Policy modification trains one plain policy and applies each macro action to it;
    feedback modification trains one policy conditioned on the feedback weights.
    """
    if cfg.conditional and D.component_dim != cfg.weight_matrix.shape[1]:
        raise ValueError("feedback modification needs reward components matching the weight vectors")
    rng = rng if rng is not None else make_rng(cfg.opt.seed).spawn(f"train-L{D.level_index}")
    base = _train(D, cfg, rng, history, f"L{D.level_index}")
    return build_family(base, cfg)


def learn_macro_policy(
    D: LoggedDataset,
    macro_action_count: int,
    cfg: LevelConfig = LevelConfig(),
    rng: Optional[RngStream] = None,
    history: Optional[list] = None,
) -> SoftmaxPolicy:
    """Softmax policy over macro actions maximizing the IPS value of the logged level reward."""
    if D.action_count != macro_action_count:
        raise ValueError(f"dataset has {D.action_count} actions, expected {macro_action_count}")
    rng = rng if rng is not None else make_rng(cfg.opt.seed).spawn(f"train-L{D.level_index}")
    return _train(D, cfg, rng, history, f"L{D.level_index}")


def _logger(cfg: LevelConfig, action_count: int) -> Policy:
    return cfg.logging_policy if cfg.logging_policy is not None else UniformPolicy(action_count)


def _level_one(env, cfg: LevelConfig, rng: RngStream, out: MultiScalePolicy) -> Policy:
    if not cfg.learn:
        given = env.given_micro_policy()
        if given is None:
            raise ValueError(f"{env.name} has no given micro policy")
        return given
    D = collect_logged_data(env, 1, _logger(cfg, env.level(1).action_count), cfg.n_samples, rng.spawn("collect-L1"))
    out.datasets[1] = D
    out.histories[1] = []
    mode = Conditional(cfg.weight_matrix) if cfg.conditional else Plain()
    if cfg.conditional and D.component_dim != cfg.weight_matrix.shape[1]:
        raise ValueError("feedback modification needs reward components matching the weight vectors")
    return train_policy(D, _network(D, cfg), cfg.beta, cfg.opt, mode, rng.spawn("train-L1"), out.histories[1], "L1")


def _upper_level(env, k: int, cfg: LevelConfig, rng: RngStream, out: MultiScalePolicy) -> Policy:
    D = collect_logged_data(
        env, k, _logger(cfg, env.level(k).action_count), cfg.n_samples, rng.spawn(f"collect-L{k}"), out.families
    )
    out.datasets[k] = D
    out.histories[k] = []
    return _train(D, cfg, rng.spawn(f"train-L{k}"), out.histories[k], f"L{k}")


def _wrap(fn, k: int):
    try:
        return fn()
    except Exception as exc:
        raise RuntimeError(f"level {k} failed: {exc}") from exc


def policy_learning(env: MultiScaleEnv, stack: LevelStack, rng: Union[int, RngStream]) -> MultiScalePolicy:
    """Two-level learning: micro family from level-1 data, then the macro policy on top."""
    if stack.depth != 2:
        raise ValueError("policy_learning handles exactly two levels; use policy_learning_recursive")
    stack.check(env)
    rng = make_rng(rng)
    out = MultiScalePolicy({}, {})
    cfg1, cfg2 = stack.levels
    out.policies[1] = _wrap(lambda: _level_one(env, cfg1, rng, out), 1)
    out.families[1] = build_family(out.policies[1], cfg1)
    out.policies[2] = _wrap(lambda: _upper_level(env, 2, cfg2, rng, out), 2)
    return out


def policy_learning_recursive(
    env: MultiScaleEnv, stack: LevelStack, rng: Union[int, RngStream], _k: Optional[int] = None
) -> MultiScalePolicy:
    """Learn levels bottom-up: solve levels 1..k-1 recursively, expand level k-1 into
    a family, collect level-k data through it and train the level-k policy."""
    rng = make_rng(rng)
    k = stack.depth if _k is None else _k
    if _k is None:
        stack.check(env)
    if k == 1:
        out = MultiScalePolicy({}, {})
        out.policies[1] = _wrap(lambda: _level_one(env, stack.level(1), rng, out), 1)
        return out
    out = policy_learning_recursive(env, stack, rng, k - 1)
    out.families[k - 1] = build_family(out.policies[k - 1], stack.level(k - 1))
    out.policies[k] = _wrap(lambda: _upper_level(env, k, stack.level(k), rng, out), k)
    return out


# --- inference ------------------------------------------------------------------

@dataclass
class InferenceResult:
    """Per-level reward summaries plus the top-level actions and rewards of every episode."""

    summaries: dict
    top_actions: np.ndarray
    top_rewards: np.ndarray
    per_level: dict


def multiscale_inference(policy: MultiScalePolicy, env: MultiScaleEnv, episodes: int, rng: Union[int, RngStream]) -> InferenceResult:
    """Sample top-level actions, index downward through the families and run the lower
    levels for their horizons; one episode is one top-level step for one user."""
    policy.check(env)
    rng = make_rng(rng)
    K = policy.depth
    if episodes == 0:
        return InferenceResult({}, np.zeros(0, dtype=np.int64), np.zeros(0), {})
    users = env.sample_users(episodes, rng.spawn("users"))
    if K == 1:
        a, _ = sample_actions(policy.top, users.features[1], rng.spawn("act"))
        r, _ = env.micro_feedback(users, a, rng.spawn("feedback"))
        means = {1: np.asarray(r, dtype=float)}
    else:
        a, _ = sample_actions(policy.top, users.features[K], rng.spawn("act"))
        r, _, means = execute(env, K, users, a, policy.families, rng.spawn("execute"))
    summaries = {lvl: ValueEstimate.from_terms(v, f"L{lvl}") for lvl, v in means.items()}
    return InferenceResult(summaries, a, means[K], means)


def evaluate_families(
    env: MultiScaleEnv,
    top: Policy,
    families: dict,
    episodes: int,
    rng: Union[int, RngStream],
) -> InferenceResult:
    """Inference for a hand-assembled stack (baselines and ablations)."""
    K = max(families) + 1
    return multiscale_inference(MultiScalePolicy({K: top}, dict(families)), env, episodes, rng)


# --- persistence ----------------------------------------------------------------

def macro_action_to_dict(m: MacroAction) -> dict:
    k = m.kind
    if isinstance(k, TemperatureMod):
        return {"kind": "temperature", "tau": k.tau}
    if isinstance(k, BoostMod):
        return {"kind": "boost", "delta": k.delta, "targets": list(k.target_set), "scale": None if k.scale is None else list(k.scale)}
    return {"kind": "feedback", "weights": list(k.weights)}


def macro_action_from_dict(d: dict, index: int) -> MacroAction:
    kind = d["kind"]
    if kind == "temperature":
        return MacroAction(TemperatureMod(float(d["tau"])), index)
    if kind == "boost":
        scale = d.get("scale")
        return MacroAction(BoostMod(float(d["delta"]), tuple(d["targets"]), None if scale is None else tuple(scale)), index)
    if kind == "feedback":
        return MacroAction(FeedbackWeights(tuple(d["weights"])), index)
    raise ValueError(f"unknown macro action kind {kind!r}")


def save_multiscale(policy: MultiScalePolicy, directory: Union[str, Path], env_name: str = "") -> Path:
    """Write every learned policy, dataset and family definition under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format": 1, "env": env_name, "depth": policy.depth, "policies": {}, "families": {}}
    for k, pi in sorted(policy.policies.items()):
        if isinstance(pi, SoftmaxPolicy):
            name = f"policy_L{k}.csv"
            save_policy(pi, directory / name)
            manifest["policies"][str(k)] = name
        else:
            manifest["policies"][str(k)] = "given"
    for k, fam in sorted(policy.families.items()):
        if fam.mode is FamilyMode.EXPLICIT:
            raise ValueError("explicit families cannot be saved")
        manifest["families"][str(k)] = {
            "mode": fam.mode.value,
            "macro_actions": [macro_action_to_dict(m) for m in fam.macro_actions],
        }
    for k, D in sorted(policy.datasets.items()):
        write_dataset(D, directory / f"data_L{k}.csv")
    for k, hist in sorted(policy.histories.items()):
        (directory / f"curve_L{k}.csv").write_text(
            "epoch,objective\n" + "".join(f"{i},{v:.17g}\n" for i, v in enumerate(hist)), encoding="utf-8"
        )
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    tmp.replace(directory / "manifest.json")
    return directory


def load_multiscale(directory: Union[str, Path], env: Optional[MultiScaleEnv] = None) -> MultiScalePolicy:
    """Inverse of ``save_multiscale``; a "given" level-1 policy is taken from ``env``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    policies = {}
    for key, name in manifest["policies"].items():
        if name == "given":
            given = None if env is None else env.given_micro_policy()
            if given is None:
                raise ValueError(f"level {key} uses the environment's given policy; pass a matching env")
            policies[int(key)] = given
        else:
            policies[int(key)] = load_policy(directory / name)
    families = {}
    for key, fam in manifest["families"].items():
        k = int(key)
        actions = tuple(macro_action_from_dict(d, j) for j, d in enumerate(fam["macro_actions"]))
        families[k] = PolicyFamily(policies[k], actions, FamilyMode(fam["mode"]))
    datasets = {}
    for path in sorted(directory.glob("data_L*.csv")):
        datasets[int(path.stem.split("_L")[1])] = read_dataset(path)
    return MultiScalePolicy(policies, families, datasets)
