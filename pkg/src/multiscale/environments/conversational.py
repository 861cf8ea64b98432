"""Three-level conversational recommender with a synthetic token generator.

Level 1 picks one of ten "cuisines"; a per-cuisine bigram model then writes a
short response. Relevance is the inverse perplexity of the response under the
user's preferred cuisine model. Level 2 picks a decoding temperature for a week
of ten responses and is rewarded through a steep logistic of a
relevance/diversity mix. Level 3 picks which weekly objective the level-2
policy optimizes (plain return rate or return rate capped at a threshold).

Each cuisine model follows one fixed cycle through the whole vocabulary with
high probability, so greedy decoding is relevant but repetitive and sampling at
higher temperature is diverse but less relevant.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import LevelSpec, RngStream, make_rng
from ..policies import TAU_MIN
from .base import MultiScaleEnv, StepRecord, Users, group_means, sample_by_member

ACTIVITY_RULES = ("objective_match", "at_most_threshold")


@dataclass(frozen=True)
class ConvEnvSpec:
    context_dim: int = 5
    cuisines: int = 10
    micro_horizon: int = 10
    temperatures: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    l2_horizon: int = 2
    l3_weights: tuple = ((0.0, 1.0), (1.0, 0.0))
    beta_u: tuple = (0.9, 0.1)
    sigmoid_scale: float = 60.0
    sigmoid_shift: float = 0.6
    threshold: float = 0.8
    gamma_u: tuple = (1.0, 0.0)
    sigma_f: float = 0.1
    vocab_size: int = 50
    response_length: int = 20
    path_logit: float = 4.86
    logit_noise: float = 0.5
    preferred_cuisine: tuple = (3, 7)
    group_agreement: float = 0.8
    activity_rule: str = "objective_match"
    construction_seed: int = 1234

    def __post_init__(self) -> None:
        if self.activity_rule not in ACTIVITY_RULES:
            raise ValueError(f"activity_rule must be one of {ACTIVITY_RULES}")
        if self.sigma_f < 0 or not 0 <= self.group_agreement <= 1:
            raise ValueError("invalid sigma_f or group_agreement")
        if any(not 0 <= p < self.cuisines for p in self.preferred_cuisine):
            raise ValueError("preferred cuisine out of range")
        if self.response_length < 1 or self.vocab_size < 2:
            raise ValueError("invalid generator size")


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class TokenModel:
    """Per-action bigram models over a finite vocabulary."""

    def __init__(self, actions: int, vocab: int, path_logit: float, noise: float, rng: RngStream) -> None:
        self.vocab = vocab
        succ = np.zeros((actions, vocab), dtype=np.int64)
        logits = noise * rng.standard_normal((actions, vocab, vocab))
        for a in range(actions):
            cycle = rng.permutation(vocab)
            succ[a, cycle] = np.roll(cycle, -1)
            logits[a, np.arange(vocab), succ[a]] = path_logit
        self.successor = succ
        self.logits = logits
        self.start_logits = noise * rng.standard_normal((actions, vocab))
        self.log_probs = _log_softmax(logits)
        self.start_log_probs = _log_softmax(self.start_logits)

    def _next_logits(self, actions, prev):
        first = prev < 0
        out = self.logits[actions, np.where(first, 0, prev)]
        if np.any(first):
            out[first] = self.start_logits[actions[first]]
        return out

    def generate(self, actions, temperatures, prev_last, length: int, rng: RngStream) -> np.ndarray:
        """Sample ``length`` tokens per row with Gumbel-max; temperature 0 is greedy."""
        actions = np.asarray(actions, dtype=np.int64)
        n = actions.shape[0]
        taus = np.broadcast_to(np.asarray(temperatures, dtype=float), (n,))
        greedy = taus == 0
        scale = 1.0 / np.maximum(taus, TAU_MIN)
        prev = np.asarray(prev_last, dtype=np.int64).copy()
        out = np.zeros((n, length), dtype=np.int64)
        for i in range(length):
            z = self._next_logits(actions, prev) * scale[:, None]
            g = rng.gumbel(size=z.shape)
            g[greedy] = 0.0
            prev = np.argmax(z + g, axis=1)
            out[:, i] = prev
        return out

    def log_likelihood(self, tokens, action, prev_last) -> np.ndarray:
        """Per-row sum of log-probabilities of ``tokens`` under ``action``'s model."""
        tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
        n = tokens.shape[0]
        action = np.broadcast_to(np.asarray(action, dtype=np.int64), (n,))
        prev = np.broadcast_to(np.asarray(prev_last, dtype=np.int64), (n,))
        first = np.where(
            prev < 0,
            self.start_log_probs[action, tokens[:, 0]],
            self.log_probs[action, np.maximum(prev, 0), tokens[:, 0]],
        )
        rest = self.log_probs[action[:, None], tokens[:, :-1], tokens[:, 1:]].sum(axis=1)
        return first + rest


def conv_micro_reward(tokens, optimal_action, model: TokenModel, prev_last=-1) -> np.ndarray:
    """Inverse perplexity: geometric-mean token probability under the optimal action's model."""
    tokens = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if tokens.shape[1] == 0:
        raise ValueError("empty token sequence")
    return np.exp(model.log_likelihood(tokens, optimal_action, prev_last) / tokens.shape[1])


def _trigram_codes(responses: np.ndarray, vocab: int) -> np.ndarray:
    """Integer code per within-response 3-gram, shape (n, T * (L - 2))."""
    R = np.asarray(responses, dtype=np.int64)
    codes = (R[..., :-2] * vocab + R[..., 1:-1]) * vocab + R[..., 2:]
    return codes.reshape(R.shape[0], -1)


def diversity_batch(responses: np.ndarray, vocab: int) -> np.ndarray:
    """Row-wise diversity of ``responses`` with shape (n, T, L)."""
    R = np.asarray(responses, dtype=np.int64)
    if R.shape[-1] < 3:
        return np.ones(R.shape[0])
    codes = np.sort(_trigram_codes(R, vocab), axis=1)
    total = codes.shape[1]
    unique = 1 + np.count_nonzero(np.diff(codes, axis=1), axis=1)
    return unique / total


def diversity_score(responses: Sequence[Sequence[int]]) -> float:
    """1 - repeated / total 3-gram occurrences over a set of responses.

    3-grams are taken within each response; an occurrence is repeated when the
    same 3-gram appeared earlier in the pooled list. Returns 1 when no response
    is long enough to contain a 3-gram.
    """
    if len(responses) == 0:
        raise ValueError("need at least one response")
    seen, total, repeated = set(), 0, 0
    for resp in responses:
        resp = list(resp)
        for i in range(len(resp) - 2):
            gram = tuple(resp[i : i + 3])
            total += 1
            if gram in seen:
                repeated += 1
            seen.add(gram)
    return 1.0 if total == 0 else 1.0 - repeated / total


def conv_level2_reward(mean_r1, diversity, beta_u, scale: float = 60.0, shift: float = 0.6):
    return logistic(scale * (beta_u * np.asarray(mean_r1) + (1 - beta_u) * np.asarray(diversity) - shift))


def conv_parameterized_feedback(r2, weights, threshold: float = 0.8):
    w = np.asarray(weights, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    return w[..., 0] * r2 + w[..., 1] * np.minimum(threshold, r2)


def conv_level3_reward(r2_pair, gamma_u, activity_indicator):
    r2_pair = np.asarray(r2_pair, dtype=float)
    return gamma_u * r2_pair.mean(axis=-1) + (1 - gamma_u) * np.asarray(activity_indicator, dtype=float)


class ConversationalEnv(MultiScaleEnv):
    name = "conversational"

    def __init__(self, spec: ConvEnvSpec = ConvEnvSpec()) -> None:
        self.spec = spec
        s = spec
        super().__init__(
            (
                LevelSpec(1, 1, s.cuisines, s.context_dim),
                LevelSpec(2, s.micro_horizon, len(s.temperatures), s.context_dim),
                LevelSpec(3, s.l2_horizon, len(s.l3_weights), s.context_dim),
            )
        )
        build = make_rng(s.construction_seed).spawn("conversational-construction")
        self.model = TokenModel(s.cuisines, s.vocab_size, s.path_logit, s.logit_noise, build.spawn("tokens"))
        self.means = {lvl: group_means(2, s.context_dim, offset=2 * (lvl - 1)) for lvl in (1, 2, 3)}

    def conv_generate(self, action: int, temperature: float, prev_tokens: Sequence[int], rng: RngStream) -> np.ndarray:
        if temperature < 0:
            raise ValueError("temperature must be >= 0")
        prev = prev_tokens[-1] if len(prev_tokens) else -1
        return self.model.generate([action], [temperature], [prev], self.spec.response_length, rng)[0]

    def sample_users(self, n: int, rng: RngStream) -> Users:
        s = self.spec
        g3 = rng.integers(2, size=n)
        agree = rng.random(n) < s.group_agreement
        g2 = np.where(agree, g3, 1 - g3)
        g1 = rng.integers(2, size=n)
        groups = {1: g1, 2: g2, 3: g3}
        feats = {lvl: self.means[lvl][groups[lvl]] + s.sigma_f * rng.standard_normal((n, s.context_dim)) for lvl in (1, 2, 3)}
        return Users(feats, groups)

    def optimal_cuisine(self, users: Users) -> np.ndarray:
        return np.asarray(self.spec.preferred_cuisine)[users.groups[1]]

    def group_centres(self, level: int) -> np.ndarray:
        return self.means[level]

    def new_session(self, users: Users) -> dict:
        return {"prev": np.full(users.n, -1, dtype=np.int64)}

    def _respond(self, users, cuisines, taus, prev, rng):
        tokens = self.model.generate(cuisines, taus, prev, self.spec.response_length, rng)
        r1 = conv_micro_reward(tokens, self.optimal_cuisine(users), self.model, prev)
        return tokens, r1

    def micro_feedback(self, users, actions, rng):
        _, r1 = self._respond(users, np.asarray(actions), np.ones(users.n), np.full(users.n, -1), rng)
        return r1, None

    def micro_step(self, users, family, member_index, t, session, rng) -> StepRecord:
        cuisines, _ = sample_by_member(family, member_index, users.features[1], rng)
        taus = np.array([getattr(family.member(int(j)), "decode_temperature", 1.0) for j in member_index])
        tokens, r1 = self._respond(users, cuisines, taus, session["prev"], rng)
        session["prev"] = tokens[:, -1]
        return StepRecord(r1, {1: r1}, actions=cuisines, extras={"tokens": tokens})

    def level_reward(self, level, users, records, actions, family, rng):
        s = self.spec
        if level == 2:
            tokens = np.stack([rec.extras["tokens"] for rec in records], axis=1)
            mean_r1 = np.mean([rec.rewards for rec in records], axis=0)
            div = diversity_batch(tokens, s.vocab_size)
            beta = np.asarray(s.beta_u)[users.groups[2]]
            r2 = conv_level2_reward(mean_r1, div, beta, s.sigmoid_scale, s.sigmoid_shift)
            comps = np.stack([r2, np.minimum(s.threshold, r2)], axis=1)
            return r2, comps
        if level == 3:
            pair = np.stack([rec.rewards for rec in records], axis=1)
            gamma = np.asarray(s.gamma_u)[users.groups[3]]
            indicator = self.activity_indicator(pair, actions, family)
            return conv_level3_reward(pair, gamma, indicator), None
        raise ValueError(f"no level {level}")

    def activity_indicator(self, r2_pair, actions, family) -> np.ndarray:
        """Whether the user's activity preference was respected.

        ``at_most_threshold``: mean weekly return rate does not exceed the threshold.
        ``objective_match``: the weekly policy serving the user optimized return rate
        only up to the threshold, i.e. it was trained for the capped component alone.
        """
        if self.spec.activity_rule == "at_most_threshold":
            return (np.mean(r2_pair, axis=1) <= self.spec.threshold).astype(float)
        capped = []
        for j in range(len(family)):
            w = getattr(family.member(j), "feedback_weights", None)
            capped.append(w is not None and w[0] == 0 and w[1] > 0)
        return np.asarray(capped, dtype=float)[np.asarray(actions, dtype=np.int64)]

    def ground_truth(self) -> dict:
        out = {"successor": self.model.successor, "start_logits": self.model.start_logits}
        for lvl, mu in self.means.items():
            out[f"group_means_level{lvl}"] = mu
        return out
