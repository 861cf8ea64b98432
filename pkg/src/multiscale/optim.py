"""Small ReLU scoring networks with manual backprop and an IPS policy trainer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .core import LoggedDataset, RngStream, make_rng


@dataclass(frozen=True)
class NetworkSpec:
    """Fully connected network: ReLU hidden layers, linear output (one logit per action)."""

    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all network dims must be >= 1, got {dims}")

    @property
    def dims(self) -> tuple:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def layer_shapes(self) -> list:
        d = self.dims
        return list(zip(d[:-1], d[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def init(self, rng: RngStream) -> np.ndarray:
        """Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
        parts = []
        for fan_in, fan_out in self.layer_shapes:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-a, a, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def describe(self) -> str:
        return "-".join(str(d) for d in self.dims)

    @classmethod
    def parse(cls, text: str) -> "NetworkSpec":
        dims = [int(t) for t in text.split("-")]
        return cls(dims[0], tuple(dims[1:-1]), dims[-1])


def _layers(spec: NetworkSpec, theta: np.ndarray) -> list:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_params,):
        raise ValueError(f"theta has shape {theta.shape}, network needs ({spec.n_params},)")
    out, pos = [], 0
    for fan_in, fan_out in spec.layer_shapes:
        W = theta[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = theta[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def _as_batch(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"input has trailing dim {X.shape[-1]}, network expects {spec.input_dim}")
    return X, single


def _activations(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray) -> list:
    acts = [X]
    layers = _layers(spec, theta)
    for i, (W, b) in enumerate(layers):
        z = acts[-1] @ W + b
        acts.append(np.maximum(z, 0.0) if i < len(layers) - 1 else z)
    return acts


def forward(spec: NetworkSpec, theta: np.ndarray, x) -> np.ndarray:
    """Logits for one input (shape ``(d,)``) or a batch (shape ``(n, d)``)."""
    X, single = _as_batch(spec, x)
    logits = _activations(spec, theta, X)[-1]
    return logits[0] if single else logits


def backward(spec: NetworkSpec, theta: np.ndarray, x, upstream_grad) -> np.ndarray:
    """Gradient w.r.t. ``theta`` of ``sum(logits * upstream_grad)``, summed over the batch."""
    X, single = _as_batch(spec, x)
    G = np.asarray(upstream_grad, dtype=float)
    G = G.reshape(1, -1) if G.ndim == 1 else G
    if G.shape != (X.shape[0], spec.output_dim):
        raise ValueError(f"upstream_grad shape {G.shape} != ({X.shape[0]}, {spec.output_dim})")
    layers = _layers(spec, theta)
    acts = _activations(spec, theta, X)
    grads = []
    delta = G
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((acts[i].T @ delta, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W.T) * (acts[i] > 0)
    parts = []
    for gW, gb in reversed(grads):
        parts.append(gW.reshape(-1))
        parts.append(gb)
    return np.concatenate(parts)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adaptive-moment gradient ascent with decoupled weight decay."""

    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 256
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid moment constants")


@dataclass(frozen=True)
class Plain:
    """Train on the logged scalar reward."""


@dataclass(frozen=True)
class Conditional:
    """Train one policy for a whole set of feedback weight vectors.

    Each example gets a weight vector drawn uniformly from ``macro_weights`` every
    epoch; the vector is appended to the context and scalarizes the reward.
    """

    macro_weights: tuple

    def __post_init__(self) -> None:
        W = np.asarray(self.macro_weights, dtype=float)
        if W.ndim != 2 or W.shape[0] < 1:
            raise ValueError("macro_weights must be a non-empty 2-d array")
        if np.any(W < 0):
            raise ValueError("feedback weights must be non-negative")
        object.__setattr__(self, "macro_weights", tuple(tuple(float(v) for v in row) for row in W))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.macro_weights, dtype=float)

    @property
    def weight_dim(self) -> int:
        return len(self.macro_weights[0])


def _batch_objective_and_grad(spec, theta, beta, X, a, r, p, want_grad=True):
    from .estimators import ips_logit_gradient, softmax

    logits = forward(spec, theta, X)
    P = softmax(beta * logits)
    w = P[np.arange(len(a)), a] / p * r
    if not want_grad:
        return w, None
    upstream = ips_logit_gradient(P, a, w, beta)
    return w, backward(spec, theta, X, upstream)


def _conditional_inputs(D: LoggedDataset, W: np.ndarray, idx: np.ndarray):
    if D.reward_components is None or D.component_dim != W.shape[1]:
        raise ValueError(
            f"conditional training needs reward_components of width {W.shape[1]}, got {D.component_dim}"
        )
    X = np.concatenate([D.contexts, W[idx]], axis=1)
    r = np.einsum("ij,ij->i", D.reward_components, W[idx])
    return X, r


def training_objective(spec, theta, beta, D: LoggedDataset, mode=Plain()) -> float:
    """Full-data IPS value; in conditional mode averaged over every weight vector."""
    from .estimators import tree_sum

    if isinstance(mode, Conditional):
        W = mode.matrix
        vals = []
        for j in range(W.shape[0]):
            X, r = _conditional_inputs(D, W, np.full(D.n, j))
            w, _ = _batch_objective_and_grad(spec, theta, beta, X, D.actions, r, D.propensities, False)
            vals.append(tree_sum(w) / D.n)
        return float(np.mean(vals))
    w, _ = _batch_objective_and_grad(spec, theta, beta, D.contexts, D.actions, D.rewards, D.propensities, False)
    return float(tree_sum(w) / D.n)


def train_policy(
    D: LoggedDataset,
    spec: NetworkSpec,
    beta: float,
    opt: OptimizerConfig,
    mode: Union[Plain, Conditional] = Plain(),
    rng: Optional[RngStream] = None,
    history: Optional[list] = None,
    policy_id: str = "softmax",
):
    """Maximize the IPS value of a softmax policy on ``D``.

    Parameters
    ----------
    D: LoggedDataset
        Training data; must be non-empty.

    spec: NetworkSpec
        Scoring network. In conditional mode its input is the context followed by
        the feedback weight vector.

    beta: float
        Inverse temperature of the softmax.

    opt: OptimizerConfig
        Step size, decay, batch size and epoch count.

    mode: Plain or Conditional
        Whether to train one plain policy or a weight-conditioned family.

    rng: RngStream, optional
        Stream used for initialization, shuffling and weight draws. Defaults to
        ``make_rng(opt.seed)``.

    history: list, optional
        Receives the epoch-end training objective of every epoch.

    Returns
    -------
    policy: SoftmaxPolicy
        Parameters from the epoch with the best epoch-end objective.
    """
    from .policies import SoftmaxPolicy

    if D.n == 0:
        raise ValueError("cannot train on an empty dataset")
    if spec.output_dim != D.action_count:
        raise ValueError(f"network outputs {spec.output_dim} logits for {D.action_count} actions")
    conditional = isinstance(mode, Conditional)
    expected_in = D.context_dim + (mode.weight_dim if conditional else 0)
    if spec.input_dim != expected_in:
        raise ValueError(f"network input dim {spec.input_dim}, data needs {expected_in}")
    rng = rng if rng is not None else make_rng(opt.seed).spawn("train")
    theta = spec.init(rng.spawn("init"))
    make = lambda th: SoftmaxPolicy(spec, th, beta=beta, conditional=conditional, policy_id=policy_id)
    if D.action_count == 1:
        return make(theta)

    W = mode.matrix if conditional else None
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    step = 0
    best_value, best_theta = -np.inf, theta.copy()
    for epoch in range(opt.epochs):
        order = rng.permutation(D.n)
        if conditional:
            X_all, r_all = _conditional_inputs(D, W, rng.integers(W.shape[0], size=D.n))
        else:
            X_all, r_all = D.contexts, D.rewards
        for start in range(0, D.n, opt.batch_size):
            idx = order[start : start + opt.batch_size]
            _, g = _batch_objective_and_grad(
                spec, theta, beta, X_all[idx], D.actions[idx], r_all[idx], D.propensities[idx]
            )
            g = g / len(idx)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient at epoch {epoch}, batch starting {start}")
            step += 1
            m = opt.beta1 * m + (1 - opt.beta1) * g
            v = opt.beta2 * v + (1 - opt.beta2) * g * g
            m_hat = m / (1 - opt.beta1**step)
            v_hat = v / (1 - opt.beta2**step)
            theta = theta + opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
            if opt.weight_decay:
                theta = theta - opt.learning_rate * opt.weight_decay * theta
        value = training_objective(spec, theta, beta, D, mode)
        if not np.isfinite(value):
            raise FloatingPointError(f"training objective became {value} at epoch {epoch}")
        if history is not None:
            history.append(value)
        if value > best_value:
            best_value, best_theta = value, theta.copy()
    return make(best_theta)


def finite_difference_check(
    theta: np.ndarray,
    objective: Callable[[np.ndarray], float],
    gradient: Union[np.ndarray, Callable[[np.ndarray], np.ndarray]],
    eps: float = 1e-5,
    n_coords: int = 50,
    rng: Optional[RngStream] = None,
    floor: float = 1e-6,
) -> float:
    """Largest coordinate-wise relative error between an analytic gradient and central differences.

    Relative error per coordinate is ``|g - f| / max(|g|, |f|, floor)``. At most
    ``n_coords`` coordinates are checked (all if there are fewer), drawn without
    replacement from ``rng``.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(gradient(theta) if callable(gradient) else gradient, dtype=float)
    coords = np.arange(theta.size)
    if theta.size > n_coords:
        rng = rng if rng is not None else make_rng(0)
        coords = np.sort(rng.choice(theta.size, size=n_coords, replace=False))
    worst = 0.0
    for i in coords:
        up, down = theta.copy(), theta.copy()
        up[i] += eps
        down[i] -= eps
        fd = (objective(up) - objective(down)) / (2 * eps)
        err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), floor)
        worst = max(worst, err)
    return float(worst)
