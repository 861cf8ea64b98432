import numpy as np
import pytest

from multiscale.core import LoggedDataset, make_rng
from multiscale.environments import FiniteEnv
from multiscale.estimators import ips_gradient, ips_value
from multiscale.msbl import collect_logged_data
from multiscale.optim import (
    Conditional,
    NetworkSpec,
    OptimizerConfig,
    backward,
    finite_difference_check,
    forward,
    train_policy,
    training_objective,
)
from multiscale.policies import SoftmaxPolicy, UniformPolicy


def naive_forward(spec, theta, X):
    """Independent loop implementation used as a duplicate oracle."""
    h = np.asarray(X, dtype=float)
    pos = 0
    dims = spec.dims
    for i in range(len(dims) - 1):
        W = np.zeros((dims[i], dims[i + 1]))
        for r in range(dims[i]):
            for c in range(dims[i + 1]):
                W[r, c] = theta[pos]
                pos += 1
        b = theta[pos : pos + dims[i + 1]]
        pos += dims[i + 1]
        out = np.zeros((h.shape[0], dims[i + 1]))
        for n in range(h.shape[0]):
            for c in range(dims[i + 1]):
                out[n, c] = sum(h[n, r] * W[r, c] for r in range(dims[i])) + b[c]
        h = np.maximum(out, 0.0) if i < len(dims) - 2 else out
    return h


class TestNetwork:
    def test_zero_theta(self):
        spec = NetworkSpec(3, (4,), 2)
        np.testing.assert_array_equal(forward(spec, np.zeros(spec.n_params), np.ones((5, 3))), 0.0)

    def test_identity_layer(self):
        spec = NetworkSpec(3, (), 3)
        theta = np.concatenate([np.eye(3).reshape(-1), np.zeros(3)])
        X = make_rng(0).normal(size=(4, 3))
        np.testing.assert_array_equal(forward(spec, theta, X), X)

    def test_duplicate_implementation(self):
        rng = make_rng(1)
        spec = NetworkSpec(2, (2,), 2)
        theta = rng.normal(size=spec.n_params)
        X = rng.normal(size=(6, 2))
        np.testing.assert_allclose(forward(spec, theta, X), naive_forward(spec, theta, X), rtol=1e-13)

    def test_single_input(self):
        spec = NetworkSpec(2, (3,), 2)
        theta = spec.init(make_rng(2))
        x = np.array([0.5, -0.3])
        np.testing.assert_array_equal(forward(spec, theta, x), forward(spec, theta, x[None])[0])

    def test_init_bounds(self):
        spec = NetworkSpec(10, (20,), 5)
        theta = spec.init(make_rng(3))
        a = np.sqrt(6.0 / 30)
        assert np.all(np.abs(theta[:200]) <= a)
        np.testing.assert_array_equal(theta[200:220], 0.0)

    def test_shape_errors(self):
        spec = NetworkSpec(2, (), 2)
        with pytest.raises(ValueError):
            forward(spec, np.zeros(3), np.ones(2))
        with pytest.raises(ValueError):
            forward(spec, np.zeros(spec.n_params), np.ones(3))
        with pytest.raises(ValueError):
            NetworkSpec(0, (), 2)

    def test_describe_parse(self):
        spec = NetworkSpec(5, (64, 64), 6)
        assert NetworkSpec.parse(spec.describe()) == spec


class TestBackward:
    def test_zero_upstream(self):
        spec = NetworkSpec(3, (4,), 2)
        g = backward(spec, spec.init(make_rng(0)), np.ones((2, 3)), np.zeros((2, 2)))
        np.testing.assert_array_equal(g, 0.0)

    def test_linear_layer_outer_product(self):
        spec = NetworkSpec(3, (), 2)
        x = np.array([1.0, 2.0, -1.0])
        u = np.array([0.5, -2.0])
        g = backward(spec, make_rng(1).normal(size=spec.n_params), x, u)
        np.testing.assert_allclose(g, np.concatenate([np.outer(x, u).reshape(-1), u]))

    def test_finite_differences(self):
        rng = make_rng(2)
        spec = NetworkSpec(4, (7, 5), 3)
        theta = spec.init(rng)
        X = rng.normal(size=(8, 4))
        U = rng.normal(size=(8, 3))
        obj = lambda th: float(np.sum(forward(spec, th, X) * U))
        assert finite_difference_check(theta, obj, backward(spec, theta, X, U), n_coords=200) <= 1e-4


class TestFiniteDifferenceCheck:
    def test_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        obj = lambda th: 0.5 * th @ A @ th
        theta = np.array([0.3, -1.2])
        assert finite_difference_check(theta, obj, A @ theta) <= 1e-8

    def test_ips_objective(self):
        rng = make_rng(3)
        spec = NetworkSpec(2, (4,), 3)
        pi = SoftmaxPolicy(spec, spec.init(rng))
        D = LoggedDataset(1, rng.normal(size=(25, 2)), rng.integers(3, size=25), rng.random(25), np.full(25, 1 / 3), 3)
        obj = lambda th: ips_value(pi.with_theta(th), D).value
        assert finite_difference_check(pi.theta, obj, ips_gradient(pi, D)) <= 1e-4

    def test_corrupted_gradient_flagged(self):
        obj = lambda th: float(np.sum(th**2))
        theta = np.array([1.0, 2.0, 3.0])
        bad = 2 * theta
        bad[1] *= 1.5
        assert finite_difference_check(theta, obj, bad) > 1e-2


def matched_dataset(n=2000, seed=0):
    env = FiniteEnv([[1.0, 0.0], [0.0, 1.0]])
    return collect_logged_data(env, 1, UniformPolicy(2), n, make_rng(seed))


class TestTraining:
    def test_single_action_is_noop(self):
        D = LoggedDataset(1, np.ones((10, 2)), np.zeros(10), np.ones(10), np.ones(10), 1)
        pi = train_policy(D, NetworkSpec(2, (3,), 1), 1.0, OptimizerConfig(epochs=3), rng=make_rng(0))
        np.testing.assert_array_equal(pi.probs(np.ones((4, 2))), 1.0)

    def test_learns_matched_action(self):
        D = matched_dataset()
        opt = OptimizerConfig(learning_rate=0.01, batch_size=256, epochs=50)
        pi = train_policy(D, NetworkSpec(2, (8,), 2), 1.0, opt, rng=make_rng(1))
        P = pi.probs(np.eye(2))
        assert P[0, 0] >= 0.95 and P[1, 1] >= 0.95

    def test_conditional_matches_separate_training(self):
        rng = make_rng(2)
        n = 2000
        c = rng.integers(2, size=n)
        a = rng.integers(2, size=n)
        comps = np.stack([(a == c), (a != c)], axis=1).astype(float)
        D = LoggedDataset(1, np.eye(2)[c], a, comps[:, 0], np.full(n, 0.5), 2, reward_components=comps)
        opt = OptimizerConfig(learning_rate=0.05, batch_size=256, epochs=60)
        W = ((1.0, 0.0), (0.0, 1.0))
        fam = train_policy(D, NetworkSpec(4, (8,), 2), 1.0, opt, Conditional(W), make_rng(3))
        X = np.eye(2)
        for j, w in enumerate(W):
            D_w = LoggedDataset(1, D.contexts, D.actions, comps @ np.asarray(w), D.propensities, 2)
            plain = train_policy(D_w, NetworkSpec(2, (8,), 2), 1.0, opt, rng=make_rng(4))
            Xw = np.concatenate([X, np.tile(w, (2, 1))], axis=1)
            np.testing.assert_array_equal(np.argmax(fam.probs(Xw), axis=1), np.argmax(plain.probs(X), axis=1))

    def test_deterministic(self):
        D = matched_dataset(500)
        opt = OptimizerConfig(learning_rate=0.01, batch_size=64, epochs=5)
        a = train_policy(D, NetworkSpec(2, (8,), 2), 1.0, opt, rng=make_rng(5))
        b = train_policy(D, NetworkSpec(2, (8,), 2), 1.0, opt, rng=make_rng(5))
        np.testing.assert_array_equal(a.theta, b.theta)

    def test_objective_mostly_non_decreasing(self):
        opt = OptimizerConfig(learning_rate=0.01, batch_size=256, epochs=30)
        monotone = 0
        for seed in range(10):
            h = []
            train_policy(matched_dataset(1000, seed), NetworkSpec(2, (8,), 2), 1.0, opt, rng=make_rng(seed), history=h)
            monotone += bool(np.all(np.diff(h) >= -1e-3))
        assert monotone >= 9

    def test_best_epoch_returned(self):
        D = matched_dataset(500)
        h = []
        opt = OptimizerConfig(learning_rate=0.01, batch_size=64, epochs=10)
        spec = NetworkSpec(2, (8,), 2)
        pi = train_policy(D, spec, 1.0, opt, rng=make_rng(6), history=h)
        np.testing.assert_allclose(training_objective(spec, pi.theta, 1.0, D), max(h), rtol=1e-12)

    def test_weight_decay_shrinks(self):
        D = matched_dataset(500)
        spec = NetworkSpec(2, (8,), 2)
        plain = train_policy(D, spec, 1.0, OptimizerConfig(learning_rate=0.01, epochs=20), rng=make_rng(7))
        decayed = train_policy(D, spec, 1.0, OptimizerConfig(learning_rate=0.01, epochs=20, weight_decay=5.0), rng=make_rng(7))
        assert np.linalg.norm(decayed.theta) < np.linalg.norm(plain.theta)

    def test_errors(self):
        D = matched_dataset(10)
        with pytest.raises(ValueError):
            train_policy(D.take(slice(0, 0)), NetworkSpec(2, (), 2), 1.0, OptimizerConfig())
        with pytest.raises(ValueError):
            train_policy(D, NetworkSpec(2, (), 3), 1.0, OptimizerConfig())
        with pytest.raises(ValueError):
            train_policy(D, NetworkSpec(4, (), 2), 1.0, OptimizerConfig(), Conditional(((1.0, 0.0),)))
        with pytest.raises(ValueError):
            OptimizerConfig(learning_rate=0.0)
