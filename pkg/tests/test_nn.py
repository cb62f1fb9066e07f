import math

import numpy as np
import pytest

from chanex.errors import ConfigurationError, DomainError, UsageError
from chanex.nn import (AdamState, Concat, Conv2d, Dense, NetworkSpec, OdeBlock,
                       Relu, adam_step, backward, backward_input,
                       cross_entropy_loss, forward, init_params,
                       load_checkpoint, network, nmse, nmse_loss,
                       ode_block_forward, output_shape, save_checkpoint)


def finite_difference_worst(spec, in_shape, seed, coords=20, eps=1e-5):
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    x = rng.standard_normal((3,) + in_shape)
    target = rng.standard_normal((3,) + output_shape(spec, in_shape))

    def loss():
        y, _ = forward(spec, params.tensors, x)
        return nmse_loss(y, target)[0]

    y, tape = forward(spec, params.tensors, x)
    _, dy = nmse_loss(y, target)
    grads = backward(tape, dy)
    worst = 0.0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        analytic = np.asarray(grads[name]).reshape(-1)
        for i in rng.choice(flat.size, size=min(coords, flat.size), replace=False):
            saved = flat[i]
            flat[i] = saved + eps
            up = loss()
            flat[i] = saved - eps
            down = loss()
            flat[i] = saved
            fd = (up - down) / (2 * eps)
            worst = max(worst, abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), 1e-8))
    return worst


LAYER_CASES = {
    "dense": (network(Dense(6, 8), Relu(), Dense(8, 4)), (6,)),
    "conv": (network(Conv2d(2, 3, 3, 1), Relu(), Conv2d(3, 2, 3, 1)), (5, 6, 2)),
    "conv_rect": (network(Conv2d(2, 3, (1, 5), (0, 2)), Relu(), Conv2d(3, 2, (1, 5), (0, 2))),
                  (3, 9, 2)),
    "ode": (network(Conv2d(2, 3, 3, 1), Relu(),
                    OdeBlock(network(Conv2d(3, 3, 3, 1), Relu()), steps=4, step_size=0.25),
                    Conv2d(3, 2, 3, 1)), (5, 5, 2)),
    "concat": (network(Concat(network(Dense(4, 6), Relu()), network(Dense(3, 5), Relu())),
                       Dense(11, 4)), (7,)),
}


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_gradients_match_finite_differences(name, seed):
    spec, shape = LAYER_CASES[name]
    assert finite_difference_worst(spec, shape, seed) <= 1e-4


class TestForward:
    def test_empty_spec_is_identity(self):
        x = np.random.default_rng(0).standard_normal((2, 5))
        y, _ = forward(network(), {}, x)
        assert np.array_equal(y, x)

    def test_zero_dense_gives_zero(self):
        spec = network(Dense(4, 3))
        params = {"0.w": np.zeros((3, 4)), "0.b": np.zeros(3)}
        y, _ = forward(spec, params, np.ones((2, 4)))
        assert np.array_equal(y, np.zeros((2, 3)))

    def test_deterministic(self):
        spec, shape = LAYER_CASES["ode"]
        params = init_params(spec, 3)
        x = np.random.default_rng(1).standard_normal((2,) + shape)
        y1, _ = forward(spec, params.tensors, x)
        y2, _ = forward(spec, params.tensors, x)
        assert np.array_equal(y1, y2)

    def test_shape_mismatch_names_layer(self):
        spec = network(Dense(4, 3), Dense(5, 2))
        with pytest.raises(ConfigurationError, match=r"net\[1\]:Dense"):
            forward(spec, init_params(spec, 0).tensors, np.ones((1, 4)))

    def test_static_check_runs_before_arithmetic(self):
        spec = network(Dense(4, 3), Dense(5, 2))
        with pytest.raises(ConfigurationError):
            output_shape(spec, (4,))


class TestBackward:
    def test_zero_loss_gradient_zero_grads(self):
        spec, shape = LAYER_CASES["dense"]
        params = init_params(spec, 0)
        x = np.random.default_rng(0).standard_normal((2,) + shape)
        y, tape = forward(spec, params.tensors, x)
        grads = backward(tape, np.zeros_like(y))
        assert all(np.allclose(g, 0) for g in grads.values())

    def test_wrong_gradient_shape_rejected(self):
        spec, shape = LAYER_CASES["dense"]
        params = init_params(spec, 0)
        _, tape = forward(spec, params.tensors, np.ones((2,) + shape))
        with pytest.raises(UsageError):
            backward(tape, np.zeros((2, 99)))

    def test_zero_inner_ode_gradient_equals_identity(self):
        inner = network(Dense(3, 3))
        spec = network(OdeBlock(inner, steps=4, step_size=0.5))
        params = init_params(spec, 0)
        params.tensors["0.inner.0.w"][:] = 0.0
        x = np.random.default_rng(2).standard_normal((2, 3))
        y, tape = forward(spec, params.tensors, x)
        assert np.allclose(y, x)
        dy = np.random.default_rng(3).standard_normal((2, 3))
        dx = backward_input(tape, dy)
        assert np.allclose(dx, dy)  # identity map passes the gradient through


class TestOdeBlock:
    def test_zero_field_identity(self):
        inner = network(Dense(4, 4))
        params = {"0.w": np.zeros((4, 4)), "0.b": np.zeros(4)}
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert np.allclose(ode_block_forward(inner, params, x, 7, 0.3), x)

    def test_constant_field_closed_form(self):
        inner = network(Dense(4, 4))
        c = np.array([1.0, -2.0, 0.5, 3.0])
        params = {"0.w": np.zeros((4, 4)), "0.b": c}
        x = np.random.default_rng(0).standard_normal((3, 4))
        out = ode_block_forward(inner, params, x, 5, 0.2)
        assert np.allclose(out, x + 5 * 0.2 * c)

    def test_linear_decay_recurrence(self):
        inner = network(Dense(3, 3))
        params = {"0.w": -np.eye(3), "0.b": np.zeros(3)}
        x = np.random.default_rng(1).standard_normal((2, 3))
        out = ode_block_forward(inner, params, x, 10, 0.1)
        assert np.allclose(out, x * 0.9 ** 10, rtol=1e-15, atol=1e-15)

    def test_non_shape_preserving_inner_rejected(self):
        inner = network(Dense(3, 4))
        with pytest.raises(ConfigurationError):
            output_shape(network(OdeBlock(inner, 2, 0.1)), (3,))


class TestLosses:
    def test_nmse_identities(self):
        h = np.random.default_rng(0).standard_normal((4, 5))
        assert nmse_loss(h, h)[0] == 0.0
        assert nmse_loss(np.zeros_like(h), h)[0] == pytest.approx(1.0)

    def test_nmse_direct_value(self):
        value, _ = nmse_loss(np.array([1.1, 1.0]), np.array([1.0, 1.0]))
        assert value == pytest.approx(0.005)

    def test_nmse_zero_truth_rejected(self):
        with pytest.raises(DomainError):
            nmse_loss(np.ones(3), np.zeros(3))

    def test_nmse_gradient_matches_fd(self):
        rng = np.random.default_rng(4)
        est = rng.standard_normal(6)
        truth = rng.standard_normal(6)
        _, grad = nmse_loss(est, truth)
        eps = 1e-6
        for i in range(6):
            bumped = est.copy()
            bumped[i] += eps
            fd = (nmse_loss(bumped, truth)[0] - nmse_loss(est, truth)[0]) / eps
            assert fd == pytest.approx(grad[i], rel=1e-4)

    def test_cross_entropy_uniform(self):
        loss, _ = cross_entropy_loss(np.zeros((1, 7)), [3])
        assert loss == pytest.approx(math.log(7))

    def test_cross_entropy_confident(self):
        logits = np.zeros((1, 5))
        logits[0, 2] = 1e3
        loss, _ = cross_entropy_loss(logits, [2])
        assert loss < 1e-6

    def test_cross_entropy_gradient_sums_to_zero(self):
        logits = np.random.default_rng(1).standard_normal((3, 6))
        _, grad = cross_entropy_loss(logits, [0, 5, 2])
        assert np.allclose(grad.sum(axis=1), 0.0)

    def test_label_out_of_range(self):
        with pytest.raises(UsageError):
            cross_entropy_loss(np.zeros((1, 3)), [3])


class TestAdam:
    def test_zero_gradient_no_motion(self):
        spec = network(Dense(3, 2))
        params = init_params(spec, 0)
        before = params.copy()
        adam_step(params, {k: np.zeros_like(v) for k, v in params.tensors.items()},
                  AdamState(), lr=0.1)
        for k in params.tensors:
            assert np.array_equal(params.tensors[k], before.tensors[k])

    def test_first_step_direction_and_size(self):
        params = init_params(network(Dense(1, 1)), 0)
        params.tensors["0.w"][:] = 0.0
        g = 3.0
        adam_step(params, {"0.w": np.array([[g]])}, AdamState(), lr=0.01)
        step = params.tensors["0.w"][0, 0]
        assert step < 0  # opposite sign of the gradient
        assert abs(step) == pytest.approx(0.01, rel=1e-6)  # bias-corrected unit step

    def test_deterministic(self):
        def run():
            params = init_params(network(Dense(4, 4)), 7)
            state = AdamState()
            rng = np.random.default_rng(0)
            for _ in range(10):
                grads = {k: rng.standard_normal(v.shape) for k, v in params.tensors.items()}
                adam_step(params, grads, state, lr=1e-2)
            return params.tensors["0.w"].copy()

        assert np.array_equal(run(), run())


def test_training_sanity_linear_regression():
    # 200 Adam steps on a 1-hidden-layer net fitting (x, Ax) pairs
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 8))
    x = rng.standard_normal((32, 8))
    y = x @ a.T
    spec = network(Dense(8, 16), Relu(), Dense(16, 5))
    params = init_params(spec, 1)
    state = AdamState()
    out0, _ = forward(spec, params.tensors, x)
    initial = nmse(out0, y)
    for _ in range(200):
        out, tape = forward(spec, params.tensors, x)
        _, dy = nmse_loss(out, y)
        adam_step(params, backward(tape, dy), state, lr=1e-2)
    final, _ = forward(spec, params.tensors, x)
    assert nmse(final, y) <= initial / 100.0


def test_param_init_deterministic_and_named():
    spec = LAYER_CASES["ode"][0]
    a = init_params(spec, 42)
    b = init_params(spec, 42)
    assert list(a.tensors) == list(b.tensors)
    for k in a.tensors:
        assert np.array_equal(a.tensors[k], b.tensors[k])
    assert any(".inner." in k for k in a.tensors)


def test_checkpoint_roundtrip(tmp_path):
    spec = LAYER_CASES["concat"][0]
    params = init_params(spec, 9)
    path = tmp_path / "model.chpt"
    save_checkpoint(params, path)
    assert path.read_bytes()[:4] == b"CHPT"
    loaded = load_checkpoint(path)
    assert loaded.init_seed == 9
    assert list(loaded.tensors) == list(params.tensors)
    for k in params.tensors:
        assert np.array_equal(loaded.tensors[k], params.tensors[k])
