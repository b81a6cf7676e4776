import numpy as np
import pytest
from helpers import central_difference, max_relative_error

from siamsearch.encoder import (
    PARAM_NAMES,
    EncoderParams,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from siamsearch.errors import DimensionMismatch


def test_init_deterministic_zero_bias():
    a = init_params(8, 8, 6, seed=5)
    b = init_params(8, 8, 6, seed=5)
    for name in PARAM_NAMES:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not a.b1.any() and not a.b2.any()
    assert all(not v.any() for v in a.velocity.values())


def test_init_scale_follows_fan_in():
    p = init_params(400, 100, 50, seed=0)
    assert p.W1.std() == pytest.approx(1 / np.sqrt(400), rel=0.02)
    assert p.W2.std() == pytest.approx(1 / np.sqrt(100), rel=0.05)


def test_zero_weights_output_bias():
    p = init_params(4, 5, 3, seed=0)
    p.W1[:] = 0
    p.W2[:] = 0
    p.b2[:] = [1.0, -2.0, 0.5]
    F, _ = forward(p, np.random.default_rng(0).normal(size=(7, 4)))
    np.testing.assert_array_equal(F, np.tile(p.b2, (7, 1)))


def test_zero_first_layer_gives_constant_rows():
    p = init_params(4, 5, 3, seed=0)
    p.W1[:] = 0
    p.b1[:] = np.arange(5) * 0.1
    F, _ = forward(p, np.random.default_rng(1).normal(size=(6, 4)))
    assert np.all(F == F[0])


def test_forward_rejects_wrong_width():
    p = init_params(4, 5, 3, seed=0)
    with pytest.raises(DimensionMismatch):
        forward(p, np.zeros((2, 5)))
    _, cache = forward(p, np.zeros((2, 4)))
    with pytest.raises(DimensionMismatch):
        backward(p, cache, np.zeros((3, 3)))


def test_zero_upstream_gradient():
    p = init_params(4, 5, 3, seed=0)
    _, cache = forward(p, np.ones((2, 4)))
    grads, dX = backward(p, cache, np.zeros((2, 3)))
    assert all(not g.any() for g in grads.values()) and not dX.any()


def test_b2_gradient_is_column_sum():
    p = init_params(4, 5, 3, seed=0)
    _, cache = forward(p, np.random.default_rng(2).normal(size=(6, 4)))
    dF = np.random.default_rng(3).normal(size=(6, 3))
    grads, _ = backward(p, cache, dF)
    np.testing.assert_allclose(grads["b2"], dF.sum(axis=0))


def _randomize(p, rng):
    p.b1[:] = rng.normal(size=p.b1.shape)
    p.b2[:] = rng.normal(size=p.b2.shape)
    return p


@pytest.mark.parametrize("trial", range(5))
def test_backward_matches_finite_differences(trial):
    rng = np.random.default_rng(100 + trial)
    p = _randomize(init_params(8, 8, 6, seed=trial), rng)
    X = rng.normal(size=(4, 8))
    dF = rng.normal(size=(4, 6))
    grads, dX = backward(p, forward(p, X)[1], dF)

    for name in PARAM_NAMES:
        def objective(w, name=name):
            q = p.copy()
            setattr(q, name, w)
            return float(np.sum(forward(q, X)[0] * dF))

        numeric = central_difference(objective, getattr(p, name))
        assert max_relative_error(grads[name], numeric) <= 1e-5, name
    numeric = central_difference(lambda Z: float(np.sum(forward(p, Z)[0] * dF)), X)
    assert max_relative_error(dX, numeric) <= 1e-5


def test_sgd_plain_step():
    p = init_params(3, 2, 2, seed=0)
    before = p.copy()
    grads = {n: np.ones_like(getattr(p, n)) for n in PARAM_NAMES}
    sgd_step(p, grads, lr=0.5, momentum=0.0, weight_decay=0.0)
    for n in PARAM_NAMES:
        np.testing.assert_array_equal(getattr(p, n), getattr(before, n) - 0.5)


def test_sgd_zero_gradient_only_decays_weights():
    p = init_params(3, 2, 2, seed=0)
    p.b1[:] = 1.0
    before = p.copy()
    grads = {n: np.zeros_like(getattr(p, n)) for n in PARAM_NAMES}
    sgd_step(p, grads, lr=0.1, momentum=0.9, weight_decay=0.01)
    np.testing.assert_allclose(p.W1, before.W1 * (1 - 0.1 * 0.01))
    np.testing.assert_array_equal(p.b1, before.b1)


def test_sgd_momentum_recurrence():
    p = init_params(3, 2, 2, seed=0)
    g = {n: np.full_like(getattr(p, n), 0.25) for n in PARAM_NAMES}
    sgd_step(p, g, lr=1e-3, momentum=0.9, weight_decay=0.0)
    sgd_step(p, g, lr=1e-3, momentum=0.9, weight_decay=0.0)
    for n in PARAM_NAMES:
        np.testing.assert_allclose(p.velocity[n], 1.9 * 0.25)


def test_checkpoint_round_trip_exact(tmp_path):
    p = _randomize(init_params(7, 5, 3, seed=9), np.random.default_rng(4))
    sgd_step(p, {n: np.random.default_rng(5).normal(size=getattr(p, n).shape) for n in PARAM_NAMES}, 0.1)
    save_checkpoint(p, tmp_path / "ckpt.json")
    q = load_checkpoint(tmp_path / "ckpt.json")
    for n in PARAM_NAMES:
        assert np.array_equal(getattr(p, n), getattr(q, n))
        assert np.array_equal(p.velocity[n], q.velocity[n])


def test_param_shape_validation():
    with pytest.raises(DimensionMismatch):
        EncoderParams(np.zeros((3, 2)), np.zeros(4), np.zeros((2, 3)), np.zeros(2))
