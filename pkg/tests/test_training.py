import math
from dataclasses import replace

import numpy as np
import pytest

import oracles
from energy_align.aligning import ShiftVector
from energy_align.errors import ConfigError, ContractError
from energy_align.model import AFFINE, COSINE, forward_logits, init_params
from energy_align.training import (
    Adam,
    CilConfig,
    DivergenceError,
    SgdConfig,
    Sgd,
    Teacher,
    compound_loss,
    cross_entropy,
    distill_weight,
    kd_loss,
    learning_rate,
    step_weight_decay,
    train,
)


def test_distill_weight_constants():
    assert distill_weight(1.0, 90, 10) == 0.9
    assert distill_weight(1.0, 0, 10) == 0.0
    assert distill_weight(0.5, 10, 10) == 0.25


def test_step_weight_decay_constants():
    assert step_weight_decay(0.0005, 0.5, 1) == 0.0005
    assert step_weight_decay(0.0005, 0.5, 3) == 0.000125
    with pytest.raises(ContractError):
        step_weight_decay(0.0005, 0.5, 0)


def test_cross_entropy_uniform_logits():
    loss, g = cross_entropy(np.zeros(4), 1)
    assert loss == pytest.approx(math.log(4))
    np.testing.assert_allclose(g, [0.25, -0.75, 0.25, 0.25])


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ContractError):
        cross_entropy(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ContractError):
        cross_entropy(np.zeros((2, 3)), [0])


def _fd_logits(fn, z):
    z = z.copy()
    return oracles.central_difference(lambda: fn(z), [z])[0]


def test_cross_entropy_gradient_fd():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, 5)
    _, g = cross_entropy(z, y)
    assert oracles.rel_error(g, _fd_logits(lambda v: cross_entropy(v, y)[0], z)) < 1e-6


@pytest.mark.parametrize("temp", [1.0, 2.0, 4.0])
def test_kd_gradient_fd(temp):
    rng = np.random.default_rng(1)
    s = rng.normal(size=(5, 3))
    t = rng.normal(size=(5, 3))
    _, g = kd_loss(s, t, temp)
    assert oracles.rel_error(g, _fd_logits(lambda v: kd_loss(v, t, temp)[0], s)) < 1e-6


def test_kd_equal_distributions_give_entropy():
    t = np.array([[1.0, 0.0, -1.0]])
    loss, g = kd_loss(t, t, 2.0)
    q = np.exp(t[0] / 2) / np.exp(t[0] / 2).sum()
    assert loss == pytest.approx(-(q * np.log(q)).sum())
    np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_kd_empty_old_slice_is_zero():
    loss, g = kd_loss(np.zeros((3, 0)), np.zeros((3, 0)), 2.0)
    assert loss == 0.0 and g.shape == (3, 0)


@pytest.mark.parametrize("temp", [1.0, 2.0, 4.0])
def test_compound_gradient_fd(temp):
    rng = np.random.default_rng(2)
    z = rng.normal(size=(4, 5))
    y = rng.integers(0, 5, 4)
    t = rng.normal(size=(4, 3))
    _, g = compound_loss(z, y, t, 0.6, temp)
    assert oracles.rel_error(g, _fd_logits(lambda v: compound_loss(v, y, t, 0.6, temp)[0], z)) < 1e-6


def test_compound_reduces_to_ce_without_teacher():
    z = np.random.default_rng(0).normal(size=(3, 4))
    y = np.array([0, 1, 2])
    assert compound_loss(z, y, np.zeros((3, 0)), 0.5, 2.0)[0] == pytest.approx(0.5 * cross_entropy(z, y)[0])
    with pytest.raises(ContractError):
        compound_loss(z, y, np.zeros((3, 2)), 1.5, 2.0)


def test_sgd_update_by_hand():
    p = np.array([1.0, 2.0])
    opt = Sgd([p], [True], momentum=0.5, weight_decay=0.1)
    opt.step([np.array([1.0, 1.0])], lr=0.1)
    # v = g; p -= 0.1 (v + 0.1 p)
    np.testing.assert_allclose(p, [1.0 - 0.1 * 1.1, 2.0 - 0.1 * 1.2])
    opt.step([np.array([1.0, 1.0])], lr=0.1)
    # v = 0.5 * 1 + 1 = 1.5
    np.testing.assert_allclose(p, [0.89 - 0.1 * (1.5 + 0.089), 1.88 - 0.1 * (1.5 + 0.188)])


def test_sgd_does_not_decay_masked_params():
    b = np.array([1.0])
    Sgd([b], [False], momentum=0.0, weight_decay=10.0).step([np.zeros(1)], lr=1.0)
    assert b[0] == 1.0


def test_adam_moves_against_gradient():
    p = np.array([0.0, 0.0])
    opt = Adam([p], [False], weight_decay=0.0)
    opt.step([np.array([1.0, -1.0])], lr=0.01)
    np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-5)


def test_learning_rate_schedules():
    cos = SgdConfig(lr=0.1, schedule="cosine", epochs=10)
    assert learning_rate(cos, 0) == pytest.approx(0.1)
    assert learning_rate(cos, 5) == pytest.approx(0.05)
    step = SgdConfig(lr=1.0, schedule="step", milestones=(2, 4), gamma=0.1)
    assert [learning_rate(step, e) for e in range(5)] == pytest.approx([1, 1, 0.1, 0.1, 0.01])
    warm = SgdConfig(lr=1.0, schedule="constant", warmup_epochs=4)
    assert [learning_rate(warm, e) for e in range(5)] == pytest.approx([0.25, 0.5, 0.75, 1.0, 1.0])


@pytest.mark.parametrize(
    "kwargs",
    [{"lr": -1}, {"momentum": 1.0}, {"weight_decay": -1}, {"temperature": 0}, {"batch_size": 0},
     {"schedule": "poly"}, {"optimizer": "rmsprop"}],
)
def test_sgd_config_validation(kwargs):
    with pytest.raises(ConfigError):
        SgdConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [{"budget": -1}, {"steps": 0}, {"decay_factor": 0.0}, {"lambda_base": -1}])
def test_cil_config_validation(kwargs):
    with pytest.raises(ConfigError):
        CilConfig(**kwargs)


def _blobs(seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], 30)
    x = rng.normal(size=(90, 2)) * 0.5 + np.array([[2, 0], [-2, 0], [0, 2]])[y]
    return x, y


@pytest.mark.parametrize("head", [AFFINE, COSINE])
def test_train_learns_and_is_deterministic(head):
    x, y = _blobs()
    cfg = SgdConfig(lr=0.1, epochs=15, batch_size=16, seed=3)
    a = train(init_params([2, 8, 3], head, seed=1), x, y, cfg)
    b = train(init_params([2, 8, 3], head, seed=1), x, y, cfg)
    assert a.trace == b.trace
    assert a.trace[-1][2] < a.trace[0][2]
    assert np.mean(np.argmax(forward_logits(a.model, x), 1) == y) > 0.9
    assert a.model.step == 15 * 6


def test_train_with_teacher_uses_corrected_logits():
    x, y = _blobs()
    cfg = SgdConfig(lr=0.05, epochs=3, seed=0)
    t_model = train(init_params([2, 2], AFFINE, seed=0), x[y < 2], y[y < 2], cfg).model.frozen_copy()
    shifts = ShiftVector([0.0, 1.0], anchor=0)
    teacher = Teacher(t_model, shifts)
    np.testing.assert_allclose(teacher.corrected_logits(x), forward_logits(t_model, x) + [0.0, 1.0])
    res = train(init_params([2, 3], AFFINE, seed=0), x, y, cfg, teacher=teacher, lam=0.5)
    assert all(math.isfinite(v) for _, _, v in res.trace)


def test_train_guards():
    x, y = _blobs()
    m = init_params([2, 3], AFFINE, seed=0)
    with pytest.raises(ContractError):
        train(m.frozen_copy(), x, y, SgdConfig(epochs=1))
    with pytest.raises(ContractError):
        train(m, x[:0], y[:0], SgdConfig(epochs=1))
    with pytest.raises(DivergenceError):
        with np.errstate(all="ignore"):
            train(m, x * 1e150, y, replace(SgdConfig(), lr=1e200, momentum=0.0, schedule="constant", epochs=3))
