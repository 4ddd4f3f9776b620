import math

import numpy as np
import pytest

from naimfuse.optim import Adam, AdamState, TrainingError, adam_step
from naimfuse.tensor import Tensor


def p(value, name="w"):
    return Tensor(np.array(value, dtype=float), requires_grad=True, name=name)


def test_zero_gradient_leaves_parameter():
    w = p([1.0, -2.0])
    adam_step([w], [np.zeros(2)], AdamState())
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


def test_first_step_moves_by_learning_rate():
    w = p(0.5)
    state = AdamState(learning_rate=1e-3)
    adam_step([w], [np.array(1.0)], state)
    # m_hat = v_hat = 1, step = lr * 1 / (1 + eps)
    assert 0.5 - w.data == pytest.approx(1e-3 / (1 + 1e-8), abs=1e-15)
    assert state.t == 1


def test_two_identical_steps():
    w = p(0.0)
    state = AdamState(learning_rate=1e-2)
    trace = [w.data.item()]
    for _ in range(2):
        adam_step([w], [np.array(2.0)], state)
        trace.append(w.data.item())
    assert state.t == 2
    assert trace[0] > trace[1] > trace[2]
    # constant gradient keeps m_hat / sqrt(v_hat) = 1 at every step
    assert trace[2] == pytest.approx(-2e-2 / (1 + 1e-8 / 2), rel=1e-9)


def test_decoupled_weight_decay_without_gradient():
    w = p(2.0)
    adam_step([w], [np.array(0.0)], AdamState(learning_rate=0.1, weight_decay=0.5))
    assert w.data == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_non_finite_gradient_names_parameter():
    w = p([1.0], name="layer0.wq")
    with pytest.raises(TrainingError, match="layer0.wq"):
        adam_step([w], [np.array([math.nan])], AdamState())


def test_learning_rate_must_be_positive():
    with pytest.raises(ValueError):
        AdamState(learning_rate=0.0)


def test_adam_class_uses_grad_buffers():
    w = p([1.0, 1.0])
    opt = Adam([w], lr=0.1)
    w.grad = np.array([1.0, -1.0])
    opt.step()
    assert w.data[0] < 1.0 < w.data[1]
    opt.zero_grad()
    assert w.grad is None
    assert [m.shape for m in opt.state.m] == [(2,)]
