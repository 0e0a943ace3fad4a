import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from casi_inpaint.optim import AdamState, adam_step
from casi_inpaint.tensor import DimensionError, Tensor


def scalar_adam(theta, grads, lr=2e-4, b1=0.5, b2=0.999, eps=1e-8):
    """Textbook Adam on one scalar, step by step."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_defaults():
    s = AdamState()
    assert (s.lr, s.beta1, s.beta2, s.eps, s.t) == (2e-4, 0.5, 0.999, 1e-8, 0)


def test_zero_gradient_leaves_params():
    p = Tensor(np.arange(4.0))
    state = AdamState.for_params([p])
    adam_step([p], [np.zeros(4)], state)
    assert np.array_equal(p.data, np.arange(4.0))
    assert state.t == 1


@given(st.lists(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=8))
def test_first_step_is_lr_times_sign(gs):
    p = Tensor(np.zeros(len(gs)))
    adam_step([p], [np.array(gs)], AdamState.for_params([p]))
    assert np.allclose(p.data, -2e-4 * np.sign(gs), rtol=1e-4, atol=0)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=6), st.floats(-5, 5))
def test_matches_scalar_oracle(gs, theta0):
    p = Tensor(np.array([theta0]))
    state = AdamState.for_params([p])
    for g in gs:
        adam_step([p], [np.array([g])], state)
    assert abs(p.data[0] - scalar_adam(theta0, gs)) <= 1e-12


def test_two_steps_against_oracle():
    p = Tensor(np.array([1.0, -2.0]))
    state = AdamState.for_params([p], lr=1e-2)
    gs = [np.array([0.3, -4.0]), np.array([-0.1, 2.0])]
    for g in gs:
        adam_step([p], [g], state)
    for i, start in enumerate([1.0, -2.0]):
        assert abs(p.data[i] - scalar_adam(start, [g[i] for g in gs], lr=1e-2)) <= 1e-12


def test_shape_mismatch():
    p = Tensor(np.zeros(3))
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(4)], AdamState.for_params([p]))


def test_count_mismatch():
    p = Tensor(np.zeros(3))
    with pytest.raises(DimensionError):
        adam_step([p], [], AdamState.for_params([p]))


def test_lazy_moment_init():
    p = Tensor(np.zeros((2, 2)))
    state = AdamState()
    adam_step([p], [np.ones((2, 2))], state)
    assert state.m[0].shape == (2, 2) and state.t == 1
