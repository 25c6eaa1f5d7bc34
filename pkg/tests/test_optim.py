import numpy as np
import pytest

from chanmae.autodiff import Parameter, backward, sum_all
from chanmae.errors import ContractError
from chanmae.optim import Adam


def test_zero_gradient_leaves_parameter_unchanged():
    p = Parameter("p", [1.0, -2.0])
    opt = Adam([p])
    before = p.data.copy()
    opt.zero_grad()
    opt.step()
    assert np.array_equal(p.data, before)


def test_first_step_matches_hand_formula():
    g = 0.37
    lr, beta1, beta2, eps = 1e-3, 0.9, 0.999, 1e-8
    p = Parameter("p", [5.0])
    opt = Adam([p], lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    p.grad[:] = g
    opt.step()
    # bias correction at t=1: m_hat = g, v_hat = g^2
    expected = 5.0 - lr * g / (np.sqrt(g * g) + eps)
    assert abs(p.data[0] - expected) < 1e-9
    assert abs(abs(p.data[0] - 5.0) - lr) < 1e-6  # update magnitude ~ lr


def test_determinism_over_ten_steps():
    def run():
        rng = np.random.default_rng(42)
        p = Parameter("p", rng.normal(size=(4, 3)))
        opt = Adam([p], lr=1e-2)
        for _ in range(10):
            opt.zero_grad()
            loss = sum_all(p.value * p.value)
            backward(loss)
            opt.step()
        return p.data.copy()

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()


def test_step_counter_increments():
    p = Parameter("p", [0.0])
    opt = Adam([p])
    for t in range(1, 6):
        opt.step()
        assert opt.step_count == t


def test_frozen_parameter_not_updated():
    p = Parameter("p", [1.0], trainable=False)
    opt = Adam([p])
    p.value.grad[:] = 9.9  # even with a stale grad, frozen params stay put
    opt.step()
    assert p.data[0] == 1.0


def test_negative_lr_rejected():
    with pytest.raises(ContractError):
        Adam([Parameter("p", [0.0])], lr=-1.0)
