import numpy as np
import pytest

from gaze_fusion.core import ops
from gaze_fusion.core.tensor import Tape, Tensor, active_tape, backward, set_debug_checks
from gaze_fusion.errors import BackwardError, ShapeError


def test_no_recording_without_tape():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.mul(x, x)
    assert not y.requires_grad
    assert active_tape() is None


def test_backward_accumulates_into_leaves():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        # x 被用了两次，梯度需要累加
        loss = ops.reduce_sum(ops.add(ops.mul(x, x), x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, 2.0 * x.data + 1.0)


def test_constants_receive_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    c = Tensor([3.0, 4.0])
    with Tape() as tape:
        loss = ops.reduce_sum(ops.mul(x, c))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, c.data)
    assert c.grad is None


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, x)
    with pytest.raises(BackwardError):
        tape.backward(y)


def test_detached_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape():
        loss = ops.reduce_sum(x)
    with pytest.raises(BackwardError):
        backward(loss.detach())


def test_second_backward_requires_reset():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    tape.backward(loss)
    with pytest.raises(BackwardError):
        tape.backward(loss)

    tape.reset()
    with tape:
        loss = ops.reduce_sum(ops.mul(x, x))
    x.grad = None
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, 2.0 * x.data)


def test_debug_checks_flag_non_finite_outputs():
    set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError):
            ops.mul(Tensor([1e200]), Tensor([1e200]))
    finally:
        set_debug_checks(False)
    # 关闭后只产生inf，不报错
    assert np.isinf(ops.mul(Tensor([1e200]), Tensor([1e200])).data[0])


def test_item_requires_single_element():
    assert Tensor(3.5).item() == 3.5
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_backward_is_linear_in_the_loss(rng):
    x_data = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(4, 2)))

    def losses(x):
        first = ops.reduce_sum(ops.gelu(ops.matmul(x, w)))
        second = ops.reduce_sum(ops.mul(ops.softmax_rows(x), x))
        return first, second

    def grad_of(combine):
        x = Tensor(x_data.copy(), requires_grad=True)
        with Tape() as tape:
            loss = combine(*losses(x))
        tape.backward(loss)
        return x.grad

    alpha, beta = 0.7, -2.5
    g_first = grad_of(lambda a, b: a)
    g_second = grad_of(lambda a, b: b)
    combined = grad_of(lambda a, b: ops.add(ops.mul(a, alpha), ops.mul(b, beta)))
    np.testing.assert_allclose(combined, alpha * g_first + beta * g_second, rtol=1e-12, atol=1e-12)
