import numpy as np
import pytest

from gaze_fusion.core.tensor import Tensor
from gaze_fusion.errors import ShapeError
from gaze_fusion.settings.config import TrainConfig
from gaze_fusion.training.optim import AdamW, AdamWState, adamw_step, lr_at


def test_lr_schedule_values():
    cfg = TrainConfig(lr0=1e-4, warmup_steps=500, gamma=0.96)
    assert lr_at(cfg, 0, 100) == 0.0
    assert lr_at(cfg, 250, 100) == pytest.approx(5e-5)
    assert lr_at(cfg, 500, 100) == pytest.approx(1e-4)
    assert lr_at(cfg, 699, 100) == pytest.approx(1e-4 * 0.96)
    assert lr_at(cfg, 700, 100) == pytest.approx(1e-4 * 0.9216)


def test_lr_schedule_is_continuous_at_warmup_end():
    cfg = TrainConfig(lr0=1e-3, warmup_steps=100)
    assert lr_at(cfg, 100, 50) - lr_at(cfg, 99, 50) == pytest.approx(1e-5)


def test_lr_without_warmup():
    cfg = TrainConfig(lr0=1e-3, warmup_steps=0, gamma=0.5)
    assert lr_at(cfg, 0, 10) == 1e-3
    assert lr_at(cfg, 25, 10) == pytest.approx(2.5e-4)


def test_lr_rejects_bad_arguments():
    cfg = TrainConfig()
    with pytest.raises(ValueError):
        lr_at(cfg, -1, 10)
    with pytest.raises(ValueError):
        lr_at(cfg, 1, 0)


def test_zero_gradient_without_decay_leaves_params_bitwise():
    state = AdamWState(weight_decay=0.0)
    params = {"w": np.array([0.3, -1.7, 2.0])}
    for _ in range(5):
        params = adamw_step(state, params, {"w": np.zeros(3)}, lr=1e-2)
    np.testing.assert_array_equal(params["w"], [0.3, -1.7, 2.0])


def test_single_step_by_hand():
    state = AdamWState(beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)
    w, g, lr = np.array([1.0, -2.0]), np.array([0.5, -0.25]), 0.1
    out = adamw_step(state, {"w": w}, {"w": g}, lr)["w"]
    # 第一步的偏差校正后 m̂ = g，v̂ = g²
    expected = w - lr * 0.01 * w - lr * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(out, expected, rtol=1e-12)
    assert state.counts["w"] == 1


def test_decay_shrinks_weights_without_gradient_signal():
    state = AdamWState(weight_decay=0.1)
    params = {"w": np.array([1.0, -3.0])}
    for _ in range(3):
        params = adamw_step(state, params, {"w": np.zeros(2)}, lr=0.5)
    np.testing.assert_allclose(params["w"], np.array([1.0, -3.0]) * 0.95 ** 3)


def test_missing_gradient_is_skipped_entirely():
    state = AdamWState(weight_decay=0.1)
    w = np.array([1.0, 2.0])
    out = adamw_step(state, {"w": w, "u": np.ones(2)}, {"w": None, "u": np.ones(2)}, lr=0.1)
    assert out["w"] is w
    assert "w" not in state.m and "w" not in state.counts
    assert state.counts["u"] == 1


def test_gradient_shape_checked():
    with pytest.raises(ShapeError):
        adamw_step(AdamWState(), {"w": np.zeros(2)}, {"w": np.zeros(3)}, lr=0.1)


def test_optimizer_updates_tensors_in_place():
    w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    b = Tensor(np.array([0.5]), requires_grad=True)
    optimizer = AdamW([("w", w), ("b", b)], weight_decay=0.0)
    data = w.data
    w.grad = np.array([1.0, -1.0])
    optimizer.step(0.1)
    assert w.data is data
    np.testing.assert_allclose(w.data, [0.9, -0.9])
    np.testing.assert_array_equal(b.data, [0.5])
    optimizer.zero_grad()
    assert w.grad is None
    with pytest.raises(ValueError):
        AdamW([("w", w), ("w", b)])
