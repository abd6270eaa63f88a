import numpy as np
import pytest

from gaze_fusion.core.tensor import Tape, Tensor
from gaze_fusion.errors import ConfigError, ShapeError
from gaze_fusion.geometry.gaze import GazeAngles
from gaze_fusion.models.gam import (
    GamBank,
    GamMode,
    apply_gam,
    param_budget,
    verify_param_budget,
)
from gaze_fusion.models.ttgf import build_model
from gaze_fusion.core import ops
from gaze_fusion.training.gradcheck import randomize_zero_parameters


def test_anchor_offset_is_exactly_zero(rng):
    bank = GamBank(4, 8, 6, rng)
    randomize_zero_parameters(bank, rng, scale=1.0)
    for _ in range(1000):
        f_lr = Tensor(rng.normal(size=(1, 8)) * 10.0)
        np.testing.assert_array_equal(bank.offset(0, f_lr).data, np.zeros((1, 2)))


def test_correct_leaves_anchor_rows_bitwise(rng):
    bank = GamBank(3, 8, 6, rng)
    randomize_zero_parameters(bank, rng, scale=1.0)
    gaze = Tensor(rng.normal(size=(6, 2)))
    f_lr = Tensor(rng.normal(size=(6, 8)))
    slots = np.array([0, 1, 2, 0, 2, 1])
    corrected = bank.correct(gaze, f_lr, slots).data
    anchor = slots == 0
    np.testing.assert_array_equal(corrected[anchor], gaze.data[anchor])
    assert not np.array_equal(corrected[~anchor], gaze.data[~anchor])


def test_new_heads_start_at_zero_offset(rng):
    bank = GamBank(4, 8, 6, rng)
    f_lr = Tensor(rng.normal(size=(5, 8)))
    for slot in range(4):
        np.testing.assert_array_equal(bank.offset(slot, f_lr).data, np.zeros((5, 2)))


def test_routing_matches_per_slot_offsets(rng):
    bank = GamBank(3, 8, 6, rng)
    randomize_zero_parameters(bank, rng, scale=1.0)
    f_lr = rng.normal(size=(5, 8))
    slots = np.array([2, 1, 0, 2, 1])
    routed = bank.route(Tensor(f_lr), slots).data
    for row, slot in enumerate(slots):
        expected = bank.offset(int(slot), Tensor(f_lr[row:row + 1])).data[0]
        np.testing.assert_allclose(routed[row], expected, atol=1e-12)


def test_param_budget_is_shared_plus_trainable_heads(tiny_config, rng):
    model = build_model(tiny_config.model, rng)
    bank = GamBank(4, model.fused_dim, tiny_config.model.gam_hidden, rng)
    report = verify_param_budget(model, bank)
    n, k = model.num_parameters(), bank.head_param_count()
    assert report.trainable == n + 3 * k == n + bank.num_parameters()
    assert report.all_heads == n + 4 * k
    assert report.separate_models == 4 * n
    assert param_budget(1, n, k) == n


def test_constant_heads(rng):
    bank = GamBank(3, 8, 6, rng, mode=GamMode.CONSTANT)
    assert bank.head_param_count() == 2
    assert bank.num_parameters() == 4
    bank.heads[1].bias.data[...] = [0.1, -0.2]
    offsets = bank.route(Tensor(rng.normal(size=(2, 8))), [1, 0]).data
    np.testing.assert_array_equal(offsets, [[0.1, -0.2], [0.0, 0.0]])


def test_zeroed_bank_is_identity(rng):
    bank = GamBank.zeroed(4, 8)
    assert bank.num_parameters() == 0
    assert bank.head_param_count() == 0
    gaze = Tensor(rng.normal(size=(4, 2)))
    corrected = bank.correct(gaze, Tensor(rng.normal(size=(4, 8))), [0, 1, 2, 3]).data
    np.testing.assert_array_equal(corrected, gaze.data)


def test_absent_datasets_receive_no_gradient(rng):
    bank = GamBank(4, 8, 6, rng)
    randomize_zero_parameters(bank, rng, scale=1.0)
    f_lr = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    gaze = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(bank.correct(gaze, f_lr, [0, 1, 1, 0]))
    tape.backward(loss)
    assert all(p.grad is not None for _, p in bank.heads[1].named_parameters())
    for slot in (2, 3):
        assert all(p.grad is None for _, p in bank.heads[slot].named_parameters())


def test_slot_and_shape_errors(rng):
    bank = GamBank(2, 8, 4, rng)
    with pytest.raises(IndexError):
        bank.offset(2, Tensor(np.zeros((1, 8))))
    with pytest.raises(IndexError):
        bank.route(Tensor(np.zeros((2, 8))), [0, -1])
    with pytest.raises(ShapeError):
        bank.offset(1, Tensor(np.zeros((1, 5))))
    with pytest.raises(ShapeError):
        bank.route(Tensor(np.zeros((2, 8))), [0])
    with pytest.raises(ConfigError):
        GamBank(0, 8, 4, rng)


def test_apply_gam_adds_componentwise():
    g = apply_gam(GazeAngles(0.1, -0.2), GazeAngles(0.05, 0.05))
    assert g == GazeAngles(0.1 + 0.05, -0.2 + 0.05)
    with pytest.raises(TypeError):
        apply_gam(GazeAngles(0.0, 0.0), Tensor(np.zeros(2)))
