import numpy as np
import pytest

from gaze_fusion.core.tensor import Tensor
from gaze_fusion.models.ttgf import (
    FusionGazeModel,
    FusionTopology,
    TgfModule,
    build_model,
    expected_param_count,
)
from gaze_fusion.settings.config import load_run_config
from gaze_fusion.errors import ShapeError

from .conftest import CONFIG_DIR


def _inputs(config, rng, batch):
    c = config.model
    return (
        rng.uniform(size=(batch, c.face_size, c.face_size, c.in_channels)),
        rng.uniform(size=(batch, c.eye_size, c.eye_size, c.in_channels)),
        rng.uniform(size=(batch, c.eye_size, c.eye_size, c.in_channels)),
    )


@pytest.mark.parametrize("topology", list(FusionTopology))
def test_param_count_matches_closed_form(topology, tiny_config, rng):
    model_config = tiny_config.model.model_copy(update={"topology": topology})
    model = build_model(model_config, rng)
    assert model.num_parameters() == expected_param_count(model_config)


@pytest.mark.parametrize("topology", list(FusionTopology))
def test_forward_shapes(topology, tiny_config, rng):
    config = tiny_config.model_copy(update={"model": tiny_config.model.model_copy(update={"topology": topology})})
    model = build_model(config.model, rng)
    face, left, right = _inputs(config, rng, 3)
    out = model.forward(Tensor(face), Tensor(left), Tensor(right))
    assert out.gaze.shape == (3, 2)
    assert out.fused.shape == (3, model.fused_dim)

    single = model.forward(Tensor(face[0]), Tensor(left[0]), Tensor(right[0]))
    assert single.gaze.shape == (2,)
    np.testing.assert_allclose(single.gaze.data, out.gaze.data[0], atol=1e-12)


def test_default_fusion_is_eh_lr(tiny_config, rng):
    model = build_model(tiny_config.model, rng)
    assert model.topology == FusionTopology.EH_LR
    assert model.fused_dim == 2 * tiny_config.model.proj_dim


def test_left_head_feature_ignores_right_eye(tiny_config, rng):
    model = build_model(tiny_config.model, rng)
    for _ in range(100):
        face, left, right = _inputs(tiny_config, rng, 1)
        other_right = rng.uniform(size=right.shape)
        a = model.forward(Tensor(face), Tensor(left), Tensor(right)).intermediates
        b = model.forward(Tensor(face), Tensor(left), Tensor(other_right)).intermediates
        np.testing.assert_array_equal(a["f_lh"].data, b["f_lh"].data)
        assert not np.array_equal(a["f_rh"].data, b["f_rh"].data)


def test_two_eyes_ignores_face(tiny_config, rng):
    config = tiny_config.model.model_copy(update={"topology": FusionTopology.TWO_EYES})
    model = build_model(config, rng)
    face, left, right = _inputs(tiny_config, rng, 2)
    a = model.forward(Tensor(face), Tensor(left), Tensor(right)).gaze.data
    b = model.forward(Tensor(rng.uniform(size=face.shape)), Tensor(left), Tensor(right)).gaze.data
    np.testing.assert_array_equal(a, b)


def test_tgf_token_order_matters(rng):
    tgf = TgfModule(8, 4, 1, 2, 8, rng)
    f_a, f_b = rng.normal(size=(2, 8)), rng.normal(size=(2, 8))
    ab = tgf.forward(Tensor(f_a), Tensor(f_b)).data
    ba = tgf.forward(Tensor(f_b), Tensor(f_a)).data
    assert ab.shape == (2, 8)
    # 编码器对token排列等变，所以交换输入只交换两半输出
    np.testing.assert_allclose(ab[:, :4], ba[:, 4:], atol=1e-12)
    with pytest.raises(ShapeError):
        tgf.forward(Tensor(f_a))


def test_same_seed_builds_identical_models(tiny_config):
    a = build_model(tiny_config.model, np.random.default_rng(5))
    b = build_model(tiny_config.model, np.random.default_rng(5))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_full_scale_model_runs_one_sample():
    config = load_run_config(CONFIG_DIR / "full.conf")
    rng = np.random.default_rng(0)
    model = build_model(config.model, rng)
    assert model.num_parameters() == expected_param_count(config.model) > 20_000_000
    face, left, right = _inputs(config, rng, 1)
    out = model.forward(Tensor(face[0]), Tensor(left[0]), Tensor(right[0]))
    assert out.gaze.shape == (2,)
    assert out.fused.shape == (256,)
    assert np.all(np.isfinite(out.gaze.data))


def test_right_head_feature_ignores_left_eye(tiny_config, rng):
    model = build_model(tiny_config.model, rng)
    face, left, right = _inputs(tiny_config, rng, 4)
    a = model.forward(Tensor(face), Tensor(left), Tensor(right)).intermediates
    b = model.forward(Tensor(face), Tensor(rng.uniform(size=left.shape)), Tensor(right)).intermediates
    np.testing.assert_array_equal(a["f_rh"].data, b["f_rh"].data)
    assert not np.array_equal(a["f_lh"].data, b["f_lh"].data)


def test_swapping_eyes_changes_gaze(tiny_config, rng):
    model = build_model(tiny_config.model, rng)
    face, left, right = _inputs(tiny_config, rng, 2)
    a = model.forward(Tensor(face), Tensor(left), Tensor(right)).gaze.data
    b = model.forward(Tensor(face), Tensor(right), Tensor(left)).gaze.data
    assert not np.allclose(a, b)


def test_parallel_with_identity_blocks_projects_normalized_features(tiny_config, rng):
    config = tiny_config.model.model_copy(update={"topology": FusionTopology.PAR})
    model = build_model(config, rng)
    for block in model.tgf_par.encoder.blocks:
        block.mhsa.w_o.zero_()
        block.mlp.fc2.zero_()
    face, left, right = _inputs(tiny_config, rng, 3)
    out = model.forward(Tensor(face), Tensor(left), Tensor(right))
    tgf = model.tgf_par
    parts = [
        tgf.proj.forward(tgf.encoder.final_ln.forward(out.intermediates[name])).data
        for name in ("f_le", "f_re", "f_h")
    ]
    expected = model.gaze_mlp.forward(Tensor(np.concatenate(parts, axis=-1))).data
    np.testing.assert_allclose(out.gaze.data, expected, rtol=0, atol=1e-12)


def test_fusion_order_changes_parameter_count(tiny_config, rng):
    counts = {}
    for topology in (FusionTopology.EH_LR, FusionTopology.LR_EH):
        config = tiny_config.model.model_copy(update={"topology": topology})
        counts[topology] = build_model(config, rng).num_parameters()
        assert counts[topology] == expected_param_count(config)
    assert counts[FusionTopology.EH_LR] != counts[FusionTopology.LR_EH]


def test_fusion_model_requires_encode_and_fused_dim(tiny_config, rng):
    class Incomplete(FusionGazeModel):
        topology = FusionTopology.EH_LR

    with pytest.raises(TypeError):
        Incomplete(tiny_config.model, rng)
