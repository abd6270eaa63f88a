import numpy as np
import pytest

from gaze_fusion.core.nn import (
    ConvBackbone,
    LinearLayer,
    MhsaParams,
    Mlp,
    TransformerBlock,
    TransformerEncoder,
    backbone_param_count,
    encoder_param_count,
    linear_param_count,
    mlp_param_count,
)
from gaze_fusion.core.tensor import Tensor
from gaze_fusion.errors import ConfigError, ShapeError


def test_closed_form_counts_match_built_modules(rng):
    assert LinearLayer(5, 3, rng).num_parameters() == linear_param_count(5, 3) == 18
    assert Mlp(6, 4, 2, rng).num_parameters() == mlp_param_count(6, 4, 2)
    assert TransformerEncoder(2, 8, 2, 16, rng).num_parameters() == encoder_param_count(2, 8, 2, 16)
    assert ConvBackbone(16, 1, (4, 8), 12, rng).num_parameters() == backbone_param_count(1, (4, 8), 12)


def test_heads_must_divide_model_dim(rng):
    with pytest.raises(ConfigError):
        MhsaParams(6, 4, rng)
    with pytest.raises(ConfigError):
        encoder_param_count(1, 6, 4, 8)


def test_attention_weights_are_row_stochastic(rng):
    mhsa = MhsaParams(8, 2, rng)
    seen = []
    out = mhsa.forward(Tensor(rng.normal(size=(3, 4, 8))), attention_hook=seen.append)
    assert out.shape == (3, 4, 8)
    weights = seen[0]
    assert weights.shape == (3, 2, 4, 4)
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-12)


def test_encoder_is_permutation_equivariant(rng):
    # 没有位置编码：交换token只会交换输出
    encoder = TransformerEncoder(2, 8, 2, 16, rng)
    z = rng.normal(size=(2, 3, 8))
    out = encoder.forward(Tensor(z)).data
    swapped = encoder.forward(Tensor(z[:, [2, 0, 1], :])).data
    np.testing.assert_allclose(swapped, out[:, [2, 0, 1], :], atol=1e-12)


def test_unbatched_input_matches_batched(rng):
    encoder = TransformerEncoder(1, 8, 4, 16, rng)
    z = rng.normal(size=(3, 8))
    single = encoder.forward(Tensor(z)).data
    batched = encoder.forward(Tensor(z[None])).data[0]
    np.testing.assert_allclose(single, batched, atol=1e-12)


def test_backbone_shapes(rng):
    backbone = ConvBackbone(16, 1, (4, 8), 12, rng)
    assert backbone.forward(Tensor(rng.uniform(size=(5, 16, 16, 1)))).shape == (5, 12)
    assert backbone.forward(Tensor(rng.uniform(size=(16, 16, 1)))).shape == (12,)
    with pytest.raises(ShapeError):
        backbone.forward(Tensor(rng.uniform(size=(2, 8, 8, 1))))


def test_state_dict_round_trip(rng):
    a = Mlp(4, 3, 2, rng)
    b = Mlp(4, 3, 2, rng)
    loaded = b.load_state_dict(a.state_dict())
    assert loaded == ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
    for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data)

    with pytest.raises(ShapeError):
        b.load_state_dict({"fc1.weight": np.zeros((4, 3))})
    with pytest.raises(ShapeError):
        b.load_state_dict({**a.state_dict(), "fc1.bias": np.zeros(5)})


def _reference_mhsa(p: MhsaParams, z: np.ndarray) -> np.ndarray:
    n, d = z.shape
    h, d_k = p.num_heads, p.d_k

    def heads(layer):
        return (z @ layer.weight.data + layer.bias.data).reshape(n, h, d_k).transpose(1, 0, 2)

    q, k, v = heads(p.w_q), heads(p.w_k), heads(p.w_v)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d_k)
    scores = np.exp(scores - scores.max(axis=-1, keepdims=True))
    weights = scores / scores.sum(axis=-1, keepdims=True)
    context = (weights @ v).transpose(1, 0, 2).reshape(n, d)
    return context @ p.w_o.weight.data + p.w_o.bias.data


def test_mhsa_matches_direct_numpy(rng):
    mhsa = MhsaParams(4, 2, rng)
    for layer in (mhsa.w_q, mhsa.w_k, mhsa.w_v, mhsa.w_o):
        layer.bias.data[...] = rng.normal(size=layer.bias.shape)
    z = rng.normal(size=(3, 4))
    np.testing.assert_allclose(mhsa.forward(Tensor(z)).data, _reference_mhsa(mhsa, z), rtol=0, atol=1e-12)


def test_single_token_attends_to_itself(rng):
    mhsa = MhsaParams(8, 4, rng)
    seen = []
    mhsa.forward(Tensor(rng.normal(size=(2, 1, 8))), attention_hook=seen.append)
    assert seen[0].shape == (2, 4, 1, 1)
    assert np.all(seen[0] == 1.0)


def test_block_with_zero_outputs_is_identity(rng):
    block = TransformerBlock(8, 2, 16, rng)
    block.mhsa.w_o.zero_()
    block.mlp.fc2.zero_()
    z = rng.normal(size=(2, 3, 8))
    np.testing.assert_array_equal(block.forward(Tensor(z)).data, z)


def test_encoder_applies_blocks_in_order(rng):
    encoder = TransformerEncoder(2, 8, 2, 16, rng)
    z = Tensor(rng.normal(size=(2, 3, 8)))
    by_hand = encoder.final_ln.forward(encoder.blocks[1].forward(encoder.blocks[0].forward(z)))
    np.testing.assert_array_equal(encoder.forward(z).data, by_hand.data)
