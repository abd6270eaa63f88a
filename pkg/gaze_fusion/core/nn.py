"""
网络层
线性层、多头自注意力、Transformer块与编码器，以及代替ResNet18的小型卷积骨干
"""

import math
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from . import ops
from .tensor import Tensor

AttentionHook = Callable[[np.ndarray], None]


class Module:
    """参数容器基类，按属性定义顺序枚举参数"""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{index}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> List[str]:
        """载入参数，返回已载入的名字；strict 时名字与形状必须完全一致"""
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            unexpected = sorted(set(state) - set(params))
            if missing or unexpected:
                raise ShapeError(f"参数名不匹配: 缺少 {missing[:5]}，多余 {unexpected[:5]}")
        loaded = []
        for name, value in state.items():
            if name not in params:
                continue
            target = params[name]
            if target.shape != value.shape:
                raise ShapeError(f"参数 {name} 形状不一致: {target.shape} 与 {value.shape}")
            target.data[...] = value
            loaded.append(name)
        return loaded


def parameter(data: np.ndarray, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def fan_in_uniform(rng: np.random.Generator, fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer(Module):
    """全连接层 y = xW + b，W 形状 (d_in, d_out)"""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = parameter(fan_in_uniform(rng, d_in, (d_in, d_out)))
        self.bias = parameter(np.zeros(d_out))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"线性层输入维度应为 {self.d_in}，得到形状 {x.shape}")
        return ops.add(ops.matmul(x, self.weight), self.bias)

    def zero_(self) -> None:
        self.weight.data[...] = 0.0
        self.bias.data[...] = 0.0


class LayerNormParams(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gamma = parameter(np.ones(d))
        self.beta = parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """两层MLP，中间GELU"""

    def __init__(self, d_in: int, hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = LinearLayer(d_in, hidden, rng)
        self.fc2 = LinearLayer(hidden, d_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2.forward(ops.gelu(self.fc1.forward(x)))


class MhsaParams(Module):
    """多头自注意力，每头维度 d_k = d_model / num_heads"""

    def __init__(self, d_model: int, num_heads: int, rng: np.random.Generator):
        if num_heads < 1 or d_model % num_heads != 0:
            raise ConfigError(f"d_model={d_model} 不能被 num_heads={num_heads} 整除")
        self.d_model = d_model
        self.num_heads = num_heads
        self.d_k = d_model // num_heads
        self.w_q = LinearLayer(d_model, d_model, rng)
        self.w_k = LinearLayer(d_model, d_model, rng)
        self.w_v = LinearLayer(d_model, d_model, rng)
        self.w_o = LinearLayer(d_model, d_model, rng)

    def _split_heads(self, x: Tensor, batch: int, n: int) -> Tensor:
        x = ops.reshape(x, (batch, n, self.num_heads, self.d_k))
        return ops.transpose(x, (0, 2, 1, 3))

    def forward(self, z: Tensor, attention_hook: Optional[AttentionHook] = None) -> Tensor:
        squeeze = z.ndim == 2
        if squeeze:
            z = ops.reshape(z, (1,) + z.shape)
        if z.ndim != 3 or z.shape[-1] != self.d_model:
            raise ShapeError(f"MHSA 输入应为 (n, {self.d_model}) 或 (B, n, {self.d_model})，得到 {z.shape}")
        batch, n, _ = z.shape
        if n < 1:
            raise ShapeError("MHSA 至少需要一个token")

        q = self._split_heads(self.w_q.forward(z), batch, n)
        k = self._split_heads(self.w_k.forward(z), batch, n)
        v = self._split_heads(self.w_v.forward(z), batch, n)
        # softmax(QKᵀ/√d_k)·V
        scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / math.sqrt(self.d_k))
        weights = ops.softmax_rows(scores)
        if attention_hook is not None:
            attention_hook(weights.data.copy())
        context = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
        out = self.w_o.forward(ops.reshape(context, (batch, n, self.d_model)))
        if squeeze:
            out = ops.reshape(out, (n, self.d_model))
        return out


class TransformerBlock(Module):
    """前置归一化残差块: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'"""

    def __init__(self, d_model: int, num_heads: int, hidden_dim: int, rng: np.random.Generator, eps: float = 1e-5):
        self.hidden_dim = hidden_dim
        self.ln1 = LayerNormParams(d_model, eps)
        self.mhsa = MhsaParams(d_model, num_heads, rng)
        self.ln2 = LayerNormParams(d_model, eps)
        self.mlp = Mlp(d_model, hidden_dim, d_model, rng)

    def forward(self, z: Tensor, attention_hook: Optional[AttentionHook] = None) -> Tensor:
        if z.shape[-1] != self.mhsa.d_model:
            raise ShapeError(f"Transformer块输入末维应为 {self.mhsa.d_model}，得到 {z.shape}")
        z_mid = ops.add(self.mhsa.forward(self.ln1.forward(z), attention_hook), z)
        return ops.add(self.mlp.forward(self.ln2.forward(z_mid)), z_mid)


class TransformerEncoder(Module):
    """L个Transformer块后接最终层归一化 y = LN(z_L)；无位置编码"""

    def __init__(
        self,
        num_blocks: int,
        d_model: int,
        num_heads: int,
        hidden_dim: int,
        rng: np.random.Generator,
        eps: float = 1e-5,
    ):
        if num_blocks < 1:
            raise ConfigError(f"编码器至少需要一个块，得到 {num_blocks}")
        self.d_model = d_model
        self.blocks = [TransformerBlock(d_model, num_heads, hidden_dim, rng, eps) for _ in range(num_blocks)]
        self.final_ln = LayerNormParams(d_model, eps)

    def forward(self, z: Tensor, attention_hook: Optional[AttentionHook] = None) -> Tensor:
        for block in self.blocks:
            z = block.forward(z, attention_hook)
        return self.final_ln.forward(z)


class ConvLayer(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        self.padding = kernel // 2
        self.weight = parameter(fan_in_uniform(rng, kernel * kernel * c_in, (kernel, kernel, c_in, c_out)))
        self.bias = parameter(np.zeros(c_out))

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvBackbone(Module):
    """逐阶段步长2的3×3卷积 + GELU，全局平均池化后线性投影到 feature_dim"""

    def __init__(
        self,
        image_size: int,
        in_channels: int,
        channels: Sequence[int],
        feature_dim: int,
        rng: np.random.Generator,
        kernel: int = 3,
        stride: int = 2,
    ):
        self.image_size = image_size
        self.in_channels = in_channels
        self.feature_dim = feature_dim
        stages = []
        c_in = in_channels
        for c_out in channels:
            stages.append(ConvLayer(c_in, c_out, kernel, stride, rng))
            c_in = c_out
        self.stages = stages
        self.proj = LinearLayer(c_in, feature_dim, rng)

    def forward(self, images: Tensor) -> Tensor:
        """(B,H,W,C) → (B, feature_dim)；单张 (H,W,C) → (feature_dim,)"""
        single = images.ndim == 3
        if single:
            images = ops.reshape(images, (1,) + images.shape)
        expected = (self.image_size, self.image_size, self.in_channels)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ShapeError(f"骨干网络期望图像尺寸 {expected}，得到 {images.shape}")
        x = images
        for stage in self.stages:
            x = ops.gelu(stage.forward(x))
        features = self.proj.forward(ops.global_avg_pool(x))
        if single:
            features = ops.reshape(features, (self.feature_dim,))
        return features


def mhsa_forward(p: MhsaParams, z: Tensor, attention_hook: Optional[AttentionHook] = None) -> Tensor:
    return p.forward(z, attention_hook)


def transformer_block_forward(b: TransformerBlock, z: Tensor) -> Tensor:
    return b.forward(z)


def encoder_forward(e: TransformerEncoder, z: Tensor) -> Tensor:
    return e.forward(z)


def backbone_forward(b: ConvBackbone, image: Tensor) -> Tensor:
    return b.forward(image)


def linear_param_count(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def mlp_param_count(d_in: int, hidden: int, d_out: int) -> int:
    return linear_param_count(d_in, hidden) + linear_param_count(hidden, d_out)


def block_param_count(d_model: int, hidden_dim: int) -> int:
    layer_norms = 2 * (2 * d_model)
    attention = 4 * linear_param_count(d_model, d_model)
    return layer_norms + attention + mlp_param_count(d_model, hidden_dim, d_model)


def encoder_param_count(num_blocks: int, d_model: int, num_heads: int, hidden_dim: int) -> int:
    """编码器参数量闭式解；头数只影响切分方式不影响参数量"""
    if d_model % num_heads != 0:
        raise ConfigError(f"d_model={d_model} 不能被 num_heads={num_heads} 整除")
    return num_blocks * block_param_count(d_model, hidden_dim) + 2 * d_model


def backbone_param_count(in_channels: int, channels: Sequence[int], feature_dim: int, kernel: int = 3) -> int:
    total = 0
    c_in = in_channels
    for c_out in channels:
        total += kernel * kernel * c_in * c_out + c_out
        c_in = c_out
    return total + linear_param_count(c_in, feature_dim)
