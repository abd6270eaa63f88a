"""
两阶段Transformer视线特征融合
第一阶段把每只眼的特征分别与头部特征融合，第二阶段融合左右两路结果，最后回归 (yaw, pitch)；
另外提供三种对照拓扑：先左右眼后头部、三路并行、仅双眼。
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import numpy as np
import structlog

from ..core import ops
from ..core.nn import (
    ConvBackbone,
    LinearLayer,
    Mlp,
    Module,
    TransformerEncoder,
    backbone_param_count,
    encoder_param_count,
    linear_param_count,
    mlp_param_count,
)
from ..core.tensor import Tensor
from ..errors import ShapeError

if TYPE_CHECKING:
    from ..settings.config import ModelConfig

logger = structlog.get_logger(__name__)


class FusionTopology(str, Enum):
    """特征融合拓扑"""
    EH_LR = "eh_lr"  # 单眼+头部 → 左右融合（默认）
    LR_EH = "lr_eh"  # 左右眼 → 再与头部融合
    PAR = "par"  # 三路并行
    TWO_EYES = "two_eyes"  # 仅双眼


class TgfModule(Module):
    """TGF: 把若干特征堆叠成token序列，编码后逐token投影再拼接 CAT(FC(Trans([f*; f†])))"""

    def __init__(
        self,
        token_dim: int,
        proj_dim: int,
        num_blocks: int,
        num_heads: int,
        hidden_dim: int,
        rng: np.random.Generator,
        num_tokens: int = 2,
        eps: float = 1e-5,
    ):
        self.token_dim = token_dim
        self.proj_dim = proj_dim
        self.num_tokens = num_tokens
        self.encoder = TransformerEncoder(num_blocks, token_dim, num_heads, hidden_dim, rng, eps)
        # 投影层在各token间共享
        self.proj = LinearLayer(token_dim, proj_dim, rng)

    @property
    def output_dim(self) -> int:
        return self.num_tokens * self.proj_dim

    def forward(self, *features: Tensor) -> Tensor:
        if len(features) != self.num_tokens:
            raise ShapeError(f"TGF 需要 {self.num_tokens} 个输入特征，得到 {len(features)}")
        single = features[0].ndim == 1
        tokens = []
        for f in features:
            if f.shape[-1] != self.token_dim or f.ndim != features[0].ndim:
                raise ShapeError(f"TGF 输入特征维度应为 {self.token_dim}，得到 {f.shape}")
            batch = 1 if single else f.shape[0]
            tokens.append(ops.reshape(f, (batch, 1, self.token_dim)))
        sequence = ops.concat(tokens, axis=1)
        encoded = self.encoder.forward(sequence)
        projected = self.proj.forward(encoded)
        fused = ops.reshape(projected, (projected.shape[0], self.output_dim))
        if single:
            fused = ops.reshape(fused, (self.output_dim,))
        return fused


def tgf_param_count(token_dim: int, proj_dim: int, num_blocks: int, num_heads: int, hidden_dim: int) -> int:
    return encoder_param_count(num_blocks, token_dim, num_heads, hidden_dim) + linear_param_count(token_dim, proj_dim)


@dataclass
class GazeOutput:
    """一次前向的结果：视线 (B,2)、送给GAM的融合特征，以及中间特征"""
    gaze: Tensor
    fused: Tensor
    intermediates: Dict[str, Tensor] = field(default_factory=dict)


class FusionGazeModel(Module, ABC):
    """多路视线估计网络的公共部分"""

    topology: FusionTopology

    def __init__(self, config: "ModelConfig", rng: np.random.Generator):
        self.config = config
        self.face_size = config.face_size
        self.eye_size = config.eye_size

    def _tgf(self, token_dim: int, rng: np.random.Generator, num_tokens: int = 2) -> TgfModule:
        c = self.config
        return TgfModule(
            token_dim, c.proj_dim, c.num_blocks, c.num_heads, c.mlp_hidden, rng,
            num_tokens=num_tokens, eps=c.ln_eps,
        )

    def _backbone(self, size: int, rng: np.random.Generator) -> ConvBackbone:
        c = self.config
        return ConvBackbone(size, c.in_channels, c.conv_channels, c.feature_dim, rng)

    @property
    @abstractmethod
    def fused_dim(self) -> int:
        """融合特征维度"""

    @abstractmethod
    def encode(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        """返回送入视线MLP的融合特征与各阶段中间特征"""

    def forward(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> GazeOutput:
        """批量输入 (B,H,W,C)；单样本 (H,W,C) 时输出去掉批维"""
        single = face.ndim == 3
        if single:
            face = ops.reshape(face, (1,) + face.shape)
            left_eye = ops.reshape(left_eye, (1,) + left_eye.shape)
            right_eye = ops.reshape(right_eye, (1,) + right_eye.shape)
        fused, intermediates = self.encode(face, left_eye, right_eye)
        gaze = self.gaze_mlp.forward(fused)
        if single:
            gaze = ops.reshape(gaze, (2,))
            fused = ops.reshape(fused, (self.fused_dim,))
        return GazeOutput(gaze=gaze, fused=fused, intermediates=intermediates)


class TtgfModel(FusionGazeModel):
    """EH-LR：f^lh = TGF^lh(f^le, f^h)，f^rh = TGF^rh(f^re, f^h)，f^lr = TGF^lr(f^lh, f^rh)，g = MLP(f^lr)"""

    topology = FusionTopology.EH_LR

    def __init__(self, config: "ModelConfig", rng: np.random.Generator):
        super().__init__(config, rng)
        c = config
        self.face_backbone = self._backbone(c.face_size, rng)
        self.left_backbone = self._backbone(c.eye_size, rng)
        self.right_backbone = self._backbone(c.eye_size, rng)
        # 左右两路的TGF参数不共享
        self.tgf_lh = self._tgf(c.feature_dim, rng)
        self.tgf_rh = self._tgf(c.feature_dim, rng)
        self.tgf_lr = self._tgf(self.tgf_lh.output_dim, rng)
        self.gaze_mlp = Mlp(self.tgf_lr.output_dim, c.gaze_hidden, 2, rng)

    @property
    def fused_dim(self) -> int:
        return self.tgf_lr.output_dim

    def encode(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        f_h = self.face_backbone.forward(face)
        f_le = self.left_backbone.forward(left_eye)
        f_re = self.right_backbone.forward(right_eye)
        # 眼部token在前，头部token在后
        f_lh = self.tgf_lh.forward(f_le, f_h)
        f_rh = self.tgf_rh.forward(f_re, f_h)
        f_lr = self.tgf_lr.forward(f_lh, f_rh)
        return f_lr, {"f_h": f_h, "f_le": f_le, "f_re": f_re, "f_lh": f_lh, "f_rh": f_rh, "f_lr": f_lr}


class LrEhModel(FusionGazeModel):
    """LR-EH：先融合左右眼，再与头部特征融合"""

    topology = FusionTopology.LR_EH

    def __init__(self, config: "ModelConfig", rng: np.random.Generator):
        super().__init__(config, rng)
        c = config
        self.face_backbone = self._backbone(c.face_size, rng)
        self.left_backbone = self._backbone(c.eye_size, rng)
        self.right_backbone = self._backbone(c.eye_size, rng)
        self.tgf_lr = self._tgf(c.feature_dim, rng)
        eye_dim = self.tgf_lr.output_dim
        # 头部特征与双眼融合特征维度不同时先对齐
        self.face_align: Optional[LinearLayer] = (
            LinearLayer(c.feature_dim, eye_dim, rng) if c.feature_dim != eye_dim else None
        )
        self.tgf_eh = self._tgf(eye_dim, rng)
        self.gaze_mlp = Mlp(self.tgf_eh.output_dim, c.gaze_hidden, 2, rng)

    @property
    def fused_dim(self) -> int:
        return self.tgf_eh.output_dim

    def encode(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        f_h = self.face_backbone.forward(face)
        f_le = self.left_backbone.forward(left_eye)
        f_re = self.right_backbone.forward(right_eye)
        f_eyes = self.tgf_lr.forward(f_le, f_re)
        f_face = self.face_align.forward(f_h) if self.face_align is not None else f_h
        fused = self.tgf_eh.forward(f_eyes, f_face)
        return fused, {"f_h": f_h, "f_le": f_le, "f_re": f_re, "f_eyes": f_eyes, "fused": fused}


class ParallelModel(FusionGazeModel):
    """PAR：左眼、右眼、头部三个token一次融合"""

    topology = FusionTopology.PAR

    def __init__(self, config: "ModelConfig", rng: np.random.Generator):
        super().__init__(config, rng)
        c = config
        self.face_backbone = self._backbone(c.face_size, rng)
        self.left_backbone = self._backbone(c.eye_size, rng)
        self.right_backbone = self._backbone(c.eye_size, rng)
        self.tgf_par = self._tgf(c.feature_dim, rng, num_tokens=3)
        self.gaze_mlp = Mlp(self.tgf_par.output_dim, c.gaze_hidden, 2, rng)

    @property
    def fused_dim(self) -> int:
        return self.tgf_par.output_dim

    def encode(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        f_h = self.face_backbone.forward(face)
        f_le = self.left_backbone.forward(left_eye)
        f_re = self.right_backbone.forward(right_eye)
        fused = self.tgf_par.forward(f_le, f_re, f_h)
        return fused, {"f_h": f_h, "f_le": f_le, "f_re": f_re, "fused": fused}


class TwoEyesModel(FusionGazeModel):
    """仅双眼：不使用人脸图像"""

    topology = FusionTopology.TWO_EYES

    def __init__(self, config: "ModelConfig", rng: np.random.Generator):
        super().__init__(config, rng)
        c = config
        self.left_backbone = self._backbone(c.eye_size, rng)
        self.right_backbone = self._backbone(c.eye_size, rng)
        self.tgf_lr = self._tgf(c.feature_dim, rng)
        self.gaze_mlp = Mlp(self.tgf_lr.output_dim, c.gaze_hidden, 2, rng)

    @property
    def fused_dim(self) -> int:
        return self.tgf_lr.output_dim

    def encode(self, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> Tuple[Tensor, Dict[str, Tensor]]:
        f_le = self.left_backbone.forward(left_eye)
        f_re = self.right_backbone.forward(right_eye)
        fused = self.tgf_lr.forward(f_le, f_re)
        return fused, {"f_le": f_le, "f_re": f_re, "fused": fused}


_MODEL_TYPES = {
    FusionTopology.EH_LR: TtgfModel,
    FusionTopology.LR_EH: LrEhModel,
    FusionTopology.PAR: ParallelModel,
    FusionTopology.TWO_EYES: TwoEyesModel,
}


def build_model(config: "ModelConfig", rng: np.random.Generator) -> FusionGazeModel:
    """按拓扑构建网络"""
    model = _MODEL_TYPES[FusionTopology(config.topology)](config, rng)
    logger.debug("网络构建完成", topology=model.topology.value, parameters=model.num_parameters())
    return model


def expected_param_count(config: "ModelConfig") -> int:
    """按配置计算网络参数量的闭式解"""
    c = config
    topology = FusionTopology(c.topology)
    backbone = backbone_param_count(c.in_channels, c.conv_channels, c.feature_dim)
    pair_dim = 2 * c.proj_dim

    def tgf(token_dim: int) -> int:
        return tgf_param_count(token_dim, c.proj_dim, c.num_blocks, c.num_heads, c.mlp_hidden)

    if topology == FusionTopology.EH_LR:
        body = 3 * backbone + 2 * tgf(c.feature_dim) + tgf(pair_dim)
        fused = pair_dim
    elif topology == FusionTopology.LR_EH:
        align = linear_param_count(c.feature_dim, pair_dim) if c.feature_dim != pair_dim else 0
        body = 3 * backbone + tgf(c.feature_dim) + align + tgf(pair_dim)
        fused = pair_dim
    elif topology == FusionTopology.PAR:
        body = 3 * backbone + tgf(c.feature_dim)
        fused = 3 * c.proj_dim
    else:
        body = 2 * backbone + tgf(c.feature_dim)
        fused = pair_dim
    return body + mlp_param_count(fused, c.gaze_hidden, 2)


def tgf_forward(m: TgfModule, f_a: Tensor, f_b: Tensor) -> Tensor:
    return m.forward(f_a, f_b)


def ttgf_forward(model: TtgfModel, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> GazeOutput:
    return model.forward(face, left_eye, right_eye)


def baseline_forward(model: FusionGazeModel, face: Tensor, left_eye: Tensor, right_eye: Tensor) -> GazeOutput:
    """对照拓扑的前向，接口与 ttgf_forward 一致；TWO_EYES 忽略人脸输入"""
    return model.forward(face, left_eye, right_eye)
