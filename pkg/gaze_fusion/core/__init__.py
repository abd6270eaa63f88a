"""
核心模块初始化
"""

from . import ops
from .nn import (
    ConvBackbone,
    LayerNormParams,
    LinearLayer,
    Mlp,
    MhsaParams,
    Module,
    TransformerBlock,
    TransformerEncoder,
    backbone_forward,
    encoder_forward,
    mhsa_forward,
    transformer_block_forward,
)
from .tensor import Tape, Tensor, backward, set_debug_checks

__all__ = [
    'ops',
    'ConvBackbone',
    'LayerNormParams',
    'LinearLayer',
    'Mlp',
    'MhsaParams',
    'Module',
    'TransformerBlock',
    'TransformerEncoder',
    'backbone_forward',
    'encoder_forward',
    'mhsa_forward',
    'transformer_block_forward',
    'Tape',
    'Tensor',
    'backward',
    'set_debug_checks',
]
