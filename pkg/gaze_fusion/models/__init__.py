"""
模型模块初始化
"""

from .gam import (
    ConstantOffsetHead,
    GamBank,
    GamMode,
    OffsetMlp,
    ParameterReport,
    ZeroOffsetHead,
    apply_gam,
    gam_offset,
    param_budget,
    verify_param_budget,
)
from .ttgf import (
    FusionGazeModel,
    FusionTopology,
    GazeOutput,
    LrEhModel,
    ParallelModel,
    TgfModule,
    TtgfModel,
    TwoEyesModel,
    baseline_forward,
    build_model,
    expected_param_count,
    tgf_forward,
    ttgf_forward,
)

__all__ = [
    'ConstantOffsetHead',
    'GamBank',
    'GamMode',
    'OffsetMlp',
    'ParameterReport',
    'ZeroOffsetHead',
    'apply_gam',
    'gam_offset',
    'param_budget',
    'verify_param_budget',
    'FusionGazeModel',
    'FusionTopology',
    'GazeOutput',
    'LrEhModel',
    'ParallelModel',
    'TgfModule',
    'TtgfModel',
    'TwoEyesModel',
    'baseline_forward',
    'build_model',
    'expected_param_count',
    'tgf_forward',
    'ttgf_forward',
]
