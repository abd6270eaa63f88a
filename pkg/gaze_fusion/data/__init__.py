"""
数据模块初始化
生成器依赖存储层，请从 gaze_fusion.data.generate 导入
"""

from .render import RenderedSample, SubjectParams, center_of_mass, crop_patch, render_face, render_sample
from .sampler import Batch, MixedBatchSampler, audit_epoch, mixed_batch_sampler
from .specs import AppearanceParams, DatasetSpec, PerturbationSpec, default_specs, load_spec_file, parse_spec_file

__all__ = [
    'RenderedSample',
    'SubjectParams',
    'center_of_mass',
    'crop_patch',
    'render_face',
    'render_sample',
    'Batch',
    'MixedBatchSampler',
    'audit_epoch',
    'mixed_batch_sampler',
    'AppearanceParams',
    'DatasetSpec',
    'PerturbationSpec',
    'default_specs',
    'load_spec_file',
    'parse_spec_file',
]
