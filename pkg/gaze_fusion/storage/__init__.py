"""
存储模块初始化
"""

from .checkpoint import load_checkpoint, read_tensors, save_checkpoint, write_tensors
from .dataset_store import DatasetStore, SyntheticDataset, load_dataset, save_dataset

__all__ = [
    'load_checkpoint',
    'read_tensors',
    'save_checkpoint',
    'write_tensors',
    'DatasetStore',
    'SyntheticDataset',
    'load_dataset',
    'save_dataset',
]
