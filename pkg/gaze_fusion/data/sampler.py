"""
混合批采样
每个批次从每个数据集各取 B/M 个样本；一个epoch的批数由最小的数据集决定
"""

from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np


@dataclass(frozen=True)
class Batch:
    """slots[k] 为第k个样本所属数据集在列表中的位置，indices[k] 为其在该数据集训练集中的下标"""
    slots: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def for_slot(self, slot: int) -> np.ndarray:
        return self.indices[self.slots == slot]


class MixedBatchSampler:
    """确定性的混合批流；同一 rng 状态产生同一批次序列"""

    def __init__(self, sizes: Sequence[int], batch_size: int, rng: np.random.Generator):
        if not sizes:
            raise ValueError("至少需要一个数据集")
        num_datasets = len(sizes)
        if batch_size < 1 or batch_size % num_datasets != 0:
            raise ValueError(f"批大小 {batch_size} 不能被数据集数量 {num_datasets} 整除")
        self.sizes = [int(s) for s in sizes]
        self.batch_size = batch_size
        self.per_dataset = batch_size // num_datasets
        self.rng = rng
        if self.steps_per_epoch == 0:
            raise ValueError(f"最小的数据集只有 {min(self.sizes)} 个样本，不足一个批次")

    @property
    def num_datasets(self) -> int:
        return len(self.sizes)

    @property
    def steps_per_epoch(self) -> int:
        return min(self.sizes) * self.num_datasets // self.batch_size

    def epoch(self) -> Iterator[Batch]:
        """一个epoch的批次；每个数据集各自打乱后按顺序切块"""
        steps = self.steps_per_epoch
        orders = [self.rng.permutation(size) for size in self.sizes]
        slots = np.repeat(np.arange(self.num_datasets), self.per_dataset)
        for step in range(steps):
            lo, hi = step * self.per_dataset, (step + 1) * self.per_dataset
            indices = np.concatenate([order[lo:hi] for order in orders])
            yield Batch(slots=slots.copy(), indices=indices)

    def __iter__(self) -> Iterator[Batch]:
        return self.epoch()


def mixed_batch_sampler(sizes: Sequence[int], batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    return MixedBatchSampler(sizes, batch_size, rng).epoch()


def audit_epoch(batches: List[Batch], num_datasets: int) -> np.ndarray:
    """统计每个批次中各数据集的样本数，形状 (批数, M)"""
    return np.array([np.bincount(b.slots, minlength=num_datasets) for b in batches], dtype=np.int64)
