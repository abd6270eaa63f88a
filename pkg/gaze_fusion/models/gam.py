"""
视线自适应模块（GAM）
每个数据集一个偏移头，根据融合特征 f^lr 输出 (Δyaw, Δpitch)；锚数据集的偏移恒为零且没有参数
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Union

import numpy as np
import structlog

from ..core import ops
from ..core.nn import LinearLayer, Module, mlp_param_count, parameter
from ..core.tensor import Tensor
from ..errors import ConfigError, ShapeError
from ..geometry.gaze import GazeAngles

logger = structlog.get_logger(__name__)


class GamMode(str, Enum):
    """偏移头类型"""
    MLP = "mlp"  # 依赖输入的两层MLP
    CONSTANT = "constant"  # 常数偏置，消融用


class ZeroOffsetHead(Module):
    """锚数据集的偏移头，恒为零"""

    def forward(self, f_lr: Tensor) -> Tensor:
        return Tensor(np.zeros(f_lr.shape[:-1] + (2,)))


class OffsetMlp(Module):
    """两层GELU MLP；第二层零初始化，使训练从无偏移开始"""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = LinearLayer(in_dim, hidden, rng)
        self.fc2 = LinearLayer(hidden, 2, rng)
        self.fc2.zero_()

    def forward(self, f_lr: Tensor) -> Tensor:
        return self.fc2.forward(ops.gelu(self.fc1.forward(f_lr)))


class ConstantOffsetHead(Module):
    """与输入无关的常数偏移"""

    def __init__(self) -> None:
        self.bias = parameter(np.zeros(2))

    def forward(self, f_lr: Tensor) -> Tensor:
        zeros = Tensor(np.zeros(f_lr.shape[:-1] + (2,)))
        return ops.add(zeros, self.bias)


OffsetHead = Union[ZeroOffsetHead, OffsetMlp, ConstantOffsetHead]


class GamBank(Module):
    """M个偏移头，下标即数据集槽位，槽位0为锚数据集"""

    def __init__(
        self,
        num_datasets: int,
        in_dim: int,
        hidden: int,
        rng: np.random.Generator,
        mode: GamMode = GamMode.MLP,
    ):
        if num_datasets < 1:
            raise ConfigError(f"GAM 至少需要一个数据集，得到 {num_datasets}")
        self.num_datasets = num_datasets
        self.in_dim = in_dim
        self.hidden = hidden
        self.mode = GamMode(mode)
        heads: List[Module] = [ZeroOffsetHead()]
        for _ in range(1, num_datasets):
            heads.append(OffsetMlp(in_dim, hidden, rng) if self.mode == GamMode.MLP else ConstantOffsetHead())
        self.heads = heads

    @classmethod
    def zeroed(cls, num_datasets: int, in_dim: int) -> "GamBank":
        """所有偏移头都恒为零的GAM，等价于不使用GAM"""
        bank = cls(1, in_dim, 1, np.random.default_rng(0))
        bank.num_datasets = num_datasets
        bank.heads = [ZeroOffsetHead() for _ in range(num_datasets)]
        return bank

    def head_param_count(self) -> int:
        """单个可训练偏移头的参数量 K"""
        if all(isinstance(h, ZeroOffsetHead) for h in self.heads):
            return 0
        if self.mode == GamMode.CONSTANT:
            return 2
        return mlp_param_count(self.in_dim, self.hidden, 2)

    def _check_slot(self, dataset_id: int) -> None:
        if not 0 <= dataset_id < self.num_datasets:
            raise IndexError(f"dataset_id {dataset_id} 超出范围 [0, {self.num_datasets})")

    def offset(self, dataset_id: int, f_lr: Tensor) -> Tensor:
        """Δg = MLP_i(f^lr)"""
        self._check_slot(dataset_id)
        if f_lr.shape[-1] != self.in_dim:
            raise ShapeError(f"GAM 输入维度应为 {self.in_dim}，得到 {f_lr.shape}")
        return self.heads[dataset_id].forward(f_lr)

    def route(self, f_lr: Tensor, slots: Sequence[int]) -> Tensor:
        """按样本所属数据集路由到对应偏移头，返回 (B,2) 偏移；未出现的数据集不参与计算"""
        slots = np.asarray(slots, dtype=np.int64)
        batch = f_lr.shape[0]
        if slots.shape != (batch,):
            raise ShapeError(f"槽位数组形状应为 ({batch},)，得到 {slots.shape}")
        total: Tensor = Tensor(np.zeros((batch, 2)))
        for slot in np.unique(slots):
            self._check_slot(int(slot))
            head = self.heads[int(slot)]
            if isinstance(head, ZeroOffsetHead):
                continue
            rows = np.flatnonzero(slots == slot)
            delta = head.forward(ops.take_rows(f_lr, rows))
            total = ops.add(total, ops.scatter_rows(delta, rows, batch))
        return total

    def correct(self, gaze: Tensor, f_lr: Tensor, slots: Sequence[int]) -> Tensor:
        """ĝ = g + Δg"""
        return ops.add(gaze, self.route(f_lr, slots))


def gam_offset(bank: GamBank, dataset_id: int, f_lr: Tensor) -> Tensor:
    return bank.offset(dataset_id, f_lr)


def apply_gam(g: Union[GazeAngles, Tensor], delta: Union[GazeAngles, Tensor]) -> Union[GazeAngles, Tensor]:
    """逐分量相加"""
    if isinstance(g, GazeAngles) and isinstance(delta, GazeAngles):
        return GazeAngles(g.yaw + delta.yaw, g.pitch + delta.pitch)
    if isinstance(g, Tensor) and isinstance(delta, Tensor):
        return ops.add(g, delta)
    raise TypeError("apply_gam 的两个参数类型必须一致")


def param_budget(num_datasets: int, shared: int, per_head: int) -> int:
    """可训练参数总量 N + (M−1)·K"""
    if num_datasets < 1:
        raise ConfigError(f"数据集数量必须至少为1，得到 {num_datasets}")
    return shared + (num_datasets - 1) * per_head


@dataclass
class ParameterReport:
    """参数量对照"""
    num_datasets: int
    shared: int
    per_head: int
    trainable: int
    all_heads: int
    separate_models: int

    def as_dict(self) -> dict:
        return {
            "M": self.num_datasets,
            "N": self.shared,
            "K": self.per_head,
            "trainable_N_plus_M_minus_1_K": self.trainable,
            "N_plus_MK": self.all_heads,
            "separate_models_MN": self.separate_models,
        }


def verify_param_budget(model: Module, bank: GamBank) -> ParameterReport:
    """用构建出的网络实际计数核对闭式参数量"""
    shared = model.num_parameters()
    per_head = bank.head_param_count()
    budget = param_budget(bank.num_datasets, shared, per_head)
    counted = shared + bank.num_parameters()
    if budget != counted:
        raise ConfigError(f"参数量不一致: 闭式 {budget}，实际 {counted}")
    return ParameterReport(
        num_datasets=bank.num_datasets,
        shared=shared,
        per_head=per_head,
        trainable=budget,
        all_heads=shared + bank.num_datasets * per_head,
        separate_models=bank.num_datasets * shared,
    )
