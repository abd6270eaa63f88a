"""
优化器与学习率
AdamW（解耦权重衰减、偏差校正矩估计）与"线性预热 + 按epoch指数衰减"的学习率
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from ..core.tensor import Tensor
from ..errors import ShapeError
from ..settings.config import TrainConfig


def lr_at(cfg: TrainConfig, step: int, steps_per_epoch: int) -> float:
    """step < warmup 时为 lr0·step/warmup，之后为 lr0·gamma^(预热后完成的epoch数)"""
    if step < 0:
        raise ValueError(f"step 不能为负: {step}")
    if steps_per_epoch < 1:
        raise ValueError(f"steps_per_epoch 必须为正: {steps_per_epoch}")
    if step < cfg.warmup_steps:
        return cfg.lr0 * step / cfg.warmup_steps
    completed_epochs = (step - cfg.warmup_steps) // steps_per_epoch
    return cfg.lr0 * cfg.gamma ** completed_epochs


@dataclass
class AdamWState:
    """逐参数的一、二阶矩与更新次数"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)


def adamw_step(
    state: AdamWState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    lr: float,
) -> Dict[str, np.ndarray]:
    """返回更新后的参数；梯度为 None 的参数原样返回，矩与计数都不变"""
    state.step += 1
    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        if grad.shape != value.shape:
            raise ShapeError(f"参数 {name} 形状 {value.shape} 与梯度形状 {grad.shape} 不一致")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(value)
            v = np.zeros_like(value)
        t = state.counts.get(name, 0) + 1

        decayed = value - lr * state.weight_decay * value
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        updated[name] = decayed - lr * m_hat / (np.sqrt(v_hat) + state.eps)

        state.m[name], state.v[name], state.counts[name] = m, v, t
    return updated


class AdamW:
    """把 adamw_step 作用在命名的可训练张量上"""

    def __init__(
        self,
        named_params: Iterable[Tuple[str, Tensor]],
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params: Dict[str, Tensor] = {}
        for name, tensor in named_params:
            if name in self.params:
                raise ValueError(f"参数名重复: {name}")
            self.params[name] = tensor
        self.state = AdamWState(beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def step(self, lr: float) -> None:
        values = {name: t.data for name, t in self.params.items()}
        grads = {name: t.grad for name, t in self.params.items()}
        updated = adamw_step(self.state, values, grads, lr)
        for name, tensor in self.params.items():
            if updated[name] is not tensor.data:
                tensor.data[...] = updated[name]
