"""
梯度检查
用中心差分核对计算带给出的解析梯度，按参数张量报告最大相对误差
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..core import ops
from ..core.nn import Module
from ..core.tensor import Tape, Tensor
from ..models.gam import GamBank
from ..models.ttgf import FusionGazeModel, build_model
from ..settings.config import RunConfig

logger = structlog.get_logger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# 相对误差分母的下限，避免接近零的梯度放大舍入误差
GRAD_FLOOR = 1e-4


@dataclass
class ParamCheck:
    name: str
    shape: Tuple[int, ...]
    checked: int
    max_abs_error: float
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


@dataclass
class GradCheckReport:
    checks: List[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[ParamCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def names(self) -> List[str]:
        return [c.name for c in self.checks]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_gradient(
    loss_fn: Callable[[], float],
    tensor: Tensor,
    step: float = DEFAULT_STEP,
    indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """对 tensor 的（部分）元素做中心差分，返回与 indices 对应的扁平梯度"""
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = np.arange(flat.size)
    grads = np.empty(len(indices))
    for k, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + step
        plus = loss_fn()
        flat[i] = original - step
        minus = loss_fn()
        flat[i] = original
        grads[k] = (plus - minus) / (2.0 * step)
    return grads


def analytic_gradients(loss_fn: Callable[[], Tensor], params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    tape.reset()
    return grads


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_elements: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """逐参数张量比较解析梯度与中心差分；max_elements 限制每个张量抽查的元素数"""
    analytic = analytic_gradients(loss_fn, params)

    def scalar_loss() -> float:
        return loss_fn().item()

    report = GradCheckReport()
    for name, tensor in params.items():
        size = tensor.size
        if max_elements is not None and size > max_elements:
            chooser = rng if rng is not None else np.random.default_rng(0)
            indices = np.sort(chooser.choice(size, size=max_elements, replace=False))
        else:
            indices = np.arange(size)
        numeric = numeric_gradient(scalar_loss, tensor, step, indices)
        exact = analytic[name].reshape(-1)[indices]
        report.checks.append(
            ParamCheck(
                name=name,
                shape=tensor.shape,
                checked=len(indices),
                max_abs_error=float(np.max(np.abs(exact - numeric))) if len(indices) else 0.0,
                max_rel_error=float(np.max(relative_error(exact, numeric))) if len(indices) else 0.0,
                tolerance=tolerance,
            )
        )
    return report


def randomize_zero_parameters(module: Module, rng: np.random.Generator, scale: float = 0.1) -> None:
    """零初始化的参数（偏置、GAM第二层等）换成小随机值，使其梯度检查有意义"""
    for _, p in module.named_parameters():
        if not np.any(p.data):
            p.data[...] = rng.normal(0.0, scale, size=p.shape)


def model_loss_fn(
    model: FusionGazeModel,
    gam: Optional[GamBank],
    inputs: Tuple[np.ndarray, np.ndarray, np.ndarray],
    slots: np.ndarray,
    projection: np.ndarray,
) -> Callable[[], Tensor]:
    """随机投影的光滑标量损失 sum(R ⊙ ĝ)"""
    face, left, right = (Tensor(x) for x in inputs)
    weights = Tensor(projection)

    def loss_fn() -> Tensor:
        out = model.forward(face, left, right)
        gaze = gam.correct(out.gaze, out.fused, slots) if gam is not None else out.gaze
        return ops.reduce_sum(ops.mul(gaze, weights))

    return loss_fn


def run_grad_check(
    config: RunConfig,
    num_datasets: int = 4,
    batch_per_dataset: int = 1,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_elements: Optional[int] = None,
) -> GradCheckReport:
    """对完整的融合网络 + GAM 做梯度检查，批次中每个数据集都有样本，所有偏移头都会被检查"""
    rng = np.random.default_rng([seed, 7])
    model = build_model(config.model, rng)
    gam = GamBank(num_datasets, model.fused_dim, config.model.gam_hidden, rng, mode=config.model.gam_mode)
    randomize_zero_parameters(model, rng)
    randomize_zero_parameters(gam, rng)

    c = config.model
    batch = num_datasets * batch_per_dataset
    inputs = (
        rng.uniform(0.0, 1.0, size=(batch, c.face_size, c.face_size, c.in_channels)),
        rng.uniform(0.0, 1.0, size=(batch, c.eye_size, c.eye_size, c.in_channels)),
        rng.uniform(0.0, 1.0, size=(batch, c.eye_size, c.eye_size, c.in_channels)),
    )
    slots = np.repeat(np.arange(num_datasets), batch_per_dataset)
    projection = rng.normal(size=(batch, 2))

    params = {f"model.{k}": p for k, p in model.named_parameters()}
    params.update({f"gam.{k}": p for k, p in gam.named_parameters()})
    report = check_gradients(
        model_loss_fn(model, gam, inputs, slots, projection),
        params,
        step=step,
        tolerance=tolerance,
        max_elements=max_elements,
        rng=rng,
    )
    logger.info(
        "梯度检查完成",
        tensors=len(report.checks),
        max_rel_error=report.max_rel_error,
        passed=report.passed,
    )
    return report


def check_op(
    op: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """单个算子的梯度检查：所有输入都视为参数，输出经随机投影成标量"""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    projection: List[Optional[Tensor]] = [None]

    def loss_fn() -> Tensor:
        out = op(*tensors)
        if projection[0] is None:
            projection[0] = Tensor(rng.normal(size=out.shape))
        return ops.reduce_sum(ops.mul(out, projection[0]))

    params = {f"input{i}": t for i, t in enumerate(tensors)}
    return check_gradients(loss_fn, params, step=step, tolerance=tolerance)
