"""
张量与计算带
64位浮点稠密张量，配合动态计算带实现反向模式自动微分

数据按行优先（C顺序）存放，序列化后的参数可跨平台移植。
"""

import threading
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import BackwardError, ShapeError

ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardRule = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()
_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """开启后每个算子都检查输出是否含NaN/Inf"""
    global _debug_checks
    _debug_checks = enabled


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """带可选梯度累加器的稠密张量"""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        array = np.array(data, dtype=np.float64, order="C")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        # 产生该张量的计算带；叶子张量为None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"只有单元素张量可以转换为标量，当前形状 {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # 运算符委托给 ops 模块
    def __add__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other: "TensorLike") -> "Tensor":
        from . import ops
        return ops.mul(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)


TensorLike = Union[Tensor, float, int, np.ndarray]


def as_tensor(value: TensorLike) -> Tensor:
    """把常量包装为不需要梯度的张量"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class TapeNode:
    """计算带上的一条记录"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward_rule: BackwardRule


@dataclass
class Tape:
    """动态计算带：每次前向重新构建，按记录顺序即拓扑序"""
    nodes: List[TapeNode] = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, rule: BackwardRule) -> None:
        if self._consumed:
            raise BackwardError("计算带已完成反向传播，继续记录前需要先调用 reset()")
        output._tape = self
        self.nodes.append(TapeNode(op=op, inputs=inputs, output=output, backward_rule=rule))

    def reset(self) -> None:
        """清空记录，允许再次使用"""
        for node in self.nodes:
            node.output._tape = None
        self.nodes = []
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """从标量损失出发，按逆序访问每个节点一次，把梯度累加到叶子张量"""
        if loss.size != 1:
            raise BackwardError(f"损失必须是标量，当前形状 {loss.shape}")
        if loss._tape is not self:
            raise BackwardError("损失张量不在该计算带上（已脱离或未被记录）")
        if self._consumed:
            raise BackwardError("同一计算带不能重复反向传播，请先调用 reset()")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            input_grads = node.backward_rule(upstream)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.shape != grad.shape:
                    raise ShapeError(
                        f"算子 {node.op} 的反向规则给出形状 {grad.shape}，输入形状为 {tensor.shape}"
                    )
                if tensor._tape is None:
                    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
                else:
                    key = id(tensor)
                    grads[key] = grad if key not in grads else grads[key] + grad
        self._consumed = True


def _tape_stack() -> List[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> Optional[Tape]:
    """当前线程正在记录的计算带"""
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    """构造算子输出；有输入需要梯度且存在活动计算带时记录节点"""
    if _debug_checks and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"算子 {op} 在有限输入上产生了NaN/Inf")
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        assert tape is not None
        tape.record(op, inputs, out, rule)
    return out


def backward(loss: Tensor) -> None:
    """对标量损失做反向传播，填充所有叶子参数的 grad"""
    if loss._tape is None:
        raise BackwardError("损失张量已脱离计算带，无法反向传播")
    loss._tape.backward(loss)
