"""
可微算子
每个算子计算前向结果并向计算带登记反向规则；只支持网络实际需要的广播形式
"""

import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, TensorLike, as_tensor, make_result

# GELU tanh近似中的三次项系数
GELU_CUBIC = 0.044715
_GELU_SCALE = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度按原形状求和还原"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(f"{op}: 形状 {a.shape} 与 {b.shape} 无法广播") from None


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def rule(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), rule)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def rule(g: np.ndarray):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), rule)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def rule(g: np.ndarray):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """矩阵乘法；a 可带前导批维，b 为二维或与 a 前导维一致"""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul 需要至少二维的操作数，得到 {a.shape} 和 {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul 内维不一致: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul 批维不一致: {a.shape} @ {b.shape}")

    def rule(g: np.ndarray):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            k, n = b.shape
            grad_b = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            grad_b = np.swapaxes(a.data, -1, -2) @ g
        return grad_a, grad_b

    return make_result("matmul", a.data @ b.data, (a, b), rule)


def reduce_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    def rule(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_result("sum", np.asarray(x.data.sum(axis=axis)), (x,), rule)


def reduce_mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError("不能对空张量求均值")

    def rule(g: np.ndarray):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return make_result("mean", np.asarray(x.data.mean(axis=axis)), (x,), rule)


def absolute(x: Tensor) -> Tensor:
    """逐元素绝对值；0处的次梯度取0"""
    def rule(g: np.ndarray):
        return (g * np.sign(x.data),)

    return make_result("abs", np.abs(x.data), (x,), rule)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"无法把形状 {x.shape} 变换为 {tuple(shape)}") from None

    def rule(g: np.ndarray):
        return (g.reshape(x.shape),)

    return make_result("reshape", data, (x,), rule)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose 轴序 {axes} 与维数 {x.ndim} 不符")
    inverse = tuple(np.argsort(axes))

    def rule(g: np.ndarray):
        return (np.transpose(g, inverse),)

    return make_result("transpose", np.transpose(x.data, axes), (x,), rule)


def swap_last(x: Tensor) -> Tensor:
    """交换最后两个轴"""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """沿指定轴拼接；反向时把梯度按原长度切回各输入"""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat 至少需要一个输入")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise ShapeError(f"concat 轴 {axis} 超出维数 {ndim} 的范围")
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat 形状不匹配: {tensors[0].shape} 与 {t.shape}（轴 {axis}）"
            )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g: np.ndarray):
        return tuple(part.copy() for part in np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result("concat", data, tensors, rule)


def take_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """按首轴索引取行"""
    indices = np.asarray(indices, dtype=np.int64)

    def rule(g: np.ndarray):
        grad = np.zeros_like(x.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return make_result("take_rows", x.data[indices], (x,), rule)


def scatter_rows(x: Tensor, indices: np.ndarray, num_rows: int) -> Tensor:
    """把行写入全零张量的指定位置，take_rows 的伴随"""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) != x.shape[0]:
        raise ShapeError(f"scatter_rows: {len(indices)} 个索引对应 {x.shape[0]} 行")
    data = np.zeros((num_rows,) + x.shape[1:])
    data[indices] = x.data

    def rule(g: np.ndarray):
        return (g[indices].copy(),)

    return make_result("scatter_rows", data, (x,), rule)


def softmax_rows(x: Tensor) -> Tensor:
    """沿最后一轴的softmax，先减去行最大值保证数值稳定"""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=-1, keepdims=True)

    def rule(g: np.ndarray):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", y, (x,), rule)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """沿最后一轴归一化到零均值单位方差，再做仿射变换"""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm 参数形状应为 ({d},)，得到 {gamma.shape} 和 {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv_std

    def rule(g: np.ndarray):
        g_hat = g * gamma.data
        grad_x = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        lead = g.reshape(-1, d)
        grad_gamma = (lead * x_hat.reshape(-1, d)).sum(axis=0)
        grad_beta = lead.sum(axis=0)
        return grad_x, grad_gamma, grad_beta

    return make_result("layer_norm", x_hat * gamma.data + beta.data, (x, gamma, beta), rule)


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    """tanh近似GELU的解析导数"""
    inner = _GELU_SCALE * (x + GELU_CUBIC * x ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x)


def gelu(x: Tensor) -> Tensor:
    """GELU，tanh近似: 0.5x(1 + tanh(√(2/π)(x + 0.044715x³)))"""
    inner = _GELU_SCALE * (x.data + GELU_CUBIC * x.data ** 3)
    y = 0.5 * x.data * (1.0 + np.tanh(inner))

    def rule(g: np.ndarray):
        return (g * gelu_derivative(x.data),)

    return make_result("gelu", y, (x,), rule)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """二维卷积，输入 (B,H,W,C)，卷积核 (kh,kw,C,O)，通过im2col化为矩阵乘"""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d 需要 (B,H,W,C) 输入与四维卷积核，得到 {x.shape} 和 {weight.shape}")
    batch, height, width, channels = x.shape
    kh, kw, c_in, c_out = weight.shape
    if c_in != channels:
        raise ShapeError(f"conv2d 通道不一致: 输入 {x.shape}，卷积核 {weight.shape}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d 偏置形状应为 ({c_out},)，得到 {bias.shape}")
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d 输入 {x.shape} 对卷积核 {weight.shape} 太小")

    padded = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    patches = np.stack(
        [
            padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :]
            for i in range(kh)
            for j in range(kw)
        ],
        axis=3,
    )
    cols = patches.reshape(batch * out_h * out_w, kh * kw * channels)
    kernel = weight.data.reshape(kh * kw * channels, c_out)
    out = (cols @ kernel + bias.data).reshape(batch, out_h, out_w, c_out)

    def rule(g: np.ndarray):
        g2 = g.reshape(-1, c_out)
        grad_w = (cols.T @ g2).reshape(weight.shape)
        grad_b = g2.sum(axis=0)
        grad_cols = (g2 @ kernel.T).reshape(batch, out_h, out_w, kh, kw, channels)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :] += grad_cols[:, :, :, i, j, :]
        grad_x = grad_padded[:, padding:padding + height, padding:padding + width, :]
        return grad_x.copy(), grad_w, grad_b

    return make_result("conv2d", out, (x, weight, bias), rule)


def global_avg_pool(x: Tensor) -> Tensor:
    """(B,H,W,C) 在空间维上取平均得到 (B,C)"""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool 需要 (B,H,W,C) 输入，得到 {x.shape}")
    _, height, width, _ = x.shape
    area = height * width

    def rule(g: np.ndarray):
        return (np.broadcast_to(g[:, None, None, :] / area, x.shape).copy(),)

    return make_result("global_avg_pool", x.data.mean(axis=(1, 2)), (x,), rule)
