"""
视线几何
yaw/pitch 与单位视线向量互转、角度误差，以及模拟数据集间标注差异的参数化扰动

坐标约定（决定所有误差数值）：
    v = (cos(pitch)·sin(yaw), sin(pitch), cos(pitch)·cos(yaw))
(0, 0) 为正前方 +z，yaw 向 +x 为正，pitch 向上（+y）为正。
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

RAD_TO_DEG = 180.0 / math.pi
DEG_TO_RAD = math.pi / 180.0


@dataclass(frozen=True)
class GazeAngles:
    """视线角（弧度）"""
    yaw: float
    pitch: float

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch])

    @classmethod
    def from_degrees(cls, yaw_deg: float, pitch_deg: float) -> "GazeAngles":
        return cls(yaw_deg * DEG_TO_RAD, pitch_deg * DEG_TO_RAD)


@dataclass(frozen=True)
class GazeVector:
    """单位视线向量"""
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])


def rotation_from_axis_angle(axis: Tuple[float, float, float], angle: float) -> np.ndarray:
    """Rodrigues公式，angle 为弧度"""
    axis_arr = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(axis_arr)
    if norm == 0.0:
        if angle != 0.0:
            raise ValueError("旋转轴不能为零向量")
        return np.eye(3)
    k = axis_arr / norm
    cross = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * cross + (1.0 - math.cos(angle)) * (cross @ cross)


def is_rotation(matrix: np.ndarray, tol: float = 1e-12) -> bool:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        return False
    orthonormal = np.max(np.abs(matrix @ matrix.T - np.eye(3))) <= tol
    return bool(orthonormal and abs(np.linalg.det(matrix) - 1.0) <= tol)


@dataclass(frozen=True)
class AnnotationPerturbation:
    """数据集级标注扰动：常量旋转 + 常量角偏置 + 独立高斯噪声（均为弧度）"""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    angle_bias: Tuple[float, float] = (0.0, 0.0)
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if not is_rotation(self.rotation):
            raise ValueError("rotation 必须是行列式为+1的正交矩阵")
        if self.noise_std < 0:
            raise ValueError("noise_std 不能为负")

    @classmethod
    def identity(cls) -> "AnnotationPerturbation":
        return cls()

    @classmethod
    def from_axis_angle(
        cls,
        axis: Tuple[float, float, float],
        angle: float,
        angle_bias: Tuple[float, float] = (0.0, 0.0),
        noise_std: float = 0.0,
    ) -> "AnnotationPerturbation":
        return cls(rotation_from_axis_angle(axis, angle), angle_bias, noise_std)

    @property
    def rotation_angle(self) -> float:
        """旋转角（弧度）"""
        cos_theta = (np.trace(self.rotation) - 1.0) / 2.0
        return float(math.acos(max(-1.0, min(1.0, cos_theta))))

    @property
    def is_identity(self) -> bool:
        return (
            bool(np.array_equal(self.rotation, np.eye(3)))
            and self.angle_bias == (0.0, 0.0)
            and self.noise_std == 0.0
        )


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """把角度折回 (-π, π]"""
    wrapped = np.mod(angle + math.pi, 2.0 * math.pi) - math.pi
    return np.where(wrapped == -math.pi, math.pi, wrapped)


def angles_to_vectors(angles: np.ndarray) -> np.ndarray:
    """(N,2) 的 (yaw, pitch) → (N,3) 单位向量"""
    angles = np.asarray(angles, dtype=np.float64)
    yaw, pitch = angles[..., 0], angles[..., 1]
    cos_pitch = np.cos(pitch)
    return np.stack([cos_pitch * np.sin(yaw), np.sin(pitch), cos_pitch * np.cos(yaw)], axis=-1)


def vectors_to_angles(vectors: np.ndarray) -> np.ndarray:
    """(N,3) 向量（无需单位化）→ (N,2) 的 (yaw, pitch)"""
    vectors = np.asarray(vectors, dtype=np.float64)
    unit = vectors / np.linalg.norm(vectors, axis=-1, keepdims=True)
    yaw = np.arctan2(unit[..., 0], unit[..., 2])
    pitch = np.arcsin(np.clip(unit[..., 1], -1.0, 1.0))
    return np.stack([yaw, pitch], axis=-1)


def angular_errors_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """逐样本角度误差（度）"""
    va = angles_to_vectors(a)
    vb = angles_to_vectors(b)
    cos_sim = np.clip(np.sum(va * vb, axis=-1), -1.0, 1.0)
    return np.arccos(cos_sim) * RAD_TO_DEG


def angles_to_vector(a: GazeAngles) -> GazeVector:
    x, y, z = angles_to_vectors(a.as_array())
    return GazeVector(float(x), float(y), float(z))


def vector_to_angles(v: GazeVector) -> GazeAngles:
    yaw, pitch = vectors_to_angles(v.as_array())
    return GazeAngles(float(yaw), float(pitch))


def angular_error_deg(a: GazeAngles, b: GazeAngles) -> float:
    """arccos(clamp(v_a·v_b, −1, 1))·180/π"""
    return float(angular_errors_deg(a.as_array(), b.as_array()))


def perturb_annotations(
    angles: np.ndarray,
    p: AnnotationPerturbation,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """批量扰动：旋转视线向量，转回角度，加常量偏置，再加高斯噪声"""
    angles = np.asarray(angles, dtype=np.float64)
    if p.is_identity:
        return angles.copy()
    rotated = angles_to_vectors(angles) @ p.rotation.T
    out = vectors_to_angles(rotated) + np.asarray(p.angle_bias)
    if p.noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 时必须提供随机数发生器")
        out = out + rng.normal(0.0, p.noise_std, size=out.shape)
    out[..., 0] = wrap_angle(out[..., 0])
    return out


def perturb_annotation(
    a: GazeAngles,
    p: AnnotationPerturbation,
    rng: Optional[np.random.Generator] = None,
) -> GazeAngles:
    yaw, pitch = perturb_annotations(a.as_array(), p, rng)
    return GazeAngles(float(yaw), float(pitch))
