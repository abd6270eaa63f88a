"""
合成视线场景渲染
椭圆头部的位置与倾斜编码头部姿态，两只眼睛中虹膜圆盘的位移与头部相对视线成正比；
眼部图像由人脸图像经双线性重采样裁剪得到（RoI align 的对应物）。
渲染与分辨率无关，同一输入总是得到逐位相同的图像。
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..geometry.gaze import DEG_TO_RAD, GazeAngles
from .specs import MAX_GAZE_PITCH_DEG, MAX_GAZE_YAW_DEG, MAX_HEAD_DEG, AppearanceParams

BACKGROUND = 0.1
SCLERA = 0.92
IRIS = 0.12
# 眼部裁剪框边长与眼睛半宽之比
EYE_BOX_RATIO = 2.6
_BASE_EYE_HALF_WIDTH = 0.11
_BASE_EYE_HALF_HEIGHT = 0.06
_BASE_IRIS_RADIUS = 0.045

Point = Tuple[float, float]


@dataclass(frozen=True)
class SubjectParams:
    """受试者相关的外观参数"""
    head_scale: float = 1.0
    eye_spacing: float = 0.17
    eye_height: float = 0.0
    skin_tone: float = 0.62
    iris_size: float = 1.0

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "SubjectParams":
        return cls(
            head_scale=float(rng.uniform(0.92, 1.08)),
            eye_spacing=float(rng.uniform(0.155, 0.185)),
            eye_height=float(rng.uniform(-0.015, 0.015)),
            skin_tone=float(rng.uniform(0.5, 0.72)),
            iris_size=float(rng.uniform(0.9, 1.1)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.head_scale, self.eye_spacing, self.eye_height, self.skin_tone, self.iris_size])


@dataclass(frozen=True)
class EyeLayout:
    center: Point
    half_width: float
    half_height: float
    iris_center: Point
    iris_radius: float


@dataclass(frozen=True)
class FaceLayout:
    """像素坐标下的几何布局，像素 (i, j) 覆盖 [j, j+1)×[i, i+1)"""
    size: int
    head_center: Point
    head_axes: Tuple[float, float]
    shear: float
    left: EyeLayout
    right: EyeLayout
    eye_box: float


@dataclass(frozen=True)
class RenderedFace:
    image: np.ndarray
    iris_coverage: np.ndarray
    layout: FaceLayout


@dataclass(frozen=True)
class RenderedSample:
    face: np.ndarray
    left_eye: np.ndarray
    right_eye: np.ndarray
    layout: FaceLayout


def check_pose(true_gaze: GazeAngles, head_pose: GazeAngles) -> None:
    limit = MAX_HEAD_DEG * DEG_TO_RAD
    if abs(head_pose.yaw) > limit or abs(head_pose.pitch) > limit:
        raise ValueError(f"头部姿态超出 ±{MAX_HEAD_DEG}°")
    if abs(true_gaze.yaw) > MAX_GAZE_YAW_DEG * DEG_TO_RAD or abs(true_gaze.pitch) > MAX_GAZE_PITCH_DEG * DEG_TO_RAD:
        raise ValueError(f"视线超出 ±{MAX_GAZE_YAW_DEG}°/±{MAX_GAZE_PITCH_DEG}°")


def face_layout(
    true_gaze: GazeAngles,
    head_pose: GazeAngles,
    subject: SubjectParams,
    appearance: AppearanceParams,
    size: int,
) -> FaceLayout:
    s = float(size)
    scale = subject.head_scale
    sin_hy, sin_hp = math.sin(head_pose.yaw), math.sin(head_pose.pitch)
    cx = (0.5 + 0.16 * sin_hy) * s
    cy = (0.5 - 0.16 * sin_hp) * s
    head_axes = ((0.34 * scale * (0.8 + 0.2 * math.cos(head_pose.yaw))) * s, 0.42 * scale * s)
    shear = 0.2 * sin_hy

    eye_y = cy + (-0.1 * scale + subject.eye_height - 0.04 * sin_hp) * s
    spread = subject.eye_spacing * scale * math.cos(head_pose.yaw) * s
    eye_x_center = cx + 0.06 * sin_hy * s + shear * (eye_y - cy)
    base_half_width = _BASE_EYE_HALF_WIDTH * scale * s
    half_height = _BASE_EYE_HALF_HEIGHT * scale * s
    iris_radius = _BASE_IRIS_RADIUS * scale * subject.iris_size * appearance.iris_scale * s

    rel_yaw = max(-math.pi / 2, min(math.pi / 2, true_gaze.yaw - head_pose.yaw))
    rel_pitch = max(-math.pi / 2, min(math.pi / 2, true_gaze.pitch - head_pose.pitch))

    def eye(x: float, foreshortening: float) -> EyeLayout:
        half_width = base_half_width * foreshortening
        travel_x = max(half_width - iris_radius, 0.2 * half_width)
        travel_y = max(half_height - 0.5 * iris_radius, 0.2 * half_height)
        iris_center = (x + 0.6 * travel_x * math.sin(rel_yaw), eye_y - 0.6 * travel_y * math.sin(rel_pitch))
        return EyeLayout((x, eye_y), half_width, half_height, iris_center, iris_radius)

    # 头部转动时两只眼睛的透视缩短方向相反
    left = eye(eye_x_center - spread, 1.0 - 0.25 * sin_hy)
    right = eye(eye_x_center + spread, 1.0 + 0.25 * sin_hy)
    return FaceLayout(
        size=size,
        head_center=(cx, cy),
        head_axes=head_axes,
        shear=shear,
        left=left,
        right=right,
        eye_box=EYE_BOX_RATIO * base_half_width,
    )


def _subsample_grid(size: int) -> Tuple[np.ndarray, np.ndarray, int]:
    factor = max(2, 256 // size)
    coords = (np.arange(size * factor) + 0.5) / factor
    ys, xs = np.meshgrid(coords, coords, indexing="ij")
    return xs, ys, factor


def _soft(signed_distance: np.ndarray, factor: int) -> np.ndarray:
    """宽度为一个子采样间距的线性边缘"""
    return np.clip(0.5 - signed_distance * factor, 0.0, 1.0)


def _ellipse(xs: np.ndarray, ys: np.ndarray, center: Point, axes: Tuple[float, float], shear: float, factor: int) -> np.ndarray:
    dy = ys - center[1]
    dx = xs - center[0] - shear * dy
    radius = np.sqrt((dx / axes[0]) ** 2 + (dy / axes[1]) ** 2)
    return _soft((radius - 1.0) * min(axes), factor)


def _disk(xs: np.ndarray, ys: np.ndarray, center: Point, radius: float, factor: int) -> np.ndarray:
    return _soft(np.hypot(xs - center[0], ys - center[1]) - radius, factor)


def _pool(values: np.ndarray, size: int, factor: int) -> np.ndarray:
    return values.reshape(size, factor, size, factor).mean(axis=(1, 3))


def render_face(
    true_gaze: GazeAngles,
    head_pose: GazeAngles,
    subject: SubjectParams,
    appearance: AppearanceParams,
    size: int = 32,
) -> RenderedFace:
    """渲染人脸灰度图，像素值在 [0,1]"""
    check_pose(true_gaze, head_pose)
    layout = face_layout(true_gaze, head_pose, subject, appearance, size)
    xs, ys, factor = _subsample_grid(size)

    head = _ellipse(xs, ys, layout.head_center, layout.head_axes, layout.shear, factor)
    skin = min(1.0, subject.skin_tone * appearance.brightness)
    sclera_value = min(1.0, SCLERA * appearance.brightness)

    image = BACKGROUND * (1.0 - head) + skin * head
    iris_total = np.zeros_like(image)
    for eye in (layout.left, layout.right):
        sclera = _ellipse(xs, ys, eye.center, (eye.half_width, eye.half_height), layout.shear, factor)
        iris = _disk(xs, ys, eye.iris_center, eye.iris_radius, factor) * sclera
        image = image * (1.0 - sclera) + sclera_value * sclera
        image = image * (1.0 - iris) + IRIS * iris
        iris_total = iris_total + iris

    image = np.clip(0.5 + appearance.contrast * (image - 0.5), 0.0, 1.0)
    return RenderedFace(
        image=_pool(image, size, factor),
        iris_coverage=_pool(iris_total, size, factor),
        layout=layout,
    )


def crop_patch(image: np.ndarray, center: Point, box: float, out_size: int) -> np.ndarray:
    """在以 center 为中心、边长 box 的方框内按格心双线性采样 out_size×out_size"""
    height, width = image.shape
    offsets = (np.arange(out_size) + 0.5) * (box / out_size) - box / 2.0
    # 连续坐标 u 对应的像素下标为 u - 0.5
    cols = np.clip(center[0] + offsets - 0.5, 0.0, width - 1.0)
    rows = np.clip(center[1] + offsets - 0.5, 0.0, height - 1.0)
    c0 = np.minimum(np.floor(cols).astype(np.int64), width - 2) if width > 1 else np.zeros(out_size, np.int64)
    r0 = np.minimum(np.floor(rows).astype(np.int64), height - 2) if height > 1 else np.zeros(out_size, np.int64)
    fc = cols - c0
    fr = rows - r0
    c1 = np.minimum(c0 + 1, width - 1)
    r1 = np.minimum(r0 + 1, height - 1)
    top = image[np.ix_(r0, c0)] * (1.0 - fc) + image[np.ix_(r0, c1)] * fc
    bottom = image[np.ix_(r1, c0)] * (1.0 - fc) + image[np.ix_(r1, c1)] * fc
    return top * (1.0 - fr)[:, None] + bottom * fr[:, None]


def crop_eyes(face: np.ndarray, layout: FaceLayout, eye_size: int) -> Tuple[np.ndarray, np.ndarray]:
    left = crop_patch(face, layout.left.center, layout.eye_box, eye_size)
    right = crop_patch(face, layout.right.center, layout.eye_box, eye_size)
    return left, right


def render_sample(
    true_gaze: GazeAngles,
    head_pose: GazeAngles,
    subject: SubjectParams,
    appearance: AppearanceParams,
    face_size: int = 32,
    eye_size: int = 16,
) -> RenderedSample:
    """渲染人脸并裁剪双眼，返回带通道轴的 (H,W,1) 图像"""
    rendered = render_face(true_gaze, head_pose, subject, appearance, face_size)
    left, right = crop_eyes(rendered.image, rendered.layout, eye_size)
    return RenderedSample(
        face=rendered.image[:, :, None],
        left_eye=left[:, :, None],
        right_eye=right[:, :, None],
        layout=rendered.layout,
    )


def center_of_mass(weights: np.ndarray) -> Point:
    """权重图的质心（像素中心坐标 j+0.5, i+0.5）"""
    total = weights.sum()
    if total <= 0:
        raise ValueError("权重全为零，无法计算质心")
    rows, cols = np.indices(weights.shape)
    return float(((cols + 0.5) * weights).sum() / total), float(((rows + 0.5) * weights).sum() / total)
