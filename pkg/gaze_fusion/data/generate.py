"""
数据集生成
每个样本都是 (seed, 样本序号) 的纯函数，生成顺序不影响结果
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Tuple, Union

import numpy as np
import structlog

from ..geometry.gaze import DEG_TO_RAD, GazeAngles, perturb_annotations
from ..storage.dataset_store import SyntheticDataset, save_dataset
from .render import FaceLayout, SubjectParams, crop_patch, render_face
from .specs import DatasetSpec

logger = structlog.get_logger(__name__)

# 随机数流的用途标签，与 seed 一起组成 SeedSequence 的熵
_SUBJECT_STREAM = 1
_SAMPLE_STREAM = 2


@dataclass(frozen=True)
class SamplePose:
    """一个样本的场景参数与标注（弧度）"""
    index: int
    subject_id: int
    head_pose: np.ndarray
    true_gaze: np.ndarray
    label: np.ndarray
    is_test: bool


def subject_params(spec: DatasetSpec, subject_id: int) -> SubjectParams:
    return SubjectParams.sample(np.random.default_rng([spec.seed, _SUBJECT_STREAM, subject_id]))


def sample_rng(spec: DatasetSpec, index: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, _SAMPLE_STREAM, index])


def draw_pose(spec: DatasetSpec, index: int, rng: np.random.Generator) -> SamplePose:
    """抽取头部姿态与视线，并按数据集扰动得到标注；rng 之后继续用于像素噪声"""
    subject_id, within = divmod(index, spec.samples_per_subject)
    head_half = np.asarray(spec.head_pose_range) * DEG_TO_RAD
    gaze_half = np.asarray(spec.gaze_range) * DEG_TO_RAD
    head_pose = rng.uniform(-head_half, head_half)
    true_gaze = rng.uniform(-gaze_half, gaze_half)
    label = perturb_annotations(true_gaze, spec.perturbation.to_perturbation(), rng)
    return SamplePose(
        index=index,
        subject_id=subject_id,
        head_pose=head_pose,
        true_gaze=true_gaze,
        label=label,
        is_test=within >= spec.samples_per_subject - spec.test_per_subject,
    )


def iter_poses(spec: DatasetSpec) -> Iterable[SamplePose]:
    """只抽取标注、不渲染图像，用于统计检查"""
    for index in range(spec.num_samples):
        yield draw_pose(spec, index, sample_rng(spec, index))


def eye_boxes(layout: FaceLayout) -> np.ndarray:
    return np.array([*layout.left.center, *layout.right.center, layout.eye_box])


def crop_from_box(face: np.ndarray, box: np.ndarray, eye_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """按记录的眼部框从人脸图像重新裁剪，返回 (E,E,1) 的左右眼"""
    image = face[:, :, 0]
    left = crop_patch(image, (box[0], box[1]), box[4], eye_size)
    right = crop_patch(image, (box[2], box[3]), box[4], eye_size)
    return left[:, :, None], right[:, :, None]


def generate_sample(spec: DatasetSpec, index: int) -> Tuple[SamplePose, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """渲染第 index 个样本：人脸先加像素噪声，再从带噪人脸中裁剪双眼"""
    rng = sample_rng(spec, index)
    pose = draw_pose(spec, index, rng)
    subject = subject_params(spec, pose.subject_id)
    rendered = render_face(
        GazeAngles(*pose.true_gaze),
        GazeAngles(*pose.head_pose),
        subject,
        spec.appearance,
        spec.face_size,
    )
    face = rendered.image
    if spec.appearance.pixel_noise > 0:
        face = np.clip(face + rng.normal(0.0, spec.appearance.pixel_noise, face.shape), 0.0, 1.0)
    face = face[:, :, None]
    box = eye_boxes(rendered.layout)
    left, right = crop_from_box(face, box, spec.eye_size)
    return pose, face, left, right, box


def generate_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """按规格生成全部样本"""
    n, s, e = spec.num_samples, spec.face_size, spec.eye_size
    faces = np.empty((n, s, s, 1))
    lefts = np.empty((n, e, e, 1))
    rights = np.empty((n, e, e, 1))
    labels = np.empty((n, 2))
    true_gaze = np.empty((n, 2))
    head_pose = np.empty((n, 2))
    boxes = np.empty((n, 5))
    subjects = np.empty(n, dtype=np.int64)
    is_test = np.empty(n, dtype=bool)

    for i in range(n):
        pose, face, left, right, box = generate_sample(spec, i)
        faces[i], lefts[i], rights[i], boxes[i] = face, left, right, box
        labels[i], true_gaze[i], head_pose[i] = pose.label, pose.true_gaze, pose.head_pose
        subjects[i], is_test[i] = pose.subject_id, pose.is_test

    logger.info("数据集生成完成", name=spec.name, samples=n, test=int(is_test.sum()))
    return SyntheticDataset(
        spec=spec,
        faces=faces,
        left_eyes=lefts,
        right_eyes=rights,
        labels=labels,
        true_gaze=true_gaze,
        head_pose=head_pose,
        eye_boxes=boxes,
        subject_ids=subjects,
        is_test=is_test,
    )


def generate_datasets(specs: List[DatasetSpec], out_dir: Union[str, Path]) -> List[Path]:
    """生成并写出每个数据集，目录名为数据集名"""
    out_dir = Path(out_dir)
    paths = []
    for spec in specs:
        path = out_dir / spec.name
        save_dataset(generate_dataset(spec), path)
        paths.append(path)
    return paths
