"""
数据集存储
每个数据集一个目录：manifest.txt（key=value 头部 + 逐样本索引）与 data.bin（小端 float64 记录）
每条记录依次为 人脸 | 左眼 | 右眼 | 标注(2) | 真实视线(2) | 头部姿态(2) | 眼部框(5)
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import structlog

from ..data.specs import DatasetSpec, parse_spec_line
from ..errors import ConfigError, DatasetError

logger = structlog.get_logger(__name__)

FORMAT_TAG = "gzf-dataset-1"
MANIFEST_NAME = "manifest.txt"
DATA_NAME = "data.bin"
SPLITS = ("train", "test")


@dataclass
class SyntheticDataset:
    """内存中的合成数据集，样本按生成顺序排列"""
    spec: DatasetSpec
    faces: np.ndarray
    left_eyes: np.ndarray
    right_eyes: np.ndarray
    labels: np.ndarray
    true_gaze: np.ndarray
    head_pose: np.ndarray
    eye_boxes: np.ndarray
    subject_ids: np.ndarray
    is_test: np.ndarray
    content_hash: Optional[str] = None

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def dataset_id(self) -> int:
        return self.spec.dataset_id

    def __len__(self) -> int:
        return len(self.labels)

    def split_indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"未知的划分 '{split}'，应为 {SPLITS}")
        mask = self.is_test if split == "test" else ~self.is_test
        return np.flatnonzero(mask)

    def images(self, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.faces[rows], self.left_eyes[rows], self.right_eyes[rows]

    @property
    def record_length(self) -> int:
        s, e = self.spec.face_size, self.spec.eye_size
        return s * s + 2 * e * e + 2 + 2 + 2 + 5

    def records(self) -> np.ndarray:
        """(N, record_length) 的扁平记录矩阵"""
        n = len(self)
        return np.concatenate(
            [
                self.faces.reshape(n, -1),
                self.left_eyes.reshape(n, -1),
                self.right_eyes.reshape(n, -1),
                self.labels,
                self.true_gaze,
                self.head_pose,
                self.eye_boxes,
            ],
            axis=1,
        )


def _header_lines(dataset: SyntheticDataset, data_sha256: str) -> List[str]:
    spec = dataset.spec
    p = spec.perturbation
    return [
        f"format={FORMAT_TAG}",
        f"name={spec.name}",
        f"dataset_id={spec.dataset_id}",
        f"seed={spec.seed}",
        f"spec={spec.to_line()}",
        f"perturbation_rotation_deg={p.rotation_deg!r}",
        f"perturbation_magnitude_deg={p.magnitude_deg!r}",
        f"face_size={spec.face_size}",
        f"eye_size={spec.eye_size}",
        f"record_length={dataset.record_length}",
        f"num_samples={len(dataset)}",
        f"num_train={int((~dataset.is_test).sum())}",
        f"num_test={int(dataset.is_test.sum())}",
        f"data_sha256={data_sha256}",
    ]


def _index_lines(dataset: SyntheticDataset) -> List[str]:
    return [
        f"sample={i} subject={int(dataset.subject_ids[i])} split={'test' if dataset.is_test[i] else 'train'}"
        for i in range(len(dataset))
    ]


def content_hash(header: List[str], index: List[str]) -> str:
    """清单内容（不含自身这一行）的 SHA-256；data.bin 通过 data_sha256 间接覆盖"""
    digest = hashlib.sha256()
    for line in header + index:
        digest.update(line.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def save_dataset(dataset: SyntheticDataset, directory: Union[str, Path]) -> str:
    """写出数据集目录，返回内容哈希"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(dataset.records(), dtype="<f8").tobytes(order="C")
    data_sha256 = hashlib.sha256(blob).hexdigest()
    header = _header_lines(dataset, data_sha256)
    index = _index_lines(dataset)
    digest = content_hash(header, index)

    (directory / DATA_NAME).write_bytes(blob)
    manifest = "\n".join(header + [f"content_hash={digest}"] + index) + "\n"
    (directory / MANIFEST_NAME).write_text(manifest, encoding="utf-8")
    dataset.content_hash = digest
    logger.info("数据集已保存", name=dataset.name, directory=str(directory), content_hash=digest[:12])
    return digest


def read_manifest(directory: Union[str, Path]) -> Tuple[Dict[str, str], List[str], List[str]]:
    """返回 (头部键值, 头部原始行, 索引行)"""
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"数据集清单不存在: {path}")
    header: Dict[str, str] = {}
    header_lines: List[str] = []
    index_lines: List[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("sample="):
            index_lines.append(line)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"清单行无法解析: {line!r}")
        header[key] = value
        if key != "content_hash":
            header_lines.append(line)
    return header, header_lines, index_lines


def load_dataset(directory: Union[str, Path], verify: bool = True) -> SyntheticDataset:
    """读取数据集目录；verify 时核对数据与清单哈希"""
    directory = Path(directory)
    header, header_lines, index_lines = read_manifest(directory)
    if header.get("format") != FORMAT_TAG:
        raise DatasetError(f"{directory}: 不支持的数据集格式 {header.get('format')!r}")
    try:
        spec = parse_spec_line(header["spec"], source=str(directory / MANIFEST_NAME))
    except KeyError:
        raise DatasetError(f"{directory}: 清单缺少 spec 字段") from None
    except ConfigError as e:
        raise DatasetError(f"{directory}: 清单中的规格无效: {e.message}") from None

    data_path = directory / DATA_NAME
    if not data_path.exists():
        raise DatasetError(f"数据文件不存在: {data_path}")
    blob = data_path.read_bytes()
    if verify:
        if hashlib.sha256(blob).hexdigest() != header.get("data_sha256"):
            raise DatasetError(f"{data_path}: 数据哈希与清单不一致")
        if content_hash(header_lines, index_lines) != header.get("content_hash"):
            raise DatasetError(f"{directory}: 清单内容哈希不一致")

    n = int(header["num_samples"])
    s, e = spec.face_size, spec.eye_size
    length = int(header["record_length"])
    if len(blob) != 8 * n * length or len(index_lines) != n:
        raise DatasetError(f"{directory}: 数据大小与清单记录数不符")
    records = np.frombuffer(blob, dtype="<f8").astype(np.float64).reshape(n, length)

    subjects = np.empty(n, dtype=np.int64)
    is_test = np.empty(n, dtype=bool)
    for row, line in enumerate(index_lines):
        fields = dict(token.partition("=")[::2] for token in line.split())
        subjects[row] = int(fields["subject"])
        is_test[row] = fields["split"] == "test"

    offsets = np.cumsum([0, s * s, e * e, e * e, 2, 2, 2, 5])
    columns = [records[:, offsets[k]:offsets[k + 1]] for k in range(len(offsets) - 1)]
    return SyntheticDataset(
        spec=spec,
        faces=columns[0].reshape(n, s, s, 1),
        left_eyes=columns[1].reshape(n, e, e, 1),
        right_eyes=columns[2].reshape(n, e, e, 1),
        labels=columns[3].copy(),
        true_gaze=columns[4].copy(),
        head_pose=columns[5].copy(),
        eye_boxes=columns[6].copy(),
        subject_ids=subjects,
        is_test=is_test,
        content_hash=header.get("content_hash"),
    )


class DatasetStore:
    """数据根目录下按名字存取数据集，带内存缓存与命中统计"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._memory_cache: Dict[str, SyntheticDataset] = {}
        self.stats = {"memory_hits": 0, "disk_loads": 0}

    def names(self) -> List[str]:
        if not self.root.is_dir():
            raise DatasetError(f"数据目录不存在: {self.root}")
        return sorted(p.name for p in self.root.iterdir() if (p / MANIFEST_NAME).exists())

    def get(self, name: str) -> SyntheticDataset:
        if name in self._memory_cache:
            self.stats["memory_hits"] += 1
            return self._memory_cache[name]
        path = self.root / name
        if not (path / MANIFEST_NAME).exists():
            raise DatasetError(f"数据集 '{name}' 不存在于 {self.root}")
        dataset = load_dataset(path)
        self.stats["disk_loads"] += 1
        self._memory_cache[name] = dataset
        return dataset

    def load_all(self) -> List[SyntheticDataset]:
        """全部数据集，按 dataset_id 排序（锚数据集在前）"""
        return sorted((self.get(name) for name in self.names()), key=lambda d: d.dataset_id)

    def hashes(self) -> Dict[str, str]:
        return {name: self.get(name).content_hash or "" for name in self.names()}

    def get_stats(self) -> Dict[str, int]:
        return dict(self.stats, cached=len(self._memory_cache))
