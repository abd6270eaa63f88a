"""
数据集规格
合成数据集的场景参数、外观风格与标注扰动；规格文件每行一个数据集，由空格分隔的 key=value 组成
"""

from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..errors import ConfigError
from ..geometry.gaze import DEG_TO_RAD, AnnotationPerturbation

# 渲染器接受的物理范围（度）
MAX_HEAD_DEG = 80.0
MAX_GAZE_YAW_DEG = 120.0
MAX_GAZE_PITCH_DEG = 80.0


def _split_floats(v: Any) -> Any:
    if isinstance(v, str):
        return tuple(float(part) for part in v.split(","))
    return v


class AppearanceParams(BaseModel):
    """数据集级渲染风格"""
    brightness: float = Field(default=1.0, gt=0, description="皮肤与巩膜亮度系数")
    contrast: float = Field(default=1.0, gt=0, description="围绕0.5的对比度系数")
    iris_scale: float = Field(default=1.0, gt=0, le=1.5, description="虹膜尺寸系数")
    pixel_noise: float = Field(default=0.01, ge=0, description="像素噪声标准差")


class PerturbationSpec(BaseModel):
    """标注扰动参数（角度单位为度，便于书写）"""
    rotation_axis: Tuple[float, float, float] = Field(default=(0.0, 1.0, 0.0), description="旋转轴")
    rotation_deg: float = Field(default=0.0, description="旋转角")
    bias_yaw_deg: float = Field(default=0.0, description="yaw常量偏置")
    bias_pitch_deg: float = Field(default=0.0, description="pitch常量偏置")
    noise_deg: float = Field(default=0.0, ge=0, description="高斯噪声标准差")

    @field_validator("rotation_axis", mode="before")
    @classmethod
    def split_axis(cls, v: Any) -> Any:
        return _split_floats(v)

    @field_validator("rotation_axis")
    @classmethod
    def validate_axis(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if all(c == 0.0 for c in v):
            raise ValueError("旋转轴不能为零向量")
        return v

    def to_perturbation(self) -> AnnotationPerturbation:
        return AnnotationPerturbation.from_axis_angle(
            self.rotation_axis,
            self.rotation_deg * DEG_TO_RAD,
            (self.bias_yaw_deg * DEG_TO_RAD, self.bias_pitch_deg * DEG_TO_RAD),
            self.noise_deg * DEG_TO_RAD,
        )

    @property
    def is_identity(self) -> bool:
        return self.rotation_deg == 0.0 and self.bias_yaw_deg == 0.0 and self.bias_pitch_deg == 0.0 and self.noise_deg == 0.0

    @property
    def magnitude_deg(self) -> float:
        """注入的系统性偏差大小（旋转角 + 偏置幅值）"""
        return abs(self.rotation_deg) + (self.bias_yaw_deg ** 2 + self.bias_pitch_deg ** 2) ** 0.5


class DatasetSpec(BaseModel):
    """一个合成数据集的完整规格"""
    name: str = Field(..., min_length=1, description="数据集名")
    dataset_id: int = Field(..., ge=0, description="数据集编号，0为锚数据集")
    num_subjects: int = Field(default=10, ge=1, description="受试者数")
    samples_per_subject: int = Field(default=50, ge=2, description="每个受试者的样本数")
    gaze_range: Tuple[float, float] = Field(default=(40.0, 30.0), description="视线 yaw/pitch 半宽（度）")
    head_pose_range: Tuple[float, float] = Field(default=(20.0, 15.0), description="头部姿态 yaw/pitch 半宽（度）")
    appearance: AppearanceParams = Field(default_factory=AppearanceParams)
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    seed: int = Field(default=0, ge=0, lt=2 ** 64, description="随机种子")
    face_size: int = Field(default=32, ge=8, description="人脸图像边长")
    eye_size: int = Field(default=16, ge=4, description="眼部图像边长")
    test_fraction: float = Field(default=0.2, gt=0, lt=1, description="每个受试者留作测试的样本比例")

    @field_validator("gaze_range", "head_pose_range", mode="before")
    @classmethod
    def split_ranges(cls, v: Any) -> Any:
        return _split_floats(v)

    @field_validator("gaze_range")
    @classmethod
    def validate_gaze_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("视线范围必须为正")
        if v[0] > MAX_GAZE_YAW_DEG or v[1] > MAX_GAZE_PITCH_DEG:
            raise ValueError(f"视线范围超出 ±{MAX_GAZE_YAW_DEG}°/±{MAX_GAZE_PITCH_DEG}°")
        return v

    @field_validator("head_pose_range")
    @classmethod
    def validate_head_range(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if v[0] <= 0 or v[1] <= 0:
            raise ValueError("头部姿态范围必须为正")
        if max(v) > MAX_HEAD_DEG:
            raise ValueError(f"头部姿态范围超出 ±{MAX_HEAD_DEG}°")
        return v

    @model_validator(mode="after")
    def validate_anchor(self) -> "DatasetSpec":
        if self.dataset_id == 0 and not self.perturbation.is_identity:
            raise ValueError("锚数据集（dataset_id=0）的标注扰动必须为恒等")
        return self

    @property
    def num_samples(self) -> int:
        return self.num_subjects * self.samples_per_subject

    @property
    def test_per_subject(self) -> int:
        return max(1, round(self.test_fraction * self.samples_per_subject))

    def to_line(self) -> str:
        """规范化的单行表示，键顺序固定"""
        return " ".join(f"{k}={v}" for k, v in flatten_spec(self).items())


_APPEARANCE_KEYS = set(AppearanceParams.model_fields)
_PERTURBATION_KEYS = set(PerturbationSpec.model_fields)
_TOP_KEYS = set(DatasetSpec.model_fields) - {"appearance", "perturbation"}


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def flatten_spec(spec: DatasetSpec) -> Dict[str, str]:
    flat: Dict[str, str] = {}
    for key in DatasetSpec.model_fields:
        if key in ("appearance", "perturbation"):
            sub = getattr(spec, key)
            for sub_key in type(sub).model_fields:
                flat[sub_key] = _fmt(getattr(sub, sub_key))
        else:
            flat[key] = _fmt(getattr(spec, key))
    return flat


def spec_from_pairs(pairs: Dict[str, str]) -> DatasetSpec:
    """由扁平键值构造规格；未知键抛出 KeyError"""
    top: Dict[str, Any] = {}
    appearance: Dict[str, Any] = {}
    perturbation: Dict[str, Any] = {}
    for key, value in pairs.items():
        if key in _APPEARANCE_KEYS:
            appearance[key] = value
        elif key in _PERTURBATION_KEYS:
            perturbation[key] = value
        elif key in _TOP_KEYS:
            top[key] = value
        else:
            raise KeyError(key)
    return DatasetSpec(**top, appearance=appearance, perturbation=perturbation)


def parse_spec_line(line: str, source: str = "<spec>", line_number: int = 0) -> DatasetSpec:
    pairs: Dict[str, str] = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise ConfigError(f"无法解析的字段 '{token}'，应为 key=value", source=source, line_number=line_number)
        if key in pairs:
            raise ConfigError(f"重复的字段 '{key}'", source=source, line_number=line_number)
        pairs[key] = value
    try:
        return spec_from_pairs(pairs)
    except KeyError as e:
        raise ConfigError(f"未知字段 '{e.args[0]}'", source=source, line_number=line_number) from None
    except ValidationError as e:
        first = e.errors()[0]
        loc = ".".join(str(part) for part in first.get("loc", ()))
        raise ConfigError(f"{loc or '规格'}: {first.get('msg')}", source=source, line_number=line_number) from None


def parse_spec_file(text: str, source: str = "<spec>") -> List[DatasetSpec]:
    """解析规格文件，检查名字与编号唯一"""
    specs: List[DatasetSpec] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        spec = parse_spec_line(line, source, line_number)
        if any(s.dataset_id == spec.dataset_id for s in specs):
            raise ConfigError(f"dataset_id {spec.dataset_id} 重复", source=source, line_number=line_number)
        if any(s.name == spec.name for s in specs):
            raise ConfigError(f"数据集名 '{spec.name}' 重复", source=source, line_number=line_number)
        specs.append(spec)
    if not specs:
        raise ConfigError("规格文件中没有数据集", source=source)
    return specs


def load_spec_file(path: Union[str, Path]) -> List[DatasetSpec]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"无法读取规格文件: {e.strerror}", source=str(path)) from None
    return parse_spec_file(text, source=str(path))


def default_specs(samples_per_subject: int = 50, seed: int = 2024) -> List[DatasetSpec]:
    """四个默认数据集：宽范围锚数据集D0，以及范围更窄、各带不同扰动和外观偏移的D1–D3"""
    return [
        DatasetSpec(
            name="D0", dataset_id=0, num_subjects=24, samples_per_subject=samples_per_subject,
            gaze_range=(60.0, 45.0), head_pose_range=(40.0, 30.0), seed=seed,
        ),
        DatasetSpec(
            name="D1", dataset_id=1, num_subjects=12, samples_per_subject=samples_per_subject,
            gaze_range=(25.0, 20.0), head_pose_range=(10.0, 8.0),
            appearance=AppearanceParams(brightness=0.9, contrast=1.1),
            perturbation=PerturbationSpec(rotation_deg=5.0, noise_deg=0.5),
            seed=seed + 1,
        ),
        DatasetSpec(
            name="D2", dataset_id=2, num_subjects=12, samples_per_subject=samples_per_subject,
            gaze_range=(30.0, 20.0), head_pose_range=(20.0, 15.0),
            appearance=AppearanceParams(brightness=1.1, contrast=0.9, iris_scale=1.1),
            perturbation=PerturbationSpec(rotation_axis=(1.0, 0.0, 0.0), rotation_deg=4.0, bias_yaw_deg=-2.0, noise_deg=0.5),
            seed=seed + 2,
        ),
        DatasetSpec(
            name="D3", dataset_id=3, num_subjects=12, samples_per_subject=samples_per_subject,
            gaze_range=(20.0, 15.0), head_pose_range=(15.0, 10.0),
            appearance=AppearanceParams(brightness=0.8, contrast=1.2, iris_scale=0.9),
            perturbation=PerturbationSpec(rotation_axis=(0.0, 1.0, 0.5), rotation_deg=6.0, noise_deg=1.0),
            seed=seed + 3,
        ),
    ]
