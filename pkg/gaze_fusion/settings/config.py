"""
配置管理系统
系统级配置来自环境变量与YAML文件，运行级配置使用便于diff的 key=value 文本
"""

import logging
import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import structlog
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..errors import ConfigError
from ..models.gam import GamMode
from ..models.ttgf import FusionTopology

logger = structlog.get_logger(__name__)


class Regime(str, Enum):
    """训练方式：单数据集或多数据集混合"""
    SINGLE = "single"
    MIXED = "mixed"


class ModelConfig(BaseModel):
    """网络结构配置，默认值为玩具规模"""
    topology: FusionTopology = Field(default=FusionTopology.EH_LR, description="特征融合拓扑")
    in_channels: int = Field(default=1, ge=1, description="输入图像通道数")
    face_size: int = Field(default=32, ge=4, description="人脸图像边长")
    eye_size: int = Field(default=16, ge=4, description="眼部图像边长")
    conv_channels: Tuple[int, ...] = Field(default=(8, 16, 32), description="卷积各阶段通道数")
    feature_dim: int = Field(default=32, ge=1, description="骨干网络输出特征维度")
    proj_dim: int = Field(default=16, ge=1, description="融合模块逐token投影维度")
    num_heads: int = Field(default=4, ge=1, description="多头注意力头数")
    num_blocks: int = Field(default=2, ge=1, description="每个编码器的Transformer块数")
    mlp_hidden: int = Field(default=64, ge=1, description="Transformer块内MLP隐藏层大小")
    gaze_hidden: int = Field(default=16, ge=1, description="视线回归MLP隐藏层大小")
    gam_hidden: int = Field(default=16, ge=1, description="GAM MLP隐藏层大小")
    gam_mode: GamMode = Field(default=GamMode.MLP, description="GAM偏移头类型")
    ln_eps: float = Field(default=1e-5, gt=0, description="层归一化eps")

    @field_validator("conv_channels", mode="before")
    @classmethod
    def split_channels(cls, v: Any) -> Any:
        if isinstance(v, str):
            return tuple(int(part) for part in v.split(",") if part.strip())
        return v

    @field_validator("conv_channels")
    @classmethod
    def validate_channels(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(c < 1 for c in v):
            raise ValueError("卷积通道数必须为正整数且至少一个阶段")
        return v


class TrainConfig(BaseModel):
    """训练配置"""
    lr0: float = Field(default=1e-4, gt=0, description="初始学习率")
    warmup_steps: int = Field(default=500, ge=0, description="线性预热步数")
    gamma: float = Field(default=0.96, gt=0, le=1, description="每个epoch的指数衰减系数")
    epochs: int = Field(default=20, ge=1, description="训练轮数")
    anchor_epochs: int = Field(default=0, ge=0, description="混合训练前只在锚数据集上预训练的轮数，单数据集训练时忽略")
    batch_size: int = Field(default=64, ge=1, description="批大小")
    weight_decay: float = Field(default=0.01, ge=0, description="解耦权重衰减")
    beta1: float = Field(default=0.9, ge=0, lt=1, description="一阶矩系数")
    beta2: float = Field(default=0.999, ge=0, lt=1, description="二阶矩系数")
    eps: float = Field(default=1e-8, gt=0, description="AdamW数值稳定项")
    seed: int = Field(default=0, ge=0, description="随机种子")
    regime: Regime = Field(default=Regime.MIXED, description="训练方式")
    gam_enabled: bool = Field(default=True, description="是否启用GAM")
    eval_batch_size: int = Field(default=256, ge=1, description="评估批大小")


class RunConfig(BaseModel):
    """一次运行的完整配置"""
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)

    @model_validator(mode="after")
    def check_regime(self) -> "RunConfig":
        if self.train.regime == Regime.SINGLE and self.train.gam_enabled:
            # 单数据集训练没有需要校正的标注差异
            self.train = self.train.model_copy(update={"gam_enabled": False})
        return self

    def to_text(self) -> str:
        """序列化为 key=value 文本，与 parse_run_config 精确互逆"""
        lines = []
        for section, model in (("model", self.model), ("train", self.train)):
            for name in type(model).model_fields:
                lines.append(f"{section}.{name}={format_value(getattr(model, name))}")
        return "\n".join(lines) + "\n"


def format_value(value: Any) -> str:
    """把配置值格式化为可无损解析的文本"""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def iter_key_values(text: str, source: str = "<config>") -> Iterator[Tuple[int, str, str]]:
    """逐行解析 key=value，跳过空行与 # 注释"""
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("缺少 '=' 分隔符", source=source, line_number=line_number)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError("键名为空", source=source, line_number=line_number)
        yield line_number, key, value


def validation_to_config_error(
    exc: ValidationError,
    source: str,
    key_lines: Dict[str, int],
    prefix: str = "",
) -> ConfigError:
    """把pydantic校验错误映射回出错的行号"""
    first = exc.errors()[0]
    field = ".".join(str(part) for part in first.get("loc", ()) if isinstance(part, str))
    line_number = key_lines.get(f"{prefix}{field}") if field else None
    return ConfigError(f"{field or '配置'}: {first.get('msg', '校验失败')}", source=source, line_number=line_number)


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """解析运行配置文本"""
    sections: Dict[str, Dict[str, str]] = {"model": {}, "train": {}}
    key_lines: Dict[str, int] = {}
    for line_number, key, value in iter_key_values(text, source):
        section, _, name = key.partition(".")
        if section not in sections or not name:
            raise ConfigError(f"未知配置项 '{key}'", source=source, line_number=line_number)
        fields = (ModelConfig if section == "model" else TrainConfig).model_fields
        if name not in fields:
            raise ConfigError(f"未知配置项 '{key}'", source=source, line_number=line_number)
        if key in key_lines:
            raise ConfigError(f"重复的配置项 '{key}'", source=source, line_number=line_number)
        key_lines[key] = line_number
        sections[section][name] = value

    try:
        model = ModelConfig(**sections["model"])
    except ValidationError as e:
        raise validation_to_config_error(e, source, key_lines, "model.") from None
    try:
        train = TrainConfig(**sections["train"])
    except ValidationError as e:
        raise validation_to_config_error(e, source, key_lines, "train.") from None
    return RunConfig(model=model, train=train)


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """从文件加载运行配置"""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"无法读取配置文件: {e.strerror}", source=str(path)) from None
    return parse_run_config(text, source=str(path))


def save_run_config(config: RunConfig, path: Union[str, Path]) -> None:
    """保存运行配置"""
    Path(path).write_text(config.to_text(), encoding="utf-8")


class SystemConfig(BaseSettings):
    """系统配置"""
    log_level: str = Field(default="INFO", description="日志级别")
    log_format: str = Field(default="console", description="日志格式: console 或 json")
    debug_mode: bool = Field(default=False, description="调试模式，开启逐算子NaN/Inf检查")
    default_data_dir: str = Field(default="./data", description="默认数据集目录")
    default_runs_dir: str = Field(default="./runs", description="默认运行输出目录")

    model_config = SettingsConfigDict(
        env_prefix="GAZE_FUSION_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False,
    )

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        valid_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if v.upper() not in valid_levels:
            raise ValueError(f"日志级别必须是: {valid_levels}")
        return v.upper()

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v.lower() not in ("console", "json"):
            raise ValueError("日志格式必须是 console 或 json")
        return v.lower()


class ConfigManager:
    """配置管理器：环境变量优先，其次YAML文件，最后默认值"""

    def __init__(self, config_file: Optional[Path] = None):
        self._config_file = config_file or Path("config") / "config.yaml"
        self._config: Optional[SystemConfig] = None

    def load_config(self) -> SystemConfig:
        """加载系统配置"""
        if self._config is None:
            env_config = SystemConfig()
            if self._config_file.exists():
                data = self._load_yaml(self._config_file)
                data.update({k: getattr(env_config, k) for k in env_config.model_fields_set})
                self._config = SystemConfig(**data)
            else:
                self._config = env_config
        return self._config

    def _load_yaml(self, config_file: Path) -> Dict[str, Any]:
        """从YAML文件读取配置字典"""
        try:
            with open(config_file, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            logger.error("配置文件加载失败", file=str(config_file), error=str(e))
            raise ConfigError(f"配置文件加载失败: {e}", source=str(config_file)) from None
        if not isinstance(data, dict):
            raise ConfigError("配置文件顶层必须是映射", source=str(config_file))
        return {k: v for k, v in data.items() if k in SystemConfig.model_fields}

    def save_config(self, config: SystemConfig) -> None:
        """保存配置到YAML文件"""
        self._config_file.parent.mkdir(parents=True, exist_ok=True)
        with open(self._config_file, "w", encoding="utf-8") as f:
            yaml.safe_dump(config.model_dump(), f, default_flow_style=False, allow_unicode=True)
        logger.info("配置文件保存成功", file=str(self._config_file))
        self._config = config

    def reset(self) -> None:
        self._config = None


def configure_logging(level: str = "INFO", fmt: str = "console") -> None:
    """安装structlog处理链，输出到stderr"""
    renderer: Any
    if fmt == "json":
        renderer = structlog.processors.JSONRenderer()
    else:
        renderer = structlog.dev.ConsoleRenderer(colors=False)
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(logging.getLevelName(level.upper())),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=False,
    )


# 全局配置管理器实例
config_manager = ConfigManager()


def get_config() -> SystemConfig:
    """获取系统配置"""
    return config_manager.load_config()
