"""
异常体系
库代码只抛出这些异常，命令行入口负责把它们转换成退出码
"""

from dataclasses import dataclass
from typing import Optional


class GazeFusionError(Exception):
    """所有项目异常的基类"""


class ShapeError(GazeFusionError, ValueError):
    """张量形状或维度不满足算子约定"""


class BackwardError(GazeFusionError, RuntimeError):
    """反向传播调用不合法：非标量损失、脱离计算带的张量或重复反向"""


@dataclass
class ConfigError(GazeFusionError):
    """配置或数据集规格文件错误"""
    message: str
    source: Optional[str] = None
    line_number: Optional[int] = None

    def __str__(self) -> str:
        where = self.source or "<config>"
        if self.line_number is not None:
            return f"{where}:{self.line_number}: {self.message}"
        return f"{where}: {self.message}"


class DatasetError(GazeFusionError):
    """数据集目录缺失、损坏或与运行配置不匹配"""
