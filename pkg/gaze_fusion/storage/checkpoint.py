"""
参数序列化
GZF1 二进制格式：文件头魔数 "GZF1"，随后逐个张量记录
  名字长度(u64) | UTF-8名字 | 维数(u64) | 各维大小(u64 × 维数) | 数据(f64 × 元素数)
所有整数与浮点数均为小端，数据按行优先排列。
"""

import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Union

import numpy as np
import structlog

from ..errors import DatasetError

logger = structlog.get_logger(__name__)

MAGIC = b"GZF1"
_U64 = struct.Struct("<Q")


def write_tensors(stream: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    stream.write(MAGIC)
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        # 保留原始形状，0维张量写出的维数为0
        shape = np.shape(array)
        data = np.asarray(array, dtype="<f8")
        stream.write(_U64.pack(len(encoded)))
        stream.write(encoded)
        stream.write(_U64.pack(len(shape)))
        for dim in shape:
            stream.write(_U64.pack(dim))
        stream.write(data.tobytes(order="C"))


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    chunk = stream.read(size)
    if len(chunk) != size:
        raise DatasetError(f"GZF1 文件在读取{what}时提前结束")
    return chunk


def read_tensors(stream: BinaryIO) -> Dict[str, np.ndarray]:
    if stream.read(len(MAGIC)) != MAGIC:
        raise DatasetError("不是 GZF1 文件（魔数不匹配）")
    tensors: Dict[str, np.ndarray] = {}
    while True:
        header = stream.read(_U64.size)
        if not header:
            break
        if len(header) != _U64.size:
            raise DatasetError("GZF1 文件在读取名字长度时提前结束")
        (name_length,) = _U64.unpack(header)
        try:
            name = _read_exact(stream, name_length, "名字").decode("utf-8")
        except UnicodeDecodeError:
            raise DatasetError("GZF1 文件中的张量名不是合法的UTF-8") from None
        (rank,) = _U64.unpack(_read_exact(stream, _U64.size, "维数"))
        shape = tuple(_U64.unpack(_read_exact(stream, _U64.size, "维度"))[0] for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = _read_exact(stream, 8 * count, f"张量 {name} 的数据")
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        write_tensors(f, tensors)
    logger.info("检查点已保存", file=str(path), tensors=len(tensors))


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"检查点不存在: {path}")
    with open(path, "rb") as f:
        return read_tensors(f)
