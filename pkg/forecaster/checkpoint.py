"""检查点读写

二进制布局（小端）：
    magic "WINDBERT" | u32 版本号 | u32 元数据长度 | 元数据 JSON（两份配置 + Adam 步数）
    | u32 记录数 | 重复 [u32 名字长度, 名字, u32 rank, u32 × rank 维度, u8 字节宽度, 原始浮点数据]
参数记录在前，随后是 adam.m.<name> / adam.v.<name>。同样的内容总是写出同样的字节。
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, ValidationError

from autodiff.tensor import Tensor
from config.settings import ForecasterConfig, TrainConfig
from forecaster.model import ForecasterParams, param_shapes
from forecaster.train import AdamState
from models.errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"WINDBERT"
FORMAT_VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ForecasterParams
    state: AdamState
    model: ForecasterConfig
    train: TrainConfig


def _encode_record(name: str, array: np.ndarray) -> bytes:
    raw_name = name.encode("utf-8")
    width = array.dtype.itemsize
    if width not in _DTYPES:
        raise ValueError(f"不支持的数据类型: {array.dtype}")
    header = struct.pack("<I", len(raw_name)) + raw_name
    header += struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape)
    header += struct.pack("<B", width)
    return header + np.ascontiguousarray(array, dtype=_DTYPES[width]).tobytes()


def save_checkpoint(
    params: ForecasterParams,
    state: AdamState,
    model_config: ForecasterConfig,
    train_config: TrainConfig,
    path: Path | str,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(
        {
            "model": model_config.model_dump(mode="json"),
            "train": train_config.model_dump(mode="json"),
            "adam_t": state.t,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")

    records = [(name, tensor.data) for name, tensor in params]
    records += [(f"adam.m.{name}", state.m[name]) for name in params.names()]
    records += [(f"adam.v.{name}", state.v[name]) for name in params.names()]

    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta]
    chunks.append(struct.pack("<I", len(records)))
    chunks += [_encode_record(name, array) for name, array in records]
    path.write_bytes(b"".join(chunks))
    logger.info(f"检查点已保存: {path} ({path.stat().st_size / 1024:.0f} KB)")
    return path


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CorruptCheckpoint(f"文件在偏移 {self.pos} 处提前结束")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: Path | str) -> Checkpoint:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpoint("magic 不匹配")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(version, FORMAT_VERSION)

    try:
        meta = json.loads(reader.take(reader.u32()).decode("utf-8"))
        model_config = ForecasterConfig(**meta["model"])
        train_config = TrainConfig(**meta["train"])
        adam_t = int(meta["adam_t"])
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise CorruptCheckpoint(f"元数据无法解析: {e}") from None

    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptCheckpoint("记录名不是合法 UTF-8") from None
        rank = reader.u32()
        if rank > 8:
            raise CorruptCheckpoint(f"{name}: rank={rank} 不合理")
        shape = tuple(reader.u32() for _ in range(rank))
        width = reader.take(1)[0]
        if width not in _DTYPES:
            raise CorruptCheckpoint(f"{name}: 未知字节宽度 {width}")
        count = int(np.prod(shape, dtype=np.int64))
        payload = reader.take(count * width)
        arrays[name] = np.frombuffer(payload, dtype=_DTYPES[width]).reshape(shape).astype(
            _DTYPES[width].newbyteorder("=")
        )
    if reader.pos != len(reader.raw):
        raise CorruptCheckpoint(f"文件末尾多出 {len(reader.raw) - reader.pos} 字节")

    expected = param_shapes(model_config)
    tensors, m, v = {}, {}, {}
    for name, shape in expected.items():
        for key, target in ((name, tensors), (f"adam.m.{name}", m), (f"adam.v.{name}", v)):
            if key not in arrays:
                raise CorruptCheckpoint(f"缺少记录 {key}")
            if arrays[key].shape != shape:
                raise CorruptCheckpoint(f"{key} 形状 {arrays[key].shape} 与配置要求 {shape} 不符")
            target[name] = arrays[key]
    if len(arrays) != 3 * len(expected):
        raise CorruptCheckpoint("存在配置之外的多余记录")

    params = ForecasterParams(
        tensors={n: Tensor(a, requires_grad=True, name=n, copy=False) for n, a in tensors.items()}
    )
    return Checkpoint(
        params=params,
        state=AdamState(m=m, v=v, t=adam_t),
        model=model_config,
        train=train_config,
    )
