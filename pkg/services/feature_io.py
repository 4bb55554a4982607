# -*- coding: UTF-8 -*-
# 特征文件读写服务

import json
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.gsmt import AnswerSet, Sample
from utils.errors import DimensionError, LoadError
from utils.logger import logger

FEATURE_MAGIC = b"GFV1"
QUESTION_MAGIC = b"GQV1"
ANSWER_MAGIC = b"GAV1"
CHECKPOINT_MAGIC = b"GCK1"

_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")

STEP_SECTION = "meta.step"
MANIFEST_NAME = "manifest.json"
LABELS_NAME = "labels.txt"


def _read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise LoadError(f"{path}: cannot read file: {e}") from e


def _write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(data)


def _encode_array(magic: bytes, array: np.ndarray) -> bytes:
    dims = np.asarray(array.shape, dtype=_U32)
    return magic + dims.tobytes() + np.ascontiguousarray(array, dtype=_F32).tobytes()


def _decode_array(path: str, data: bytes, magic: bytes, ndim: int) -> np.ndarray:
    """
    Header: 4-byte magic, ``ndim`` little-endian u32 counts; payload: f32 row-major.

    Raises:
        LoadError: bad magic, short header or a payload whose length differs
            from the declared counts.
    """
    if data[:4] != magic:
        raise LoadError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}", offset=0)
    header = 4 + 4 * ndim
    if len(data) < header:
        raise LoadError(f"{path}: truncated header, expected {header} bytes, got {len(data)}", offset=len(data))
    dims = tuple(int(v) for v in np.frombuffer(data, _U32, count=ndim, offset=4))
    expected = header + 4 * int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        raise LoadError(f"{path}: counts {dims} need {expected} bytes, got {len(data)}", offset=header)
    payload = np.frombuffer(data, _F32, offset=header)
    return payload.astype(np.float64).reshape(dims)


def write_features(path: str, features: np.ndarray) -> None:
    """T x N x d -> GFV1"""
    features = np.asarray(features)
    if features.ndim != 3:
        raise DimensionError(f"features must be T x N x d, got {features.shape}")
    _write_bytes(path, _encode_array(FEATURE_MAGIC, features))


def load_features(path: str) -> np.ndarray:
    """
    读取 GFV1 特征文件

    Returns:
        np.ndarray: T x N x d, float64
    """
    return _decode_array(path, _read_bytes(path), FEATURE_MAGIC, 3)


def write_question(path: str, words: np.ndarray) -> None:
    _write_bytes(path, _encode_array(QUESTION_MAGIC, np.atleast_2d(words)))


def load_question(path: str) -> np.ndarray:
    return _decode_array(path, _read_bytes(path), QUESTION_MAGIC, 2)


def write_answers(path: str, candidates: np.ndarray) -> None:
    _write_bytes(path, _encode_array(ANSWER_MAGIC, np.atleast_2d(candidates)))


def load_answers(path: str) -> np.ndarray:
    return _decode_array(path, _read_bytes(path), ANSWER_MAGIC, 2)


def write_labels(path: str, labels: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("".join(f"{int(label)}\n" for label in labels))


def load_labels(path: str) -> List[int]:
    labels: List[int] = []
    offset = 0
    for raw in _read_bytes(path).decode("utf-8").splitlines(keepends=True):
        line = raw.strip()
        if line:
            try:
                labels.append(int(line))
            except ValueError:
                raise LoadError(f"{path}: label '{line}' is not an integer", offset=offset) from None
        offset += len(raw.encode("utf-8"))
    return labels


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: str, params: Dict[str, np.ndarray], step: int) -> None:
    """
    保存检查点（GCK1）

    布局：magic；u32 段数；段表（u32 名称字节数、UTF-8 名称、u32 维数、各维 u32）；
    随后按段表顺序写入 float64 小端数据
    """
    sections = dict(sorted(params.items()))
    sections[STEP_SECTION] = np.array([float(step)])
    table = [np.asarray([len(sections)], dtype=_U32).tobytes()]
    payload = []
    for name, value in sections.items():
        value = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        table.append(np.asarray([len(encoded)], dtype=_U32).tobytes())
        table.append(encoded)
        table.append(np.asarray([value.ndim, *value.shape], dtype=_U32).tobytes())
        payload.append(np.ascontiguousarray(value, dtype=_F64).tobytes())
    _write_bytes(path, CHECKPOINT_MAGIC + b"".join(table) + b"".join(payload))
    logger.info(f"已写入检查点: {path} ({len(params)} 组参数, step={step})")


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], int]:
    """
    读取检查点

    Returns:
        Tuple[Dict[str, np.ndarray], int]: 参数字典与步数

    Raises:
        LoadError: 格式错误，附带字节偏移
    """
    data = _read_bytes(path)
    if data[:4] != CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}", offset=0)
    pos = 4

    def u32(count: int = 1) -> Tuple[int, ...]:
        nonlocal pos
        if pos + 4 * count > len(data):
            raise LoadError(f"{path}: truncated section table", offset=pos)
        values = tuple(int(v) for v in np.frombuffer(data, _U32, count=count, offset=pos))
        pos += 4 * count
        return values

    (count,) = u32()
    table: List[Tuple[str, Tuple[int, ...]]] = []
    for _ in range(count):
        (length,) = u32()
        if pos + length > len(data):
            raise LoadError(f"{path}: truncated section name", offset=pos)
        name = data[pos:pos + length].decode("utf-8")
        pos += length
        (ndim,) = u32()
        table.append((name, u32(ndim) if ndim else ()))

    expected = pos + 8 * sum(int(np.prod(shape, dtype=np.int64)) for _, shape in table)
    if len(data) != expected:
        raise LoadError(f"{path}: section table needs {expected} bytes, got {len(data)}", offset=pos)
    sections: Dict[str, np.ndarray] = {}
    for name, shape in table:
        size = int(np.prod(shape, dtype=np.int64))
        sections[name] = np.frombuffer(data, _F64, count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    step_value = sections.pop(STEP_SECTION, None)
    step = int(step_value.reshape(-1)[0]) if step_value is not None else 0
    return sections, step


# ---------------------------------------------------------------------------
# dataset directories

class DatasetStore:
    """
    数据集目录读写

    目录包含 manifest.json、labels.txt 以及每个样本的
    sample_XXXXX.gfv / .gqv / .gav 三个文件
    """

    @staticmethod
    def sample_stem(index: int) -> str:
        return f"sample_{index:05d}"

    def save(self, directory: str, samples: Sequence[Sample], manifest: Optional[dict] = None) -> int:
        """
        保存样本到目录

        Returns:
            int: 写入的文件数
        """
        os.makedirs(directory, exist_ok=True)
        count = 0
        layout_shape = None
        for index, sample in enumerate(samples):
            stem = os.path.join(directory, self.sample_stem(index))
            features = sample.features
            if manifest and "T" in manifest and "N" in manifest:
                features = features.reshape(manifest["T"], manifest["N"], -1)
            elif features.ndim == 2:
                features = features.reshape(1, *features.shape)
            layout_shape = features.shape
            write_features(stem + ".gfv", features)
            write_question(stem + ".gqv", sample.question)
            write_answers(stem + ".gav", sample.answers.candidates)
            count += 3
        write_labels(os.path.join(directory, LABELS_NAME), [s.label for s in samples])
        record = dict(manifest or {})
        record["samples"] = len(samples)
        if layout_shape is not None:
            record.setdefault("T", layout_shape[0])
            record.setdefault("N", layout_shape[1])
            record.setdefault("d", layout_shape[2])
        with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
            json.dump(record, f, indent=2, sort_keys=True)
            f.write("\n")
        count += 2
        logger.info(f"已写入数据集: {directory} ({len(samples)} 个样本, {count} 个文件)")
        return count

    def load(self, directory: str) -> List[Sample]:
        """
        从目录加载样本

        Raises:
            LoadError: 清单缺失、文件损坏或标签数量不符
        """
        manifest_path = os.path.join(directory, MANIFEST_NAME)
        try:
            with open(manifest_path, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except (OSError, ValueError) as e:
            raise LoadError(f"{manifest_path}: cannot read manifest: {e}") from e
        labels = load_labels(os.path.join(directory, LABELS_NAME))
        total = int(manifest.get("samples", len(labels)))
        if len(labels) != total:
            raise LoadError(f"{directory}: manifest lists {total} samples but {len(labels)} labels")
        samples = []
        for index in range(total):
            stem = os.path.join(directory, self.sample_stem(index))
            samples.append(Sample(load_features(stem + ".gfv"), load_question(stem + ".gqv"),
                                  AnswerSet(load_answers(stem + ".gav"), labels[index])))
        logger.info(f"已加载数据集: {directory} ({total} 个样本)")
        return samples

    @staticmethod
    def read_manifest(directory: str) -> dict:
        with open(os.path.join(directory, MANIFEST_NAME), "r", encoding="utf-8") as f:
            return json.load(f)
