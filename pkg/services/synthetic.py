# -*- coding: UTF-8 -*-
# 合成数据服务：全局多数与时间顺序两类规则任务

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import SyntheticSpec
from models.gsmt import AnswerSet, Sample
from services.feature_io import DatasetStore
from utils.errors import SpecError
from utils.logger import logger

MAX_DRAWS: int = 1_000_000
# 拒绝采样：满足窗口性质的样本比例下限
MIN_WINDOW_FRACTION: float = 0.5


def majority(colors: Sequence[int], vocab: int) -> Optional[int]:
    """唯一多数颜色；并列时返回 None"""
    counts = np.bincount(np.asarray(colors, dtype=np.int64), minlength=vocab)
    top = int(np.argmax(counts))
    if int(np.sum(counts == counts[top])) > 1:
        return None
    return top


def window_differs(colors: Sequence[int], label: int, window: int, vocab: int) -> bool:
    """是否存在长度为 window 的连续帧窗口，其局部多数不是 label（并列也算不同）"""
    colors = list(colors)
    for start in range(len(colors) - window + 1):
        if majority(colors[start:start + window], vocab) != label:
            return True
    return False


@dataclass
class SyntheticDataset:
    """
    生成结果

    Attributes:
        samples: 模型输入样本
        latents: 每个样本的生成隐变量（用于暴力复核标签）
        manifest: 数据集描述
    """
    samples: List[Sample]
    latents: List[Dict[str, object]]
    manifest: Dict[str, object] = field(default_factory=dict)

    @property
    def window_fraction(self) -> float:
        flags = [bool(lat.get("window_differs", False)) for lat in self.latents]
        return float(np.mean(flags)) if flags else 0.0


class SyntheticGenerator:
    """
    合成数据生成器

    global-majority：每帧的全部 patch 是某个颜色嵌入加噪声，答案为全视频的多数颜色；
    temporal-order：事件 A、B 各占一整帧且位于不同段，答案为 A 是否先于 B
    """

    def __init__(self, spec: SyntheticSpec, max_draws: int = MAX_DRAWS) -> None:
        self.spec = spec
        self.max_draws = max_draws
        base = np.random.default_rng([spec.seed, 0])
        self.palette = base.normal(0.0, 1.0, size=(spec.vocab, spec.d))
        self.question = base.normal(0.0, 1.0, size=(spec.words, spec.d))
        self.background = base.normal(0.0, 1.0, size=spec.d)
        self.events = base.normal(0.0, 1.0, size=(2, spec.d))
        self.order_answers = base.normal(0.0, 1.0, size=(2, spec.d))

    def generate(self) -> SyntheticDataset:
        """
        生成全部样本

        Raises:
            SpecError: 拒绝采样在 max_draws 次内无法满足约束
        """
        if self.spec.task == "global-majority":
            dataset = self._global_majority()
        else:
            dataset = self._temporal_order()
        dataset.manifest.update({
            "task": self.spec.task, "T": self.spec.T, "N": self.spec.N, "I": self.spec.I,
            "d": self.spec.d, "vocab": self.spec.vocab, "noise_sigma": self.spec.noise_sigma,
            "seed": self.spec.seed, "latents": dataset.latents,
        })
        logger.info(f"已生成合成数据: task={self.spec.task}, samples={len(dataset.samples)}")
        return dataset

    def write(self, out_dir: str) -> int:
        """
        生成并写入目录

        Returns:
            int: 写入的文件数
        """
        dataset = self.generate()
        return DatasetStore().save(out_dir, dataset.samples, dataset.manifest)

    def _frames_to_features(self, frame_vectors: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        spec = self.spec
        features = np.repeat(frame_vectors[:, None, :], spec.N, axis=1)
        if spec.noise_sigma > 0:
            features = features + spec.noise_sigma * rng.normal(size=features.shape)
        return features

    def _global_majority(self) -> SyntheticDataset:
        spec = self.spec
        rng = np.random.default_rng([spec.seed, 1])
        window = spec.window_frames
        samples: List[Sample] = []
        latents: List[Dict[str, object]] = []
        with_property = 0
        draws = 0
        while len(samples) < spec.samples:
            draws += 1
            if draws > self.max_draws:
                raise SpecError(
                    f"global-majority: no valid sample set after {self.max_draws} draws "
                    f"(T={spec.T}, window={window}, vocab={spec.vocab})")
            colors = rng.integers(0, spec.vocab, size=spec.T)
            label = majority(colors, spec.vocab)
            if label is None:
                continue
            differs = window_differs(colors, label, window, spec.vocab)
            if not differs and (with_property / (len(samples) + 1)) < MIN_WINDOW_FRACTION:
                continue
            with_property += int(differs)
            features = self._frames_to_features(self.palette[colors], rng)
            samples.append(Sample(features, self.question, AnswerSet(self.palette, label)))
            latents.append({"colors": [int(c) for c in colors], "label": label, "window_differs": differs})
        logger.debug(f"global-majority: {draws} 次抽样得到 {len(samples)} 个样本")
        return SyntheticDataset(samples, latents, {"window_frames": window})

    def _temporal_order(self) -> SyntheticDataset:
        spec = self.spec
        layout = spec.layout
        rng = np.random.default_rng([spec.seed, 1])
        samples: List[Sample] = []
        latents: List[Dict[str, object]] = []
        for _ in range(spec.samples):
            seg_a, seg_b = rng.choice(layout.I, size=2, replace=False)
            frame_a = int(seg_a) * layout.N_f + int(rng.integers(0, layout.N_f))
            frame_b = int(seg_b) * layout.N_f + int(rng.integers(0, layout.N_f))
            frames = np.repeat(self.background[None, :], spec.T, axis=0)
            frames[frame_a] = self.events[0]
            frames[frame_b] = self.events[1]
            label = 0 if frame_a < frame_b else 1
            features = self._frames_to_features(frames, rng)
            samples.append(Sample(features, self.question, AnswerSet(self.order_answers, label)))
            latents.append({"a_frame": frame_a, "b_frame": frame_b, "label": label})
        return SyntheticDataset(samples, latents)
