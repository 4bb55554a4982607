# -*- coding: UTF-8 -*-
"""
配置文件
包含运行配置（key = value 文本）、模型超参数、合成数据规格和基准测试常量
"""
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

from models.gated_ssl import MECHANISMS
from models.losses import alignment_losses
from models.selection import SegmentLayout
from utils.errors import ConfigError
from utils.logger import logger

# 注意：AppConfig类在app_config.py

SSL_POSITIONS = ("pre-selection", "penultimate")
TASKS = ("global-majority", "temporal-order")


@dataclass(frozen=True)
class GsmtConfig:
    """
    模型超参数

    构造时校验；不合法的组合抛出 ConfigError
    """
    T: int = 16
    N: int = 16
    I: int = 8  # noqa: E741
    d: int = 64
    d_S: int = 64
    d_h: int = 64
    d_gating: int = 16
    k: int = 4
    j: int = 12
    N_L: int = 2
    gamma: float = 0.005
    temperature: float = 1.0
    mechanism: str = "gated-ssl"
    ssl_position: str = "pre-selection"
    c3_layer: int = 0
    alignment_loss: str = "c3"
    score_scale: float = 10.0
    d_answer: int = 0

    def __post_init__(self) -> None:
        layout = self.layout
        if self.N_L < 1:
            raise ConfigError(f"N_L must be >= 1, got {self.N_L}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.score_scale <= 0:
            raise ConfigError(f"score_scale must be > 0, got {self.score_scale}")
        if min(self.d, self.d_S, self.d_h, self.d_gating) < 1 or self.d_answer < 0:
            raise ConfigError("widths d, d_S, d_h, d_gating must be >= 1")
        if not 1 <= self.k <= layout.I:
            raise ConfigError(f"k={self.k} must lie in [1, I={layout.I}]")
        if not 1 <= self.j <= layout.N:
            raise ConfigError(f"j={self.j} must lie in [1, N={layout.N}]")
        if self.mechanism not in MECHANISMS:
            raise ConfigError(f"unknown mechanism '{self.mechanism}', expected one of {', '.join(MECHANISMS)}")
        if self.ssl_position not in SSL_POSITIONS:
            raise ConfigError(f"unknown ssl_position '{self.ssl_position}'")
        if self.alignment_loss not in alignment_losses():
            raise ConfigError(f"unknown alignment_loss '{self.alignment_loss}'")
        if not 0 <= self.c3_layer <= self.N_L:
            raise ConfigError(f"c3_layer={self.c3_layer} must lie in [0, N_L={self.N_L}]")
        if self.ssl_position == "penultimate":
            if self.N_L < 2:
                raise ConfigError("ssl_position=penultimate requires N_L >= 2")
            if self.mechanism not in ("gated-ssl", "ssl"):
                raise ConfigError("ssl_position=penultimate requires mechanism gated-ssl or ssl")
            if self.d_h != self.d:
                raise ConfigError("ssl_position=penultimate requires d_h == d")
        if self.mechanism in ("gated-ssl", "ssl") and not self.d_gating < min(self.d, self.d_h, self.d_S):
            raise ConfigError(
                f"d_gating={self.d_gating} must be smaller than d={self.d}, d_h={self.d_h} and d_S={self.d_S}")

    @property
    def layout(self) -> SegmentLayout:
        return SegmentLayout(self.T, self.N, self.I)

    @property
    def visual_mechanism(self) -> str:
        """视觉阶段实际使用的全局机制（SSL 后移时为 none）"""
        return "none" if self.ssl_position == "penultimate" else self.mechanism

    @property
    def ssl_layer(self) -> Optional[int]:
        """被 SSL 替换的注意力层下标（0 起），没有则为 None"""
        return self.N_L - 2 if self.ssl_position == "penultimate" else None

    @property
    def c3_layer_index(self) -> int:
        """参与 C3 的层（1 起）；0 表示最后一层"""
        return self.c3_layer or self.N_L

    @property
    def answer_width(self) -> int:
        return self.d_answer or self.d


@dataclass(frozen=True)
class SyntheticSpec:
    """
    合成数据规格

    window_segments 为选择窗口的段数 k，用于拒绝采样（任意 k*N_f 帧窗口）
    """
    task: str = "global-majority"
    T: int = 16
    N: int = 16
    I: int = 8  # noqa: E741
    vocab: int = 5
    noise_sigma: float = 0.5
    samples: int = 100
    seed: int = 7
    d: int = 64
    words: int = 4
    window_segments: int = 4

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}', expected one of {', '.join(TASKS)}")
        if self.vocab < 2:
            raise ConfigError(f"vocab must be >= 2, got {self.vocab}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.samples < 0 or self.d < 1 or self.words < 1:
            raise ConfigError("samples must be >= 0, d and words >= 1")
        if not 1 <= self.window_segments <= self.layout.I:
            raise ConfigError(f"window_segments={self.window_segments} must lie in [1, I={self.I}]")
        if self.task == "temporal-order" and self.I < 2:
            raise ConfigError("temporal-order needs at least 2 segments")

    @property
    def layout(self) -> SegmentLayout:
        return SegmentLayout(self.T, self.N, self.I)

    @property
    def window_frames(self) -> int:
        return self.window_segments * self.layout.N_f


class RunConfig:
    """
    运行配置

    UTF-8 文本，每行一个 `key = value`，`#` 之后为注释，未知键被拒绝；
    值的类型由 _DEFAULT_CONFIG 中的默认值决定
    """
    # 默认配置（桌面规模的 toy 预设）
    _DEFAULT_CONFIG: Dict[str, Any] = {
        "task": "global-majority",      # 合成任务
        "T": 16,                        # 帧数
        "N": 16,                        # 每帧 patch 数
        "d": 64,                        # 特征宽度
        "d_S": 64,                      # 状态维度
        "d_h": 64,                      # 视觉输出宽度
        "d_gating": 16,                 # 门控宽度
        "I": 8,                         # 段数
        "k": 4,                         # top-k 段
        "j": 12,                        # top-j patch
        "N_L": 2,                       # 多模态注意力层数
        "gamma": 0.005,                 # C3 权重
        "temperature": 1.0,             # Gumbel 温度
        "mechanism": "gated-ssl",       # 全局机制
        "ssl_position": "pre-selection",  # SSL 位置
        "c3_layer": 0,                  # C3 所用层（0 为最后一层）
        "alignment_loss": "c3-unit",    # 对齐损失（c3 为原始 Gram，c3-unit 先逐行归一化）
        "score_scale": 10.0,            # 余弦分数到 logit 的缩放
        "d_answer": 0,                  # 答案嵌入宽度（0 与 d 相同）
        "vocab": 5,                     # 颜色数 V
        "noise_sigma": 0.5,             # 特征噪声
        "words": 4,                     # 问题词数
        "train_samples": 2000,          # 训练样本数
        "eval_samples": 500,            # 评估样本数
        "data_seed": 7,                 # 数据种子
        "train_data": "",               # 训练集目录（空则内存生成）
        "eval_data": "",                # 评估集目录（空则内存生成）
        "seed": 7,                      # 模型与训练种子
        "learning_rate": 0.05,          # SGD 学习率
        "steps": 1500,                  # 训练步数
        "batch_size": 8,                # 批大小
        "grad_clip": 5.0,               # 梯度全局范数上限（0 不裁剪）
        "log_interval": 250,            # 指标输出间隔
        "train_acc_samples": 100,       # 计算 train_acc 的样本数
        "checkpoint": "",               # 检查点输出路径
        "resume_from": "",              # 续训检查点
    }

    def __init__(self, values: Optional[Dict[str, Any]] = None, path: Optional[str] = None) -> None:
        self._config: Dict[str, Any] = self._DEFAULT_CONFIG.copy()
        self.path = path
        if values:
            self.update_config(values)

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        """
        解析配置文本

        Raises:
            ConfigError: 所有出错行一并列出
        """
        values: Dict[str, Any] = {}
        errors: List[str] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                errors.append(f"line {lineno}: expected 'key = value', got '{raw.strip()}'")
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in cls._DEFAULT_CONFIG:
                errors.append(f"line {lineno}: unknown key '{key}'")
                continue
            try:
                values[key] = cls._coerce(key, value)
            except ValueError:
                errors.append(f"line {lineno}: cannot read '{value}' as {type(cls._DEFAULT_CONFIG[key]).__name__} for '{key}'")
        if errors:
            raise ConfigError(f"{source}: " + "; ".join(errors))
        return cls(values, path=source)

    @classmethod
    def load_config(cls, path: str) -> "RunConfig":
        """从文件加载配置"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        config = cls.parse_text(text, source=path)
        logger.info(f"已加载运行配置: {path}")
        return config

    @classmethod
    def _coerce(cls, key: str, value: Any) -> Any:
        default = cls._DEFAULT_CONFIG[key]
        if isinstance(default, str):
            return str(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return float(value)

    def update_config(self, new_config: Dict[str, Any]) -> "RunConfig":
        """
        更新配置

        Args:
            new_config: 新的配置字典，键必须已知

        Returns:
            RunConfig: self，便于链式调用
        """
        for key, value in new_config.items():
            if key not in self._DEFAULT_CONFIG:
                raise ConfigError(f"unknown config key '{key}'")
            try:
                self._config[key] = self._coerce(key, value)
            except ValueError as e:
                raise ConfigError(f"invalid value '{value}' for '{key}'") from e
        return self

    def copy(self, **overrides: Any) -> "RunConfig":
        return RunConfig(self._config.copy(), path=self.path).update_config(overrides)

    def get_config(self) -> Dict[str, Any]:
        return dict(self._config)

    def get_config_value(self, key: str) -> Any:
        """
        获取指定配置项的值

        Raises:
            ConfigError: 未知键
        """
        if key not in self._config:
            raise ConfigError(f"unknown config key '{key}'")
        return self._config[key]

    def to_text(self) -> str:
        return "".join(f"{key} = {value}\n" for key, value in self._config.items())

    def save_config(self, path: str) -> None:
        """以规范文本形式保存配置"""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_text())
        logger.info(f"已保存运行配置: {path}")

    def model_config(self) -> GsmtConfig:
        """生成经过校验的模型超参数"""
        c = self._config
        return GsmtConfig(
            T=c["T"], N=c["N"], I=c["I"], d=c["d"], d_S=c["d_S"], d_h=c["d_h"], d_gating=c["d_gating"],
            k=c["k"], j=c["j"], N_L=c["N_L"], gamma=c["gamma"], temperature=c["temperature"],
            mechanism=c["mechanism"], ssl_position=c["ssl_position"], c3_layer=c["c3_layer"],
            alignment_loss=c["alignment_loss"], score_scale=c["score_scale"], d_answer=c["d_answer"],
        )

    def synthetic_spec(self, split: str = "train") -> SyntheticSpec:
        """
        生成合成数据规格

        Args:
            split: train 或 eval；评估集使用不同的种子流
        """
        c = self._config
        samples = c["train_samples"] if split == "train" else c["eval_samples"]
        seed = c["data_seed"] if split == "train" else c["data_seed"] + 1_000_003
        return SyntheticSpec(task=c["task"], T=c["T"], N=c["N"], I=c["I"], vocab=c["vocab"],
                             noise_sigma=c["noise_sigma"], samples=samples, seed=seed, d=c["d"],
                             words=c["words"], window_segments=c["k"])


class BenchConfig:
    """
    基准测试常量
    """
    LENGTHS: Tuple[int, ...] = (256, 512, 1024, 2048, 4096)
    MECHANISMS: Tuple[str, ...] = ("self-attention", "conv1d", "gated-ssl")
    RUNS: int = 5                 # 每个点的重复次数（取中位数）
    D: int = 64                   # 输入宽度
    D_H: int = 64                 # 输出宽度
    D_GATING: int = 16            # 门控宽度 / 注意力内部宽度
    D_S: int = 64                 # 状态维度
    SEED: int = 0
    CSV_HEADER: str = "mechanism,L,peak_elems,allocs,wall_ns"
