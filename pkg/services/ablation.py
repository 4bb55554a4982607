# -*- coding: UTF-8 -*-
# 消融实验服务

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from app_config import AppConfig
from config import RunConfig
from services.trainer import MetricWriter, Trainer, evaluate
from utils.errors import ConfigError
from utils.logger import logger

CSV_HEADER = "value,final_train_acc,eval_acc"

# 每种扫描的默认取值
DEFAULT_SWEEPS: Dict[str, Tuple[str, ...]] = {
    "gating-dim": ("8", "16", "32", "none"),
    "mechanism": ("gated-ssl", "self-attention", "conv1d", "none"),
    "ssl-position": ("pre-selection", "penultimate"),
    "gamma": ("0", "0.001", "0.005", "0.05"),
}


@dataclass(frozen=True)
class AblationRow:
    value: str
    final_train_acc: float
    eval_acc: float


def arm_overrides(sweep: str, value: str) -> Dict[str, object]:
    """
    把扫描取值翻译成配置覆盖项

    gating-dim 的 none 表示去掉门控（ssl 机制，SSM 输出直接进入输出映射）
    """
    if sweep == "gating-dim":
        if value == "none":
            return {"mechanism": "ssl"}
        return {"d_gating": int(value)}
    if sweep == "mechanism":
        return {"mechanism": value}
    if sweep == "ssl-position":
        return {"ssl_position": value}
    if sweep == "gamma":
        return {"gamma": float(value)}
    raise ConfigError(f"unknown sweep '{sweep}', expected one of {', '.join(DEFAULT_SWEEPS)}")


class AblationRunner:
    """
    消融实验

    每个取值用同一种子与同一份数据训练一个模型，记录最终 train_acc 与评估准确率
    """

    def __init__(self, config: RunConfig, sweep: str, values: Optional[Sequence[str]] = None,
                 threads: Optional[int] = None) -> None:
        if sweep not in DEFAULT_SWEEPS:
            raise ConfigError(f"unknown sweep '{sweep}', expected one of {', '.join(DEFAULT_SWEEPS)}")
        self.config = config
        self.sweep = sweep
        self.values = [str(v) for v in (values or DEFAULT_SWEEPS[sweep])]
        self.threads = threads or AppConfig.get_threads()
        # 提前校验所有取值，避免训练到一半才失败
        self.arms = [config.copy(checkpoint="", resume_from="", **arm_overrides(sweep, v)) for v in self.values]
        for arm in self.arms:
            arm.model_config()

    def run(self) -> List[AblationRow]:
        base = Trainer(self.config, writer=MetricWriter(io.StringIO()))
        splits = {"train": base.load_split("train"), "eval": base.load_split("eval")}

        def train_arm(index: int) -> AblationRow:
            trainer = Trainer(self.arms[index], writer=MetricWriter(io.StringIO()), splits=splits)
            result = trainer.train()
            eval_acc = evaluate(result.model, splits["eval"], threads=1).accuracy
            row = AblationRow(self.values[index], result.final_train_acc, eval_acc)
            logger.info(f"消融 {self.sweep}={row.value}: train_acc={row.final_train_acc:.4f}, "
                        f"eval_acc={row.eval_acc:.4f}")
            return row

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(train_arm, range(len(self.arms))))
        return [train_arm(i) for i in range(len(self.arms))]

    @staticmethod
    def to_csv(rows: Sequence[AblationRow]) -> str:
        lines = [CSV_HEADER]
        lines.extend(f"{r.value},{r.final_train_acc!r},{r.eval_acc!r}" for r in rows)
        return "\n".join(lines) + "\n"

    @classmethod
    def write(cls, rows: Sequence[AblationRow], path: Optional[str] = None) -> str:
        text = cls.to_csv(rows)
        if path:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8") as f:
                f.write(text)
            logger.info(f"已写入消融结果: {path}")
        return text
