# -*- coding: UTF-8 -*-
# 训练与评估服务

import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from app_config import AppConfig
from config import RunConfig
from models.gsmt import GsmtModel, Sample
from services.feature_io import DatasetStore, load_checkpoint, save_checkpoint
from services.synthetic import SyntheticGenerator
from utils.errors import ContractError, LoadError
from utils.logger import logger

SEED_SPACE: int = 2 ** 31 - 1


class MetricWriter:
    """把指标以 JSON Lines 写入同一个输出流（线程安全）"""

    def __init__(self, stream: Optional[TextIO] = None) -> None:
        self.stream = stream if stream is not None else sys.stdout
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        line = json.dumps(record)
        with self._lock:
            self.stream.write(line + "\n")
            self.stream.flush()


@dataclass
class EvalReport:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {"n": self.n, "correct": self.correct, "accuracy": self.accuracy}


@dataclass
class TrainResult:
    """
    训练结果

    Attributes:
        metrics: 输出过的指标记录
        losses: 本次运行每一步更新前的批次损失
    """
    model: GsmtModel
    step: int
    metrics: List[dict] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)

    @property
    def final_train_acc(self) -> float:
        return self.metrics[-1]["train_acc"] if self.metrics else 0.0


def evaluate(model: GsmtModel, samples: Sequence[Sample], threads: Optional[int] = None) -> EvalReport:
    """
    无噪声评估

    Args:
        model: 待评估模型（参数只读）
        samples: 带标签的样本
        threads: 并行线程数，默认取 AppConfig.get_threads()

    Raises:
        ContractError: 样本为空
    """
    if not samples:
        raise ContractError("evaluation set is empty")
    workers = threads or AppConfig.get_threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            predictions = list(pool.map(model.predict, samples))
    else:
        predictions = [model.predict(s) for s in samples]
    correct = sum(int(p == s.label) for p, s in zip(predictions, samples))
    return EvalReport(len(samples), correct)


class Trainer:
    """
    训练器

    负责数据加载（目录或内存合成）、按步确定性的批次抽取、SGD 训练循环、
    指标输出与检查点读写
    """

    def __init__(self, config: RunConfig, writer: Optional[MetricWriter] = None,
                 splits: Optional[Dict[str, List[Sample]]] = None) -> None:
        self.config = config
        self.model_config = config.model_config()
        self.writer = writer or MetricWriter()
        self._splits: Dict[str, List[Sample]] = dict(splits or {})

    def load_split(self, split: str) -> List[Sample]:
        """
        获取 train / eval 样本，配置了目录时从目录读取，否则内存生成
        """
        if split not in self._splits:
            directory = self.config.get_config_value(f"{split}_data")
            if directory:
                samples = DatasetStore().load(directory)
            else:
                samples = SyntheticGenerator(self.config.synthetic_spec(split)).generate().samples
            self._splits[split] = samples
        return self._splits[split]

    def build_model(self, checkpoint: Optional[str] = None) -> Tuple[GsmtModel, int]:
        """
        构建模型；给出检查点时载入参数与步数

        Raises:
            LoadError: 检查点参数与配置不符
        """
        seed = self.config.get_config_value("seed")
        model = GsmtModel.init(self.model_config, seed)
        if not checkpoint:
            return model, 0
        params, step = load_checkpoint(checkpoint)
        expected = {name: value.shape for name, value in model.params.items()}
        found = {name: value.shape for name, value in params.items()}
        if expected != found:
            missing = sorted(set(expected) ^ set(found))
            mismatched = sorted(n for n in set(expected) & set(found) if expected[n] != found[n])
            raise LoadError(f"{checkpoint}: parameters do not match the config "
                            f"(differing names {missing}, shapes {mismatched})")
        logger.info(f"已从检查点恢复: {checkpoint} (step={step})")
        return GsmtModel(self.model_config, params, seed), step

    def batch(self, step: int, samples: Sequence[Sample]) -> Tuple[List[Sample], List[int]]:
        """第 step 步的批次与选择噪声种子，只取决于 (seed, step)"""
        rng = np.random.default_rng([self.config.get_config_value("seed"), step])
        size = self.config.get_config_value("batch_size")
        indices = rng.integers(0, len(samples), size=size)
        seeds = rng.integers(0, SEED_SPACE, size=size)
        return [samples[i] for i in indices], [int(s) for s in seeds]

    def batch_loss(self, model: GsmtModel, step: int, samples: Sequence[Sample]) -> Tuple[float, float, float]:
        """不更新参数时第 step 步批次的 (loss, ce, c3) 均值"""
        batch, seeds = self.batch(step, samples)
        named = model.bind()
        losses, aligns = [], []
        for sample, seed in zip(batch, seeds):
            result = model.forward(sample, named, seed)
            losses.append(result.loss.item())
            aligns.append(result.alignment.item())
        gamma = self.model_config.gamma
        loss, align = float(np.mean(losses)), float(np.mean(aligns))
        ce = float(np.mean([l - gamma * a for l, a in zip(losses, aligns)]))
        return loss, ce, align

    def train(self) -> TrainResult:
        """
        训练循环

        第 0 步（非续训时）、每 log_interval 步以及最后一步各输出一条指标：
        {step, loss, ce, c3, train_acc}；loss 为该步更新前的批次均值
        """
        cfg = self.config
        samples = self.load_split("train")
        if not samples:
            raise ContractError("training set is empty")
        model, start = self.build_model(cfg.get_config_value("resume_from") or None)
        steps = cfg.get_config_value("steps")
        interval = max(1, cfg.get_config_value("log_interval"))
        learning_rate = cfg.get_config_value("learning_rate")
        grad_clip = cfg.get_config_value("grad_clip")
        acc_samples = samples[:max(1, cfg.get_config_value("train_acc_samples"))]
        result = TrainResult(model, start)
        logger.info(f"开始训练: steps={steps}, start={start}, samples={len(samples)}, "
                    f"params={model.parameter_count}")

        if start == 0:
            loss, ce, c3 = self.batch_loss(model, 0, samples)
            self._emit(result, 0, loss, ce, c3, model, acc_samples)
        for step in range(start, steps):
            batch, seeds = self.batch(step, samples)
            outcome = model.train_step(batch, learning_rate, seeds, grad_clip)
            result.losses.append(outcome.loss)
            done = step + 1
            logger.debug(f"step {done}: loss={outcome.loss:.6f}, grad_norm={outcome.grad_norm:.4f}")
            if done % interval == 0 or done == steps:
                self._emit(result, done, outcome.loss, outcome.ce, outcome.c3, model, acc_samples)
        result.step = max(start, steps)

        checkpoint = cfg.get_config_value("checkpoint")
        if checkpoint:
            save_checkpoint(checkpoint, model.params, result.step)
        return result

    def _emit(self, result: TrainResult, step: int, loss: float, ce: float, c3: float,
              model: GsmtModel, acc_samples: Sequence[Sample]) -> None:
        record = {"step": step, "loss": loss, "ce": ce, "c3": c3,
                  "train_acc": evaluate(model, acc_samples).accuracy}
        result.metrics.append(record)
        self.writer.write(record)

    def evaluate_checkpoint(self, checkpoint: str) -> EvalReport:
        """载入检查点并在评估集上计算准确率"""
        model, _ = self.build_model(checkpoint)
        report = evaluate(model, self.load_split("eval"))
        logger.info(f"评估完成: {report.correct}/{report.n} = {report.accuracy:.4f}")
        return report
