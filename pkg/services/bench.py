# -*- coding: UTF-8 -*-
# 基准测试服务：全局机制的瞬时缓冲与耗时随 L 的增长

import csv
import io
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from config import BenchConfig
from models.gated_ssl import MECHANISMS, init_mechanism, mechanism_inference
from numerics.alloc import AllocationTracker
from numerics.fft import is_power_of_two
from utils.errors import ConfigError
from utils.logger import logger


@dataclass(frozen=True)
class BenchRow:
    mechanism: str
    L: int  # noqa: N815
    peak_elems: int
    allocs: int
    wall_ns: int


@dataclass
class BenchReport:
    rows: List[BenchRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(BenchConfig.CSV_HEADER.split(","))
        for row in self.rows:
            writer.writerow([row.mechanism, row.L, row.peak_elems, row.allocs, row.wall_ns])
        return buffer.getvalue()

    def peak_ratios(self, mechanism: str) -> List[float]:
        """peak_elems(2L) / peak_elems(L) for consecutive lengths of one mechanism"""
        peaks = [r.peak_elems for r in self.rows if r.mechanism == mechanism]
        return [b / a for a, b in zip(peaks, peaks[1:])]


class Benchmark:
    """
    机制基准测试

    对每个 (机制, L) 运行若干次仅前向的 numpy 推理，记录瞬时缓冲峰值元素数、
    分配次数与中位数耗时
    """

    def __init__(self, mechanisms: Sequence[str] = BenchConfig.MECHANISMS,
                 lengths: Sequence[int] = BenchConfig.LENGTHS, runs: int = BenchConfig.RUNS) -> None:
        unknown = [m for m in mechanisms if m not in MECHANISMS]
        if unknown:
            raise ConfigError(f"unknown mechanisms {unknown}, expected a subset of {', '.join(MECHANISMS)}")
        bad = [n for n in lengths if not is_power_of_two(int(n))]
        if bad:
            raise ConfigError(f"bench lengths must be powers of two, got {bad}")
        if runs < BenchConfig.RUNS:
            raise ConfigError(f"bench needs at least {BenchConfig.RUNS} runs per point, got {runs}")
        self.mechanisms = list(mechanisms)
        self.lengths = sorted(int(n) for n in lengths)
        self.runs = runs

    def measure(self, mechanism: str, length: int) -> BenchRow:
        rng = np.random.default_rng([BenchConfig.SEED, length])
        params = init_mechanism(mechanism, BenchConfig.D, BenchConfig.D_H, BenchConfig.D_GATING,
                                BenchConfig.D_S, rng)
        x = rng.normal(size=(length, BenchConfig.D))
        tracker = AllocationTracker()
        walls = []
        for _ in range(self.runs):
            tracker.reset()
            start = time.perf_counter_ns()
            mechanism_inference(mechanism, params, x, tracker)
            walls.append(time.perf_counter_ns() - start)
        row = BenchRow(mechanism, length, tracker.peak, tracker.allocs, int(np.median(walls)))
        logger.debug(f"bench {row}")
        return row

    def run(self) -> BenchReport:
        report = BenchReport()
        for length in self.lengths:
            for mechanism in self.mechanisms:
                report.rows.append(self.measure(mechanism, length))
        logger.info(f"基准测试完成: {len(report.rows)} 行")
        return report

    @staticmethod
    def write(report: BenchReport, path: Optional[str] = None) -> str:
        """写出 CSV；path 为空时只返回文本"""
        text = report.to_csv()
        if path:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            logger.info(f"已写入基准报告: {path}")
        return text
