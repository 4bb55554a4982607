# -*- coding: UTF-8 -*-
"""内存增长基准所用的瞬时缓冲计数"""

from typing import Optional

import numpy as np


class AllocationTracker:
    """
    存活瞬时缓冲的元素计数

    调用方在创建中间数组时交给 take，丢弃时交给 give_back；
    peak 为存活元素数的最高水位，allocs 为登记过的缓冲个数
    """

    def __init__(self) -> None:
        self.live: int = 0
        self.peak: int = 0
        self.allocs: int = 0

    def take(self, arr: np.ndarray) -> np.ndarray:
        self.live += int(arr.size)
        self.allocs += 1
        if self.live > self.peak:
            self.peak = self.live
        return arr

    def give_back(self, *arrs: np.ndarray) -> None:
        for arr in arrs:
            self.live -= int(arr.size)

    def reset(self) -> None:
        self.live = self.peak = self.allocs = 0


def track(tracker: Optional[AllocationTracker], arr: np.ndarray) -> np.ndarray:
    """有 tracker 时登记 arr，否则原样返回"""
    return tracker.take(arr) if tracker is not None else arr


def release(tracker: Optional[AllocationTracker], *arrs: np.ndarray) -> None:
    if tracker is not None:
        tracker.give_back(*arrs)
