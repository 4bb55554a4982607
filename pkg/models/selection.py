# -*- coding: UTF-8 -*-
"""
池化层级与段、patch 的 Gumbel top-k 选择

patch 经最大池化成帧，帧再成段，词成问题向量。选择器以 Q K^T / sqrt(d_k) 为 logit，
在其 log-softmax（不截断）上做不放回的重复 Gumbel-max 抽取，所选行经直通 one-hot 返回：
前向为硬选择的行，反向沿扰动后 log 概率的 softmax 传播
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.params import ParamGroup, init_linear
from numerics import tensor as tn
from numerics.tensor import Tensor, one_hot
from utils.errors import ConfigError, DimensionError

# 已抽中候选的加性掩码
MASKED: float = -1e9


@dataclass(frozen=True)
class SegmentLayout:
    """T 帧、每帧 N 个 patch，按连续 N_f 帧分成 I 段"""
    T: int
    N: int
    I: int  # noqa: E741

    def __post_init__(self) -> None:
        if min(self.T, self.N, self.I) < 1:
            raise ConfigError(f"layout needs T, N, I >= 1, got T={self.T} N={self.N} I={self.I}")
        if self.T % self.I != 0:
            raise ConfigError(f"T={self.T} must be a multiple of I={self.I}")

    @property
    def L(self) -> int:  # noqa: N802
        return self.N * self.T

    @property
    def N_f(self) -> int:  # noqa: N802
        return math.ceil(self.T / self.I)

    @property
    def N_p(self) -> int:  # noqa: N802
        return math.ceil(self.L / self.I)

    def frames_of(self, segment: int) -> range:
        return range(segment * self.N_f, segment * self.N_f + self.N_f)


@dataclass
class SelectionResult:
    """
    Attributes:
        segment_indices: 按抽取顺序的段下标 B
        frames: 所选段包含的帧，升序
        patch_indices: frames 中每一帧按抽取顺序的 j 个 patch 位置
        segment_soft: 段抽取背后的 k x I 软行
        patch_soft: 每帧 j x N 的软行
        s_st: k x d_h 所选段特征
        h_st: (len(frames) * j) x d_h 所选 patch 特征
    """
    segment_indices: List[int]
    segment_soft: np.ndarray
    s_st: Tensor
    frames: List[int] = field(default_factory=list)
    patch_indices: List[List[int]] = field(default_factory=list)
    patch_soft: List[np.ndarray] = field(default_factory=list)
    h_st: Optional[Tensor] = None


@dataclass
class SelectorParams(ParamGroup):
    """两个选择器的 query/key 投影（patch 选择器有自己的一套）"""
    seg_q: Tensor
    seg_k: Tensor
    patch_q: Tensor
    patch_k: Tensor

    @classmethod
    def init(cls, d: int, d_h: int, d_k: int, rng: np.random.Generator) -> "SelectorParams":
        return cls(init_linear(rng, d, d_k), init_linear(rng, d_h, d_k),
                   init_linear(rng, d, d_k), init_linear(rng, d_h, d_k))


# ---------------------------------------------------------------------------
# 池化

def pool_frames(h: Tensor, layout: SegmentLayout) -> Tensor:
    """L x d_h -> T x d_h，每帧 N 个 patch 取最大"""
    if h.data.ndim != 2 or h.shape[0] != layout.L:
        raise DimensionError(f"pool_frames: features {h.shape} do not match L={layout.L}")
    return tn.max_reduce(tn.reshape(h, (layout.T, layout.N, h.shape[1])), axis=1)


def pool_segments(f: Tensor, layout: SegmentLayout) -> Tensor:
    """T x d_h -> I x d_h，每段 N_f 帧取最大"""
    if f.data.ndim != 2 or f.shape[0] != layout.T:
        raise DimensionError(f"pool_segments: frames {f.shape} do not match T={layout.T}")
    return tn.max_reduce(tn.reshape(f, (layout.I, layout.N_f, f.shape[1])), axis=1)


def pool_question(w: Tensor) -> Tensor:
    """M x d -> d."""
    if w.data.ndim != 2 or w.shape[0] < 1:
        raise DimensionError(f"pool_question expects M x d with M >= 1, got {w.shape}")
    return tn.max_reduce(w, axis=0)


def frames_of_segments(segments: Sequence[int], layout: SegmentLayout) -> List[int]:
    """所列各段的全部帧，按时间顺序"""
    return sorted(t for b in segments for t in layout.frames_of(b))


# ---------------------------------------------------------------------------
# 选择

def selection_scores(q: Tensor, candidates: Tensor, w_q: Tensor, w_k: Tensor) -> Tensor:
    """1 x n 的 logit Q K^T / sqrt(d_k)；key 取自截断梯度的候选"""
    if q.data.ndim != 1 or q.shape[0] != w_q.shape[0]:
        raise DimensionError(f"selector query {q.shape} does not match projection {w_q.shape}")
    if candidates.data.ndim != 2 or candidates.shape[1] != w_k.shape[0]:
        raise DimensionError(f"selector candidates {candidates.shape} do not match projection {w_k.shape}")
    query = tn.matmul(tn.reshape(q, (1, q.shape[0])), w_q)
    keys = tn.matmul(tn.stop_gradient(candidates), w_k)
    return tn.scale(tn.matmul(query, tn.transpose(keys)), 1.0 / math.sqrt(w_q.shape[1]))


def gumbel_top_k(logits: Tensor, count: int, temperature: float,
                 rng: Optional[np.random.Generator]) -> Tuple[List[int], Tensor, np.ndarray]:
    """
    从 1 x n 的选择 logit 中抽取 count 个不同下标

    参数:
        logits: 1 x n 选择 logit，抽取基于其不截断的 log-softmax
        count: 抽取次数，不超过 n
        temperature: 代理软行的温度（> 0）
        rng: Gumbel 噪声源；None 为无噪声抽取（即 arg-top-k）

    返回:
        按抽取顺序的下标、count x n 的直通 one-hot 行，以及其背后 count x n 的软行
    """
    n = logits.shape[1]
    if count > n:
        raise ConfigError(f"cannot select {count} of {n} candidates")
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    log_p = tn.log_softmax_rows(logits)
    noise = rng.gumbel(size=(1, n)) if rng is not None else np.zeros((1, n))
    mask = np.zeros((1, n))
    indices: List[int] = []
    rows: List[Tensor] = []
    soft: List[np.ndarray] = []
    for _ in range(count):
        perturbed = log_p.data + noise + mask
        idx = int(np.argmax(perturbed[0]))
        surrogate = tn.softmax_rows(tn.scale(tn.add(log_p, noise + mask), 1.0 / temperature))
        rows.append(tn.straight_through(surrogate, one_hot([idx], n)))
        soft.append(surrogate.data[0])
        indices.append(idx)
        mask[0, idx] = MASKED
    return indices, tn.concat_rows(rows), np.stack(soft)


def select_segments(params: SelectorParams, q: Tensor, s: Tensor, k: int, temperature: float,
                    seed: Optional[int] = None) -> SelectionResult:
    """
    按池化后的问题 q 选出 top-k 段

    seed 为 None 时关闭 Gumbel 噪声（评估模式），否则抽取结果只取决于 seed
    """
    if k > s.shape[0]:
        raise ConfigError(f"k={k} exceeds the {s.shape[0]} segments")
    rng = np.random.default_rng([seed, 0]) if seed is not None else None
    logits = selection_scores(q, s, params.seg_q, params.seg_k)
    indices, weights, soft = gumbel_top_k(logits, k, temperature, rng)
    return SelectionResult(indices, soft, tn.matmul(weights, s))


def select_patches(params: SelectorParams, q: Tensor, h: Tensor, layout: SegmentLayout,
                   selection: SelectionResult, j: int, temperature: float,
                   seed: Optional[int] = None) -> SelectionResult:
    """所选段中每帧的 top-j patch，补全 selection 的 patch 部分"""
    if j > layout.N:
        raise ConfigError(f"j={j} exceeds the {layout.N} patches per frame")
    if h.data.ndim != 2 or h.shape[0] != layout.L:
        raise DimensionError(f"select_patches: features {h.shape} do not match L={layout.L}")
    frames = frames_of_segments(selection.segment_indices, layout)
    patch_indices: List[List[int]] = []
    patch_soft: List[np.ndarray] = []
    picked: List[Tensor] = []
    for frame in frames:
        rows = tn.gather_rows(h, range(frame * layout.N, frame * layout.N + layout.N))
        rng = np.random.default_rng([seed, 1, frame]) if seed is not None else None
        logits = selection_scores(q, rows, params.patch_q, params.patch_k)
        indices, weights, soft = gumbel_top_k(logits, j, temperature, rng)
        patch_indices.append(indices)
        patch_soft.append(soft)
        picked.append(tn.matmul(weights, rows))
    return replace(selection, frames=frames, patch_indices=patch_indices,
                   patch_soft=patch_soft, h_st=tn.concat_rows(picked))
