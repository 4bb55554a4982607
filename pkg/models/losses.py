# -*- coding: UTF-8 -*-
"""
答案交叉熵、C3 对齐目标与联合损失

C3 比较视觉自相似 G_vv = J_v J_v^T 与其在词基下的像 R_vv = G_vw G_ww G_vw^T：
两者逐行 softmax 后用对称 KL 散度比较
"""

from dataclasses import dataclass
from typing import Callable, Dict, Union

import numpy as np

from numerics import tensor as tn
from numerics.tensor import LOG_EPS, Tensor
from utils.errors import ConfigError, ContractError, DimensionError

AlignmentLoss = Callable[[Tensor, Tensor], Tensor]

_ALIGNMENT_LOSSES: Dict[str, AlignmentLoss] = {}


@dataclass(frozen=True)
class C3Matrices:
    g_vw: Tensor
    g_wv: Tensor
    g_vv: Tensor
    g_ww: Tensor


def m_kl(p: Tensor, q: Tensor, eps: float = LOG_EPS) -> Tensor:
    """
    两个行随机矩阵的对称 KL，按行平均

    KL(p||q) + KL(q||p) = sum (p - q)(log p - log q)，两个 log 都截断在 eps
    """
    if p.shape != q.shape or p.data.ndim != 2:
        raise DimensionError(f"m_kl: {p.shape} vs {q.shape}")
    diff = tn.mul(tn.sub(p, q), tn.sub(tn.log(p, eps), tn.log(q, eps)))
    return tn.scale(tn.sum(diff), 1.0 / p.shape[0])


def c3_matrices(j_v: Tensor, j_w: Tensor) -> C3Matrices:
    """patch 段 j_v 与词段 j_w 的原始 Gram 乘积"""
    if j_v.data.ndim != 2 or j_w.data.ndim != 2 or j_v.shape[0] == 0 or j_w.shape[0] == 0:
        raise ContractError(f"C3 needs non-empty spans, got {j_v.shape} and {j_w.shape}")
    if j_v.shape[1] != j_w.shape[1]:
        raise DimensionError(f"C3 spans differ in width: {j_v.shape} vs {j_w.shape}")
    v_t, w_t = tn.transpose(j_v), tn.transpose(j_w)
    return C3Matrices(g_vw=tn.matmul(j_v, w_t), g_wv=tn.matmul(j_w, v_t),
                      g_vv=tn.matmul(j_v, v_t), g_ww=tn.matmul(j_w, w_t))


def c3_loss(g_vv: Tensor, g_vw: Tensor, g_ww: Tensor) -> Tensor:
    r_vv = tn.matmul(tn.matmul(g_vw, g_ww), tn.transpose(g_vw))
    if r_vv.shape != g_vv.shape:
        raise DimensionError(f"c3_loss: R_vv {r_vv.shape} vs G_vv {g_vv.shape}")
    return m_kl(tn.softmax_rows(r_vv), tn.softmax_rows(g_vv))


def cross_entropy(logits: Tensor, groundtruth: int) -> Tensor:
    """一维 logit 向量的 -log softmax(logits)[groundtruth]"""
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy expects a 1-D logit vector, got {logits.shape}")
    if not 0 <= groundtruth < logits.shape[0]:
        raise ContractError(f"groundtruth {groundtruth} out of range for {logits.shape[0]} answers")
    picked = tn.mul(tn.log_softmax_rows(logits), tn.one_hot([groundtruth], logits.shape[0])[0])
    return tn.neg(tn.sum(picked))


def total_loss(logits: Tensor, groundtruth: int, c3: Union[Tensor, float], gamma: float) -> Tensor:
    """CE + gamma * 对齐项"""
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    ce = cross_entropy(logits, groundtruth)
    return tn.add(ce, tn.scale(c3 if isinstance(c3, Tensor) else tn.constant(c3), gamma))


# ---------------------------------------------------------------------------
# 对齐损失注册表

def register_alignment_loss(name: str) -> Callable[[AlignmentLoss], AlignmentLoss]:
    def decorator(fn: AlignmentLoss) -> AlignmentLoss:
        _ALIGNMENT_LOSSES[name] = fn
        return fn
    return decorator


def get_alignment_loss(name: str) -> AlignmentLoss:
    if name not in _ALIGNMENT_LOSSES:
        raise ConfigError(f"unknown alignment loss '{name}', expected one of {', '.join(sorted(_ALIGNMENT_LOSSES))}")
    return _ALIGNMENT_LOSSES[name]


def alignment_losses() -> tuple:
    return tuple(sorted(_ALIGNMENT_LOSSES))


@register_alignment_loss("c3")
def c3_alignment(j_v: Tensor, j_w: Tensor) -> Tensor:
    m = c3_matrices(j_v, j_w)
    return c3_loss(m.g_vv, m.g_vw, m.g_ww)


@register_alignment_loss("none")
def no_alignment(j_v: Tensor, j_w: Tensor) -> Tensor:
    return tn.constant(np.zeros(()))


@register_alignment_loss("c3-unit")
def unit_c3_alignment(j_v: Tensor, j_w: Tensor) -> Tensor:
    """
    单位化 C3：两段先逐行归一化，词 Gram 再除以 M^2

    R_vv 与 G_vv 的元素都落在 [-1, 1]，softmax 不会饱和；
    对两段的逐行正缩放与公共正交旋转不变
    """
    v, w = tn.l2_normalize_rows(j_v), tn.l2_normalize_rows(j_w)
    m = c3_matrices(v, w)
    return c3_loss(m.g_vv, m.g_vw, tn.scale(m.g_ww, 1.0 / w.shape[0] ** 2))
