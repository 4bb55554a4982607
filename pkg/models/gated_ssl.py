# -*- coding: UTF-8 -*-
"""
门控状态空间层与可互换的全局混合机制

    U = relu(X W_u),  V = relu(X W_v)
    O = SSM(U) W_o
    H = (O * V) W_h

每种机制都把 L x d 映射为 L x d_h，视觉阶段可以任意替换；ssl 是去掉 V 门控的同一层
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from models.dss import DssParams, kernel_tensor, ssm_forward_fft
from models.params import ParamGroup, init_linear
from numerics.alloc import AllocationTracker, release, track
from numerics import tensor as tn
from numerics.tensor import Tensor
from utils.errors import ConfigError, DimensionError

CONV_WINDOW: int = 9

MECHANISMS = ("gated-ssl", "ssl", "self-attention", "conv1d", "none")


def _linear(x: Tensor, w: Tensor, name: str) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"{name} expects input width {w.shape[0]}, got {x.shape}")
    return tn.matmul(x, w)


@dataclass
class GatedSslParams(ParamGroup):
    """
    w_u, w_v: d -> d_gating；w_o: d_gating -> d_gating；w_h: d_gating -> d_h
    SSM 在 d_gating 个通道上运行；w_v 为 None 即去掉门控
    """
    w_u: Tensor
    w_v: Optional[Tensor]
    w_o: Tensor
    w_h: Tensor
    log_neg_lambda: Tensor
    c: Tensor
    log_delta: Tensor
    strict: bool = True

    _FLAGS = ("strict",)

    def __post_init__(self) -> None:
        d, g = self.w_u.shape
        if self.w_v is not None and self.w_v.shape != (d, g):
            raise DimensionError(f"w_v {self.w_v.shape} must match w_u {self.w_u.shape}")
        if self.w_o.shape != (g, g):
            raise DimensionError(f"w_o {self.w_o.shape} must be {g}x{g}")
        if self.w_h.shape[0] != g:
            raise DimensionError(f"w_h {self.w_h.shape} must read {g} gating channels")
        if self.c.shape != (g, self.log_neg_lambda.data.size):
            raise DimensionError(f"c {self.c.shape} must be {g}x{self.log_neg_lambda.data.size}")
        if self.strict and not g < min(d, self.d_h, self.d_state):
            raise ConfigError(
                f"d_gating={g} must be smaller than d={d}, d_h={self.d_h} and d_S={self.d_state}")

    @property
    def gated(self) -> bool:
        return self.w_v is not None

    @property
    def d_gating(self) -> int:
        return self.w_u.shape[1]

    @property
    def d_h(self) -> int:
        return self.w_h.shape[1]

    @property
    def d_state(self) -> int:
        return self.log_neg_lambda.data.size

    @property
    def dss(self) -> DssParams:
        return DssParams(self.log_neg_lambda.data, self.c.data, float(self.log_delta.data.reshape(-1)[0]))

    @classmethod
    def init(cls, d: int, d_gating: int, d_h: int, d_state: int, rng: np.random.Generator,
             gated: bool = True) -> "GatedSslParams":
        w_u = init_linear(rng, d, d_gating)
        w_v = init_linear(rng, d, d_gating)
        w_o = init_linear(rng, d_gating, d_gating)
        w_h = init_linear(rng, d_gating, d_h)
        dss = DssParams.init(d_gating, d_state, rng)
        return cls(w_u, w_v if gated else None, w_o, w_h,
                   Tensor(dss.log_neg_lambda), Tensor(dss.c), Tensor([dss.log_delta]))


@dataclass
class AttentionMixParams(ParamGroup):
    """对全部 L 个 token 的单头自注意力（内部宽度 d_k），再接 W_h"""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_h: Tensor

    @classmethod
    def init(cls, d: int, d_k: int, d_h: int, rng: np.random.Generator) -> "AttentionMixParams":
        return cls(init_linear(rng, d, d_k), init_linear(rng, d, d_k),
                   init_linear(rng, d, d_k), init_linear(rng, d_k, d_h))


@dataclass
class ConvMixParams(ParamGroup):
    """逐通道因果卷积（d x window 个抽头），再接 W_h"""
    kernel: Tensor
    w_h: Tensor

    @classmethod
    def init(cls, d: int, d_h: int, rng: np.random.Generator, window: int = CONV_WINDOW) -> "ConvMixParams":
        return cls(Tensor(rng.normal(0.0, 1.0 / np.sqrt(window), size=(d, window))), init_linear(rng, d, d_h))


@dataclass
class ProjectionParams(ParamGroup):
    """无全局混合：线性 d -> d_h"""
    w_h: Tensor

    @classmethod
    def init(cls, d: int, d_h: int, rng: np.random.Generator) -> "ProjectionParams":
        return cls(init_linear(rng, d, d_h))


def gated_ssl_forward(params: GatedSslParams, x: Tensor) -> Tensor:
    """L x d -> L x d_h；SSM 为闭式核的直接因果卷积"""
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"gated SSL input must be L x d with L >= 1, got {x.shape}")
    u = tn.relu(_linear(x, params.w_u, "w_u"))
    kernel = kernel_tensor(params.log_neg_lambda, params.c, params.log_delta, x.shape[0])
    o = _linear(tn.causal_conv(u, kernel), params.w_o, "w_o")
    if params.gated:
        v = tn.relu(_linear(x, params.w_v, "w_v"))
        o = tn.mul(o, v)
    return _linear(o, params.w_h, "w_h")


def self_attention_mix(params: AttentionMixParams, x: Tensor) -> Tensor:
    q = _linear(x, params.w_q, "w_q")
    k = _linear(x, params.w_k, "w_k")
    v = _linear(x, params.w_v, "w_v")
    scores = tn.scale(tn.matmul(q, tn.transpose(k)), 1.0 / np.sqrt(q.shape[1]))
    return _linear(tn.matmul(tn.softmax_rows(scores), v), params.w_h, "w_h")


def conv1d_mix(params: ConvMixParams, x: Tensor) -> Tensor:
    return _linear(tn.causal_conv(x, params.kernel), params.w_h, "w_h")


def projection_mix(params: ProjectionParams, x: Tensor) -> Tensor:
    return _linear(x, params.w_h, "w_h")


_FORWARD: Dict[str, Callable] = {
    "gated-ssl": gated_ssl_forward,
    "ssl": gated_ssl_forward,
    "self-attention": self_attention_mix,
    "conv1d": conv1d_mix,
    "none": projection_mix,
}


def check_kind(kind: str) -> str:
    if kind not in _FORWARD:
        raise ConfigError(f"unknown mechanism '{kind}', expected one of {', '.join(MECHANISMS)}")
    return kind


def global_mechanism_forward(kind: str, params: ParamGroup, x: Tensor) -> Tensor:
    """按 kind 分派到对应机制，输出总是 L x d_h"""
    return _FORWARD[check_kind(kind)](params, x)


def init_mechanism(kind: str, d: int, d_h: int, d_gating: int, d_state: int,
                   rng: np.random.Generator) -> ParamGroup:
    check_kind(kind)
    if kind in ("gated-ssl", "ssl"):
        return GatedSslParams.init(d, d_gating, d_h, d_state, rng, gated=kind == "gated-ssl")
    if kind == "self-attention":
        return AttentionMixParams.init(d, d_gating, d_h, rng)
    if kind == "conv1d":
        return ConvMixParams.init(d, d_h, rng)
    return ProjectionParams.init(d, d_h, rng)


def bind_mechanism(kind: str, named: Dict[str, Tensor], prefix: str) -> ParamGroup:
    check_kind(kind)
    if kind in ("gated-ssl", "ssl"):
        return GatedSslParams.from_named(named, prefix)
    if kind == "self-attention":
        return AttentionMixParams.from_named(named, prefix)
    if kind == "conv1d":
        return ConvMixParams.from_named(named, prefix)
    return ProjectionParams.from_named(named, prefix)


# ---------------------------------------------------------------------------
# 带计数的推理（基准测试用）

def mechanism_inference(kind: str, params: ParamGroup, x: np.ndarray,
                        tracker: Optional[AllocationTracker] = None) -> np.ndarray:
    """只做前向的 numpy 计算并登记瞬时缓冲；门控 SSL 走 FFT 路径"""
    check_kind(kind)
    if kind in ("gated-ssl", "ssl"):
        return _gated_ssl_inference(params, x, tracker)
    if kind == "self-attention":
        return _attention_inference(params, x, tracker)
    if kind == "conv1d":
        return _conv_inference(params, x, tracker)
    return x @ params.w_h.data


def _gated_ssl_inference(params: GatedSslParams, x: np.ndarray,
                         tracker: Optional[AllocationTracker]) -> np.ndarray:
    u = track(tracker, np.maximum(x @ params.w_u.data, 0.0))
    v = track(tracker, np.maximum(x @ params.w_v.data, 0.0)) if params.gated else None
    s = track(tracker, ssm_forward_fft(params.dss, u, tracker))
    release(tracker, u)
    o = track(tracker, s @ params.w_o.data)
    release(tracker, s)
    if v is not None:
        gated = track(tracker, o * v)
        release(tracker, o, v)
        o = gated
    out = o @ params.w_h.data
    release(tracker, o)
    return out


def _attention_inference(params: AttentionMixParams, x: np.ndarray,
                         tracker: Optional[AllocationTracker]) -> np.ndarray:
    q = track(tracker, x @ params.w_q.data)
    k = track(tracker, x @ params.w_k.data)
    v = track(tracker, x @ params.w_v.data)
    scores = track(tracker, (q @ k.T) / np.sqrt(q.shape[1]))
    probs = track(tracker, np.exp(scores - np.max(scores, axis=1, keepdims=True)))
    release(tracker, scores, q, k)
    probs /= np.sum(probs, axis=1, keepdims=True)
    ctx = track(tracker, probs @ v)
    release(tracker, probs, v)
    out = ctx @ params.w_h.data
    release(tracker, ctx)
    return out


def _conv_inference(params: ConvMixParams, x: np.ndarray,
                    tracker: Optional[AllocationTracker]) -> np.ndarray:
    kernel = params.kernel.data
    length = x.shape[0]
    y = track(tracker, x * kernel[:, 0][None, :])
    for j in range(1, min(kernel.shape[1], length)):
        term = track(tracker, x[:length - j] * kernel[:, j][None, :])
        y[j:] += term
        release(tracker, term)
    out = y @ params.w_h.data
    release(tracker, y)
    return out
