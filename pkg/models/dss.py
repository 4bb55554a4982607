# -*- coding: UTF-8 -*-
"""
对角状态空间映射：闭式核、矩阵幂参照、逐步递推与 FFT 卷积

每个通道是一个标量输入的 SSM（B 为全 1 列），对角状态矩阵 diag(lambda) 与步长 delta
在通道间共享；通道 c 通过 c 的第 c 行读出状态
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from numerics.alloc import AllocationTracker, release, track
from numerics.fft import fft_convolve_causal
from numerics.tensor import Tensor, custom_op
from utils.errors import ConfigError, DimensionError

# |lambda * delta| 小于此值时 (e^x - 1) / x 用级数形式
SERIES_THRESHOLD: float = 1e-6
_DPHI_THRESHOLD: float = 1e-3

LOG_LAMBDA_RANGE: Tuple[float, float] = (float(np.log(0.5)), float(np.log(8.0)))
TARGET_STEP: float = 0.1


@dataclass
class DssParams:
    """
    Attributes:
        log_neg_lambda: d_S 个 u，lambda = -exp(u) < 0
        c: 通道数 x d_S 的输出混合
        log_delta: delta = exp(log_delta) > 0
    """
    log_neg_lambda: np.ndarray
    c: np.ndarray
    log_delta: float

    def __post_init__(self) -> None:
        self.log_neg_lambda = np.asarray(self.log_neg_lambda, dtype=np.float64).reshape(-1)
        self.c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
        self.log_delta = float(self.log_delta)
        if self.c.shape[1] != self.log_neg_lambda.size:
            raise DimensionError(f"DssParams: c {self.c.shape} does not match d_S={self.log_neg_lambda.size}")
        if self.channels < 1 or self.d_state < 1:
            raise ConfigError("DssParams needs channels >= 1 and d_S >= 1")

    @property
    def lam(self) -> np.ndarray:
        return -np.exp(self.log_neg_lambda)

    @property
    def delta(self) -> float:
        return float(np.exp(self.log_delta))

    @property
    def channels(self) -> int:
        return self.c.shape[0]

    @property
    def d_state(self) -> int:
        return self.log_neg_lambda.size

    @classmethod
    def init(cls, channels: int, d_state: int, rng: np.random.Generator) -> "DssParams":
        """lambda 在 [-8, -0.5] 上对数均匀分布；delta * max|lambda| = 0.1"""
        u = rng.uniform(LOG_LAMBDA_RANGE[0], LOG_LAMBDA_RANGE[1], size=d_state)
        c = rng.normal(0.0, 1.0 / np.sqrt(d_state), size=(channels, d_state))
        return cls(u, c, float(np.log(TARGET_STEP) - np.max(u)))

    @classmethod
    def from_lambda(cls, lam: np.ndarray, c: np.ndarray, delta: float) -> "DssParams":
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam >= 0) or delta <= 0:
            raise ConfigError("DssParams needs lambda < 0 and delta > 0")
        return cls(np.log(-lam), c, float(np.log(delta)))


@dataclass(frozen=True)
class DssKernel:
    values: np.ndarray  # 通道数 x L
    length: int


def _phi(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(e^a - 1) / a 及其导数，0 附近用级数"""
    small = np.abs(a) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, a)
    phi = np.where(small, 1.0 + a / 2.0 + a * a / 6.0, np.expm1(a) / safe)
    near = np.abs(a) < _DPHI_THRESHOLD
    safe_d = np.where(near, 1.0, a)
    dphi = np.where(near,
                    0.5 + a / 3.0 + a * a / 8.0 + a ** 3 / 30.0,
                    (safe_d * np.exp(a) - np.expm1(a)) / (safe_d * safe_d))
    return phi, dphi


def kernel_values(lam: np.ndarray, c: np.ndarray, delta: float, length: int,
                  tracker: Optional[AllocationTracker] = None) -> np.ndarray:
    """Gamma[c, j] = sum_i c[c, i] * E_i * exp(lambda_i * j * delta), E_i = (e^{lambda_i delta} - 1) / lambda_i"""
    if length < 1:
        raise ConfigError(f"kernel length must be >= 1, got {length}")
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    a = lam * delta
    phi, _ = _phi(a)
    e = delta * phi
    p = track(tracker, np.exp(a[:, None] * np.arange(length)[None, :]))
    values = (np.asarray(c) * e[None, :]) @ p
    release(tracker, p)
    return values


def compute_kernel(params: DssParams, length: int) -> DssKernel:
    return DssKernel(kernel_values(params.lam, params.c, params.delta, length), length)


def kernel_oracle_powers(params: DssParams, length: int) -> DssKernel:
    """按字面的稠密矩阵幂计算 C * Abar^j * Bbar（仅用于测试规模）"""
    d_state = params.d_state
    a = np.diag(params.lam)
    a_bar = np.diag(np.exp(params.lam * params.delta))
    b_bar = (a_bar - np.eye(d_state)) @ np.linalg.inv(a) @ np.ones((d_state, 1))
    taps = np.zeros((params.channels, length))
    power = np.eye(d_state)
    for j in range(length):
        taps[:, j] = (params.c @ power @ b_bar)[:, 0]
        power = power @ a_bar
    return DssKernel(taps, length)


def _check_signal(params: DssParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.channels:
        raise DimensionError(f"SSM input {x.shape} does not match {params.channels} channels")
    return x


def ssm_recurrence(params: DssParams, x: np.ndarray) -> np.ndarray:
    """g_t = Abar * g_{t-1} + Bbar * x_t, o_t = C g_t, g_{-1} = 0"""
    x = _check_signal(params, x)
    a_bar = np.exp(params.lam * params.delta)
    b_bar = params.delta * _phi(params.lam * params.delta)[0]
    state = np.zeros((params.channels, params.d_state))
    out = np.zeros_like(x)
    for t in range(x.shape[0]):
        state = state * a_bar[None, :] + x[t][:, None] * b_bar[None, :]
        out[t] = np.sum(state * params.c, axis=1)
    return out


def ssm_forward_fft(params: DssParams, x: np.ndarray,
                    tracker: Optional[AllocationTracker] = None) -> np.ndarray:
    x = _check_signal(params, x)
    kernel = track(tracker, kernel_values(params.lam, params.c, params.delta, x.shape[0], tracker))
    out = fft_convolve_causal(x.T, kernel, tracker).T
    release(tracker, kernel)
    return out


def kernel_tensor(log_neg_lambda: Tensor, c: Tensor, log_delta: Tensor, length: int) -> Tensor:
    """训练用的可微闭式核（通道数 x 长度）"""
    u = log_neg_lambda.data.reshape(-1)
    cd = c.data
    delta = float(np.exp(log_delta.data.reshape(-1)[0]))
    a = -np.exp(u) * delta
    phi, dphi = _phi(a)
    e = delta * phi
    lags = np.arange(length)
    p = np.exp(a[:, None] * lags[None, :])
    value = (cd * e[None, :]) @ p
    ld_shape = log_delta.shape
    u_shape = log_neg_lambda.shape

    def vjp(g: np.ndarray):
        gc = (g @ p.T) * e[None, :]
        z = cd.T @ g
        d_ep = delta * (dphi[:, None] + lags[None, :] * phi[:, None]) * p
        s_a = np.sum(z * d_ep, axis=1)
        gu = s_a * a
        gld = np.sum(z * e[:, None] * p) + np.sum(s_a * a)
        return gu.reshape(u_shape), gc, np.full(ld_shape, gld)

    return custom_op("dss_kernel", (log_neg_lambda, c, log_delta), value, vjp)
