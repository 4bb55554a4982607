# -*- coding: UTF-8 -*-
"""
基 2 FFT 与因果卷积

迭代的按时间抽取 Cooley-Tukey，实部与虚部分别存放为 float64 平面；前导维度视为批，
一次调用变换全部通道。FFT 路径只做前向，训练时经 numerics.tensor.causal_conv 求导
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from numerics.alloc import AllocationTracker, release, track
from utils.errors import DimensionError


@dataclass(frozen=True)
class ComplexBuffer:
    """复数样本：两个同形状的实数平面"""
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self) -> None:
        if self.re.shape != self.im.shape:
            raise DimensionError(f"ComplexBuffer planes differ: {self.re.shape} vs {self.im.shape}")

    @classmethod
    def from_real(cls, re: np.ndarray) -> "ComplexBuffer":
        re = np.asarray(re, dtype=np.float64)
        return cls(re, np.zeros_like(re))

    @property
    def length(self) -> int:
        return self.re.shape[-1]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(buf: ComplexBuffer, inverse: bool = False) -> ComplexBuffer:
    """沿最后一维变换；逆变换包含 1/n 因子"""
    n = buf.length
    if not is_power_of_two(n):
        raise DimensionError(f"fft length {n} is not a power of two")
    lead = buf.re.shape[:-1]
    rev = _bit_reverse(n)
    re = buf.re[..., rev]
    im = buf.im[..., rev]
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        angle = sign * 2.0 * np.pi * np.arange(half) / m
        wr, wi = np.cos(angle), np.sin(angle)
        re = re.reshape(lead + (n // m, m))
        im = im.reshape(lead + (n // m, m))
        ar, ai = re[..., :half], im[..., :half]
        br, bi = re[..., half:], im[..., half:]
        tr = br * wr - bi * wi
        ti = br * wi + bi * wr
        re = np.concatenate([ar + tr, ar - tr], axis=-1).reshape(lead + (n,))
        im = np.concatenate([ai + ti, ai - ti], axis=-1).reshape(lead + (n,))
        m *= 2
    if inverse:
        re = re / n
        im = im / n
    return ComplexBuffer(re, im)


def ifft(buf: ComplexBuffer) -> ComplexBuffer:
    return fft(buf, inverse=True)


def fft_convolve_causal(signal: np.ndarray, kernel: np.ndarray,
                        tracker: Optional[AllocationTracker] = None) -> np.ndarray:
    """
    o[..., t] = sum_{j=0..t} kernel[..., j] * signal[..., t - j]

    两个操作数补零到不小于 2L 的 2 的幂，在频域逐点相乘后截回 L
    """
    signal = np.asarray(signal, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if signal.shape != kernel.shape:
        raise DimensionError(f"fft_convolve_causal: signal {signal.shape} vs kernel {kernel.shape}")
    length = signal.shape[-1]
    if length < 1:
        raise DimensionError("fft_convolve_causal needs length >= 1")
    n = next_power_of_two(2 * length)
    pad = [(0, 0)] * (signal.ndim - 1) + [(0, n - length)]
    padded_x = track(tracker, np.pad(signal, pad))
    padded_k = track(tracker, np.pad(kernel, pad))
    xs = fft(ComplexBuffer.from_real(padded_x))
    ks = fft(ComplexBuffer.from_real(padded_k))
    for plane in (xs.re, xs.im, ks.re, ks.im):
        track(tracker, plane)
    release(tracker, padded_x, padded_k)
    prod = ComplexBuffer(track(tracker, xs.re * ks.re - xs.im * ks.im),
                         track(tracker, xs.re * ks.im + xs.im * ks.re))
    release(tracker, xs.re, xs.im, ks.re, ks.im)
    out = ifft(prod)
    track(tracker, out.re)
    track(tracker, out.im)
    release(tracker, prod.re, prod.im)
    result = out.re[..., :length].copy()
    release(tracker, out.re, out.im)
    return result


def direct_convolve_causal(signal: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """fft_convolve_causal 的 O(L^2) 参照实现"""
    signal = np.asarray(signal, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if signal.shape != kernel.shape:
        raise DimensionError(f"direct_convolve_causal: signal {signal.shape} vs kernel {kernel.shape}")
    length = signal.shape[-1]
    out = np.zeros_like(signal)
    for t in range(length):
        out[..., t] = np.sum(kernel[..., :t + 1] * signal[..., t::-1], axis=-1)
    return out
