# -*- coding: UTF-8 -*-
"""有限差分梯度检查：中心差分对照 tape 反向梯度"""

from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from numerics.tensor import Tape, Tensor, backward, constant

ScalarFn = Callable[[Dict[str, Tensor]], Tensor]
GradientPairs = Dict[str, Tuple[np.ndarray, np.ndarray]]


def relative_error(analytic: float, numeric: float, floor: float = 1e-12) -> float:
    """|a - n| / max(|a|, |n|, floor)"""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def analytic_gradients(f: ScalarFn, params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    tape = Tape()
    watched = {name: tape.watch(value, name) for name, value in params.items()}
    grads = backward(tape, f(watched))
    return {name: grads.of(t) for name, t in watched.items()}


def gradient_pairs(f: ScalarFn, params: Mapping[str, np.ndarray], h: float = 1e-5,
                   skip: Iterable[str] = ()) -> GradientPairs:
    """
    逐参数的 (tape 梯度, 中心差分)，均展平为一维

    参数:
        f: 把具名张量映射为标量；须同时接受被观察的和常量输入
        params: 求值点（不会被修改）
        h: 差分步长
        skip: 不参与比较的参数名
    """
    skipped = set(skip)
    base = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
    grads = analytic_gradients(f, base)

    def evaluate(point: Dict[str, np.ndarray]) -> float:
        return f({name: constant(value) for name, value in point.items()}).item()

    pairs: GradientPairs = {}
    for name, value in base.items():
        if name in skipped:
            continue
        flat = value.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(base)
            flat[i] = orig - h
            down = evaluate(base)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        pairs[name] = (np.asarray(grads[name], dtype=np.float64).reshape(-1), numeric)
    return pairs


def max_relative_error(pairs: GradientPairs, floor: float = 1e-12,
                       report: Optional[Dict[str, float]] = None) -> float:
    """
    逐坐标相对误差的最大值，分母下限为 floor

    参数:
        report: 若给出，写入每个参数名的最大误差
    """
    worst = 0.0
    for name, (analytic, numeric) in pairs.items():
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        err = float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    return worst


def finite_diff_check(f: ScalarFn, params: Mapping[str, np.ndarray], h: float = 1e-5,
                      floor: float = 1e-12, skip: Iterable[str] = (),
                      report: Optional[Dict[str, float]] = None) -> float:
    """
    tape 梯度与中心差分的最大相对误差

    返回:
        float: 所有参与比较的坐标上的最大相对误差
    """
    return max_relative_error(gradient_pairs(f, params, h, skip), floor, report)
