# -*- coding: UTF-8 -*-
# 数值校验服务：所有 oracle 套件

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from config import GsmtConfig
from models.dss import DssKernel, DssParams, compute_kernel, kernel_oracle_powers, kernel_tensor, \
    ssm_forward_fft, ssm_recurrence
from models.gated_ssl import GatedSslParams, gated_ssl_forward
from models.gsmt import AnswerSet, GsmtModel, Sample, selector_parameter_names
from models.losses import c3_alignment, m_kl
from models.selection import SelectorParams, select_patches, select_segments, SegmentLayout
from numerics import tensor as tn
from numerics.fft import ComplexBuffer, direct_convolve_causal, fft, fft_convolve_causal, ifft
from numerics.gradcheck import analytic_gradients, gradient_pairs, max_relative_error
from numerics.tensor import Tensor
from utils.errors import VerificationError
from utils.logger import logger

KernelFn = Callable[[DssParams, int], DssKernel]

# 容差
KERNEL_TOL: float = 1e-10
FFT_TOL: float = 1e-10
SSM_TOL: float = 1e-8
GRAD_TOL: float = 1e-5
C3_TOL: float = 1e-12
ROTATION_TOL: float = 1e-9

# 有限差分相对误差分母的下限：判定用 GRAD_FLOOR，STRICT_FLOOR 下的误差只报告
GRAD_FLOOR: float = 1e-4
STRICT_FLOOR: float = 1e-12

# 端到端梯度检查的最小配置
MINIMAL_CONFIG = GsmtConfig(T=4, N=4, I=2, d=8, d_S=8, d_h=8, d_gating=2, k=1, j=2, N_L=2)


def normwise_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """max|a - b| / max|b|"""
    scale = float(np.max(np.abs(expected))) if np.size(expected) else 0.0
    diff = float(np.max(np.abs(np.asarray(actual) - np.asarray(expected)))) if np.size(expected) else 0.0
    return diff / scale if scale > 0 else diff


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error)) and self.max_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return (f"{self.name:<12} max_err={self.max_error:.3e} tol={self.tolerance:.1e} "
                f"{status} {self.seconds:.1f}s{extra}")


class Verifier:
    """
    校验器

    每个套件返回一条 SuiteResult；kernel_fn 可替换为任意核函数用于故障注入
    """

    def __init__(self, kernel_fn: KernelFn = compute_kernel, seeds: int = 100, grad_seeds: int = 10) -> None:
        self.kernel_fn = kernel_fn
        self.seeds = seeds
        self.grad_seeds = grad_seeds

    def suites(self) -> Dict[str, Callable[[], SuiteResult]]:
        return {
            "kernel": self.check_kernel,
            "fft": self.check_fft,
            "ssm": self.check_ssm_paths,
            "gradients": self.check_op_gradients,
            "end-to-end": self.check_end_to_end,
            "c3": self.check_c3,
            "c3-rotation": self.check_c3_rotation,
            "selector": self.check_selector,
        }

    def run_all(self, names: Optional[List[str]] = None) -> List[SuiteResult]:
        results = []
        for name, suite in self.suites().items():
            if names and name not in names:
                continue
            start = time.perf_counter()
            result = suite()
            result.seconds = time.perf_counter() - start
            logger.info(f"校验套件 {result.line()}")
            results.append(result)
        return results

    def verify(self, names: Optional[List[str]] = None) -> List[SuiteResult]:
        """
        运行套件，任一失败则抛出 VerificationError

        Raises:
            VerificationError: 失败的套件名列表
        """
        results = self.run_all(names)
        failed = [r.name for r in results if not r.passed]
        if failed:
            raise VerificationError(f"failed suites: {', '.join(failed)}")
        return results

    # -----------------------------------------------------------------------

    def check_kernel(self) -> SuiteResult:
        """闭式核对照矩阵幂"""
        worst = 0.0
        for seed in range(self.seeds):
            for d_state in (1, 8, 64):
                for length in (4, 32, 256):
                    rng = np.random.default_rng([seed, d_state, length])
                    params = DssParams.init(3, d_state, rng)
                    got = self.kernel_fn(params, length).values
                    want = kernel_oracle_powers(params, length).values
                    worst = max(worst, normwise_error(got, want))
        return SuiteResult("kernel", worst, KERNEL_TOL)

    def check_fft(self) -> SuiteResult:
        """FFT 往返以及 FFT 卷积对照直接求和"""
        rng = np.random.default_rng(11)
        worst = 0.0
        for power in range(0, 13):
            x = rng.normal(size=(2, 1 << power))
            back = ifft(fft(ComplexBuffer.from_real(x)))
            worst = max(worst, float(np.max(np.abs(back.re - x))), float(np.max(np.abs(back.im))))
        for _ in range(self.seeds):
            length = int(rng.integers(1, 513))
            signal, kernel = rng.normal(size=length), rng.normal(size=length)
            worst = max(worst, normwise_error(fft_convolve_causal(signal, kernel),
                                              direct_convolve_causal(signal, kernel)))
        return SuiteResult("fft", worst, FFT_TOL)

    def check_ssm_paths(self) -> SuiteResult:
        """FFT 卷积对照递推，外加冲激响应"""
        worst = 0.0
        lengths = (64, 512, 4096)
        for seed in range(20):
            rng = np.random.default_rng([seed, 5])
            params = DssParams.init(4, 16, rng)
            length = lengths[seed % len(lengths)]
            x = rng.normal(size=(length, 4))
            worst = max(worst, normwise_error(ssm_forward_fft(params, x), ssm_recurrence(params, x)))
        impulse = np.zeros((32, 4))
        impulse[0] = 1.0
        kernel = compute_kernel(params, 32).values.T
        worst = max(worst, normwise_error(ssm_recurrence(params, impulse), kernel))
        return SuiteResult("ssm", worst, SSM_TOL)

    def check_op_gradients(self) -> SuiteResult:
        """逐个可微算子与模块做有限差分"""
        rng = np.random.default_rng(3)
        loose: Dict[str, float] = {}
        strict: Dict[str, float] = {}
        for name, (f, params) in _op_gradient_cases(rng).items():
            pairs = gradient_pairs(f, params)
            loose[name] = max_relative_error(pairs, GRAD_FLOOR)
            strict[name] = max_relative_error(pairs, STRICT_FLOOR)
        worst_name = max(loose, key=loose.get)
        strict_name = max(strict, key=strict.get)
        return SuiteResult("gradients", loose[worst_name], GRAD_TOL,
                           detail=f"worst {worst_name}; {_floor_detail(strict[strict_name], strict_name)}")

    def check_end_to_end(self) -> SuiteResult:
        """最小配置上的总损失；选择器权重的梯度是直通替代，不参与比较"""
        worst = 0.0
        strict_worst, strict_name = 0.0, ""
        for seed in range(self.grad_seeds):
            model = GsmtModel.init(MINIMAL_CONFIG, seed)
            sample = random_sample(MINIMAL_CONFIG, np.random.default_rng([seed, 9]))
            pairs = gradient_pairs(model.objective(sample, seed), model.params,
                                   skip=selector_parameter_names(model.params))
            worst = max(worst, max_relative_error(pairs, GRAD_FLOOR))
            report: Dict[str, float] = {}
            err = max_relative_error(pairs, STRICT_FLOOR, report)
            if not strict_name or err > strict_worst:
                strict_worst, strict_name = err, f"{max(report, key=report.get)} seed {seed}"
        return SuiteResult("end-to-end", worst, GRAD_TOL, detail=_floor_detail(strict_worst, strict_name))

    def check_c3(self) -> SuiteResult:
        """m-KL 非负、相等时为零、对称，并对照标量循环"""
        worst = 0.0
        negative = 0
        for seed in range(self.seeds):
            rng = np.random.default_rng([seed, 4])
            p = tn.softmax_rows(Tensor(rng.normal(size=(8, 8))))
            q = tn.softmax_rows(Tensor(rng.normal(size=(8, 8))))
            forward = m_kl(p, q).item()
            negative += int(forward < 0)
            worst = max(worst, abs(forward - m_kl(q, p).item()), abs(m_kl(p, p).item()))
            worst = max(worst, abs(forward - scalar_loop_m_kl(p.data, q.data)) / max(abs(forward), 1.0))
        if negative:
            worst = float("inf")
        return SuiteResult("c3", worst, C3_TOL, detail=f"{negative} negative")

    def check_c3_rotation(self) -> SuiteResult:
        """两个区段同乘一个正交矩阵时 C3 不变"""
        worst = 0.0
        for seed in range(self.seeds):
            rng = np.random.default_rng([seed, 8])
            j_v = rng.normal(scale=0.25, size=(8, 8))
            j_w = rng.normal(scale=0.25, size=(8, 8))
            rot, _ = np.linalg.qr(rng.normal(size=(8, 8)))
            base = c3_alignment(Tensor(j_v), Tensor(j_w)).item()
            turned = c3_alignment(Tensor(j_v @ rot), Tensor(j_w @ rot)).item()
            worst = max(worst, abs(base - turned))
        return SuiteResult("c3-rotation", worst, ROTATION_TOL)

    def check_selector(self) -> SuiteResult:
        """选择数量准确、无噪声时确定，且直通梯度可以回传"""
        failures = 0
        layout = SegmentLayout(T=8, N=6, I=4)
        for seed in range(20):
            rng = np.random.default_rng([seed, 6])
            d, d_h, k, j = 6, 5, 2, 3
            selector = SelectorParams.init(d, d_h, d, rng)
            q = Tensor(rng.normal(size=d))
            h = Tensor(rng.normal(size=(layout.L, d_h)))
            segments = Tensor(rng.normal(size=(layout.I, d_h)))

            noisy = select_patches(selector, q, h, layout,
                                   select_segments(selector, q, segments, k, 1.0, seed), j, 1.0, seed)
            counts_ok = (len(set(noisy.segment_indices)) == k
                         and len(noisy.frames) == k * layout.N_f
                         and all(len(set(p)) == j for p in noisy.patch_indices)
                         and noisy.h_st.shape == (k * layout.N_f * j, d_h))

            first = select_segments(selector, q, segments, k, 1.0, None)
            second = select_segments(selector, q, segments, k, 1.0, None)
            deterministic = first.segment_indices == second.segment_indices

            weights = rng.normal(size=(k, d_h))
            named = selector.arrays("")

            def objective(bound: Dict[str, Tensor]) -> Tensor:
                group = SelectorParams.from_named(bound, "")
                chosen = select_segments(group, q, segments, k, 1.0, seed).s_st
                return tn.sum(tn.mul(chosen, weights))

            grads = analytic_gradients(objective, named)
            flows = max(float(np.max(np.abs(grads[n]))) for n in ("seg_q", "seg_k")) > 1e-12
            if not (counts_ok and deterministic and flows):
                failures += 1
                logger.warning(f"selector 实例 {seed} 未通过: counts={counts_ok}, "
                               f"deterministic={deterministic}, flows={flows}")
        return SuiteResult("selector", float(failures), 0.0, detail=f"{20 - failures}/20 instances")


def scalar_loop_m_kl(p: np.ndarray, q: np.ndarray, eps: float = tn.LOG_EPS) -> float:
    """独立实现的 m-KL：对行列显式循环"""
    total = 0.0
    for r in range(p.shape[0]):
        row = 0.0
        for c in range(p.shape[1]):
            a, b = max(p[r, c], eps), max(q[r, c], eps)
            row += p[r, c] * (np.log(a) - np.log(b)) + q[r, c] * (np.log(b) - np.log(a))
        total += row
    return total / p.shape[0]


def random_sample(config: GsmtConfig, rng: np.random.Generator, answers: int = 3, words: int = 3) -> Sample:
    """按 config 形状生成的带标签随机样本"""
    layout = config.layout
    return Sample(rng.normal(size=(layout.T, layout.N, config.d)),
                  rng.normal(size=(words, config.d)),
                  AnswerSet(rng.normal(size=(answers, config.answer_width)), int(rng.integers(0, answers))))


def _op_gradient_cases(rng: np.random.Generator) -> Dict[str, tuple]:
    """每个算子的 (f, params)；f 用固定随机权重把算子输出收缩为标量"""

    def weighted(shape):
        w = rng.normal(size=shape)
        return lambda out: tn.sum(tn.mul(out, w))

    cases: Dict[str, tuple] = {}
    w23 = weighted((2, 3))
    cases["matmul"] = (lambda p: w23(tn.matmul(p["a"], p["b"])),
                       {"a": rng.normal(size=(2, 4)), "b": rng.normal(size=(4, 3))})
    w34 = weighted((3, 4))
    cases["elementwise"] = (
        lambda p: w34(tn.add(tn.mul(tn.exp(p["x"]), p["y"]), tn.relu(tn.div(p["x"], p["z"])))),
        {"x": rng.normal(size=(3, 4)), "y": rng.normal(size=(1, 4)), "z": rng.uniform(1.0, 2.0, size=(3, 1))})
    cases["log"] = (lambda p: w34(tn.log(p["x"])), {"x": rng.uniform(0.5, 2.0, size=(3, 4))})
    cases["softmax"] = (lambda p: w34(tn.softmax_rows(p["x"])), {"x": rng.normal(size=(3, 4))})
    cases["log_softmax"] = (lambda p: w34(tn.log_softmax_rows(p["x"])), {"x": rng.normal(size=(3, 4))})
    cases["l2_normalize"] = (lambda p: w34(tn.l2_normalize_rows(p["x"])), {"x": rng.normal(size=(3, 4))})
    w4 = weighted((4,))
    cases["max_mean"] = (lambda p: tn.add(w4(tn.max_reduce(p["x"], axis=0)), tn.mean(p["x"])),
                         {"x": rng.normal(size=(3, 4))})
    w52 = weighted((5, 2))
    cases["gather_concat"] = (
        lambda p: w52(tn.concat_rows([tn.gather_rows(p["x"], [2, 0, 2]), tn.transpose(p["y"])])),
        {"x": rng.normal(size=(3, 2)), "y": rng.normal(size=(2, 2))})
    w63 = weighted((6, 3))
    cases["causal_conv"] = (lambda p: w63(tn.causal_conv(p["x"], p["k"])),
                            {"x": rng.normal(size=(6, 3)), "k": rng.normal(size=(3, 6))})

    lengths = 12
    wk = weighted((3, lengths))
    dss = DssParams.init(3, 5, rng)
    cases["dss_kernel"] = (
        lambda p: wk(kernel_tensor(p["u"], p["c"], p["ld"], lengths)),
        {"u": dss.log_neg_lambda, "c": dss.c, "ld": np.array([dss.log_delta])})

    gated = GatedSslParams.init(8, 2, 8, 4, rng)
    x = Tensor(rng.normal(size=(6, 8)))
    cases["gated_ssl"] = (lambda p: tn.sum(gated_ssl_forward(GatedSslParams.from_named(p, ""), x)),
                          gated.arrays(""))

    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4))
    cases["m_kl"] = (lambda p: m_kl(tn.softmax_rows(p["a"]), tn.softmax_rows(p["b"])), {"a": a, "b": b})
    cases["c3"] = (lambda p: c3_alignment(p["v"], p["w"]),
                   {"v": rng.normal(scale=0.5, size=(4, 6)), "w": rng.normal(scale=0.5, size=(3, 6))})
    return cases


def _floor_detail(error: float, where: str) -> str:
    text = f"floor={GRAD_FLOOR:.0e}; at floor={STRICT_FLOOR:.0e} max_err={error:.3e}"
    return f"{text} at {where}" if where else text
