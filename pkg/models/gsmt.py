# -*- coding: UTF-8 -*-
"""
端到端 GSMT：视觉混合、选择、token 融合、多模态注意力、层池化、答案打分与联合损失

权重以扁平的 {name: ndarray} 字典存放在 GsmtModel.params；每次前向先把它绑定为张量，
训练时登记到新的 tape，预测时为普通常量
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import GsmtConfig
from models.gated_ssl import (GatedSslParams, bind_mechanism, gated_ssl_forward,
                              global_mechanism_forward, init_mechanism)
from models.losses import get_alignment_loss, total_loss
from models.params import ParamGroup, init_linear
from models.selection import (SelectionResult, SelectorParams, pool_frames, pool_question,
                              pool_segments, select_patches, select_segments)
from numerics import tensor as tn
from numerics.tensor import Tape, Tensor, backward
from utils.errors import ContractError, DimensionError, NonFiniteError
from utils.logger import logger

SPANS = ("segments", "patches", "words")
SELECTOR_PREFIX = "selector."


@dataclass(frozen=True)
class AnswerSet:
    """候选答案嵌入（|A| x d_a）以及正确答案下标（已知时）"""
    candidates: np.ndarray
    groundtruth: Optional[int] = None

    def __post_init__(self) -> None:
        candidates = np.asarray(self.candidates, dtype=np.float64)
        if candidates.ndim != 2 or candidates.shape[0] < 2:
            raise ContractError(f"an answer set needs >= 2 candidate rows, got shape {candidates.shape}")
        if self.groundtruth is not None and not 0 <= self.groundtruth < candidates.shape[0]:
            raise ContractError(f"groundtruth {self.groundtruth} out of range for {candidates.shape[0]} answers")
        object.__setattr__(self, "candidates", candidates)

    def __len__(self) -> int:
        return self.candidates.shape[0]


@dataclass
class Sample:
    """
    Attributes:
        features: patch 特征，T x N x d（或已展平的 L x d）
        question: M x d 词特征
        answers: 候选答案与正确下标
    """
    features: np.ndarray
    question: np.ndarray
    answers: AnswerSet

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 3:
            features = features.reshape(-1, features.shape[2])
        if features.ndim != 2:
            raise DimensionError(f"features must be T x N x d or L x d, got {features.shape}")
        question = np.asarray(self.question, dtype=np.float64)
        if question.ndim != 2 or question.shape[0] < 1:
            raise DimensionError(f"question must be M x d with M >= 1, got {question.shape}")
        self.features = features
        self.question = question

    @property
    def label(self) -> Optional[int]:
        return self.answers.groundtruth


@dataclass
class FusedTokens:
    """
    Attributes:
        tokens: 融合后的输入序列 J
        boundaries: 三个区段的偏移 (0, |S|, |S| + |H|, |S| + |H| + M)
        layers: 各层输出 J^(1) .. J^(N_L)，由 multimodal_attention 填入
    """
    tokens: Tensor
    boundaries: Tuple[int, int, int, int]
    layers: List[Tensor] = field(default_factory=list)

    def span(self, name: str, source: Optional[Tensor] = None) -> Tensor:
        """从 source（默认为融合输入）中取出区段 name 的行"""
        if name not in SPANS:
            raise ContractError(f"unknown span '{name}', expected one of {', '.join(SPANS)}")
        i = SPANS.index(name)
        start, stop = self.boundaries[i], self.boundaries[i + 1]
        return tn.gather_rows(self.tokens if source is None else source, range(start, stop))

    @property
    def count(self) -> int:
        return self.boundaries[-1]


@dataclass
class AttentionLayerParams(ParamGroup):
    """融合 token 上的单头残差自注意力"""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttentionLayerParams":
        return cls(init_linear(rng, d, d), init_linear(rng, d, d), init_linear(rng, d, d))


@dataclass
class ForwardResult:
    cosines: Tensor
    logits: Tensor
    prediction: int
    selection: SelectionResult
    fused: FusedTokens
    alignment: Tensor
    loss: Optional[Tensor] = None


@dataclass
class StepResult:
    """更新前的批次均值与更新后的参数"""
    loss: float
    ce: float
    c3: float
    params: Dict[str, np.ndarray]
    grad_norm: float = 0.0


# ---------------------------------------------------------------------------
# 融合、注意力、池化与打分

def fuse_tokens(s_st: Tensor, h_st: Tensor, q_words: Tensor,
                w_s: Tensor, w_p: Tensor, w_w: Tensor) -> FusedTokens:
    """J = [S_st W_s | H_st W_p | words W_w]，各自投影到公共宽度"""
    parts = []
    for name, x, w in (("segments", s_st, w_s), ("patches", h_st, w_p), ("words", q_words, w_w)):
        if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
            raise DimensionError(f"fuse_tokens: {name} {x.shape} do not match projection {w.shape}")
        parts.append(tn.matmul(x, w))
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise DimensionError(f"fuse_tokens: projected widths differ {sorted(widths)}")
    a, b, c = (p.shape[0] for p in parts)
    return FusedTokens(tn.concat_rows(parts), (0, a, a + b, a + b + c))


def attention_layer(params: AttentionLayerParams, x: Tensor) -> Tensor:
    """J + softmax(Q K^T / sqrt(d)) V"""
    q, k, v = tn.matmul(x, params.w_q), tn.matmul(x, params.w_k), tn.matmul(x, params.w_v)
    scores = tn.scale(tn.matmul(q, tn.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    return tn.add(x, tn.matmul(tn.softmax_rows(scores), v))


def ssl_layer(params: GatedSslParams, x: Tensor) -> Tensor:
    """融合 token 序列上的残差门控 SSL（d -> d）"""
    return tn.add(x, gated_ssl_forward(params, x))


def multimodal_attention(fused: FusedTokens, layers: Sequence[ParamGroup]) -> FusedTokens:
    """依次运行每一层并保留各层输出"""
    if not layers:
        raise ContractError("multimodal_attention needs N_L >= 1 layers")
    outputs: List[Tensor] = []
    current = fused.tokens
    for params in layers:
        current = ssl_layer(params, current) if isinstance(params, GatedSslParams) else attention_layer(params, current)
        outputs.append(current)
    return FusedTokens(fused.tokens, fused.boundaries, outputs)


def pool_layers(layer_outputs: Sequence[Tensor]) -> Tensor:
    """先跨层取最大，再跨 token 取最大"""
    if not layer_outputs:
        raise ContractError("pool_layers needs at least one layer output")
    return tn.max_reduce(tn.max_reduce(tn.stack(layer_outputs), axis=0), axis=0)


def score_answers(j_o: Tensor, candidates: Tensor) -> Tuple[Tensor, int]:
    """
    j_o 与每个候选行的余弦相似度

    返回:
        (scores, 最佳候选下标)；并列取最小下标，零范数向量得分为 0
    """
    if j_o.data.ndim != 1 or candidates.data.ndim != 2 or candidates.shape[1] != j_o.shape[0]:
        raise DimensionError(f"score_answers: J_o {j_o.shape} vs candidates {candidates.shape}")
    query = tn.l2_normalize_rows(tn.reshape(j_o, (1, j_o.shape[0])))
    keys = tn.l2_normalize_rows(candidates)
    scores = tn.reshape(tn.matmul(query, tn.transpose(keys)), (candidates.shape[0],))
    return scores, int(np.argmax(scores.data))


def answer_adapter(d_answer: int, d: int, seed: int) -> np.ndarray:
    """答案宽度到 d 的固定映射：宽度相同为恒等，否则为带种子的随机投影"""
    if d_answer == d:
        return np.eye(d)
    return np.random.default_rng([seed, 3]).normal(0.0, 1.0 / np.sqrt(d_answer), size=(d_answer, d))


def clip_by_global_norm(grads: Dict[str, np.ndarray],
                        max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """
    所有梯度乘同一个因子，使全局 L2 范数不超过 max_norm

    返回:
        (梯度, 裁剪前的范数)；max_norm <= 0 时原样返回
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm <= 0 or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# 模型

class GsmtModel:
    """
    GSMT 模型

    Attributes:
        config: 校验过的超参数
        params: 按名字存放的可学习权重
        adapter: 固定的答案适配矩阵（d_answer x d）
    """

    def __init__(self, config: GsmtConfig, params: Dict[str, np.ndarray], seed: int = 0) -> None:
        self.config = config
        self.params = {name: np.asarray(value, dtype=np.float64) for name, value in params.items()}
        self.seed = seed
        self.adapter = answer_adapter(config.answer_width, config.d, seed)

    @classmethod
    def init(cls, config: GsmtConfig, seed: int) -> "GsmtModel":
        rng = np.random.default_rng([seed, 2])
        params: Dict[str, np.ndarray] = {}
        visual = init_mechanism(config.visual_mechanism, config.d, config.d_h, config.d_gating, config.d_S, rng)
        params.update(visual.arrays("visual."))
        params.update(SelectorParams.init(config.d, config.d_h, config.d, rng).arrays(SELECTOR_PREFIX))
        params["fuse.w_s"] = init_linear(rng, config.d_h, config.d).data
        params["fuse.w_p"] = init_linear(rng, config.d_h, config.d).data
        params["fuse.w_w"] = init_linear(rng, config.d, config.d).data
        for layer in range(config.N_L):
            if layer == config.ssl_layer:
                group = GatedSslParams.init(config.d, config.d_gating, config.d, config.d_S, rng,
                                            gated=config.mechanism == "gated-ssl")
            else:
                group = AttentionLayerParams.init(config.d, rng)
            params.update(group.arrays(f"layer{layer}."))
        logger.debug(f"初始化模型参数: {len(params)} 组, 共 {sum(v.size for v in params.values())} 个")
        return cls(config, params, seed)

    @property
    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def bind(self, tape: Optional[Tape] = None) -> Dict[str, Tensor]:
        if tape is None:
            return {name: Tensor(value) for name, value in self.params.items()}
        return {name: tape.watch(value, name) for name, value in self.params.items()}

    def _layers(self, named: Dict[str, Tensor]) -> List[ParamGroup]:
        layers: List[ParamGroup] = []
        for layer in range(self.config.N_L):
            prefix = f"layer{layer}."
            if layer == self.config.ssl_layer:
                layers.append(GatedSslParams.from_named(named, prefix))
            else:
                layers.append(AttentionLayerParams.from_named(named, prefix))
        return layers

    def candidates(self, answers: AnswerSet) -> Tensor:
        if answers.candidates.shape[1] != self.adapter.shape[0]:
            raise DimensionError(
                f"answer width {answers.candidates.shape[1]} does not match adapter input {self.adapter.shape[0]}")
        return Tensor(answers.candidates @ self.adapter)

    def forward(self, sample: Sample, named: Dict[str, Tensor], seed: Optional[int] = None) -> ForwardResult:
        """
        单个样本的完整流程

        参数:
            sample: 特征、问题与答案
            named: 绑定后的参数（见 bind）
            seed: 选择噪声种子；None 为评估模式（无噪声）

        返回:
            ForwardResult: 样本带正确答案时 loss 有值
        """
        cfg = self.config
        layout = cfg.layout
        if sample.features.shape != (layout.L, cfg.d):
            raise DimensionError(f"features {sample.features.shape} do not match L={layout.L}, d={cfg.d}")

        visual = bind_mechanism(cfg.visual_mechanism, named, "visual.")
        h = global_mechanism_forward(cfg.visual_mechanism, visual, Tensor(sample.features))
        segments = pool_segments(pool_frames(h, layout), layout)
        words = Tensor(sample.question)
        q = pool_question(words)

        selector = SelectorParams.from_named(named, SELECTOR_PREFIX)
        selection = select_segments(selector, q, segments, cfg.k, cfg.temperature, seed)
        selection = select_patches(selector, q, h, layout, selection, cfg.j, cfg.temperature, seed)

        fused = fuse_tokens(selection.s_st, selection.h_st, words,
                            named["fuse.w_s"], named["fuse.w_p"], named["fuse.w_w"])
        fused = multimodal_attention(fused, self._layers(named))

        cosines, prediction = score_answers(pool_layers(fused.layers), self.candidates(sample.answers))
        logits = tn.scale(cosines, cfg.score_scale)
        source = fused.layers[cfg.c3_layer_index - 1]
        alignment = get_alignment_loss(cfg.alignment_loss)(fused.span("patches", source),
                                                           fused.span("words", source))
        result = ForwardResult(cosines, logits, prediction, selection, fused, alignment)
        if sample.label is not None:
            result.loss = total_loss(logits, sample.label, alignment, cfg.gamma)
        return result

    def objective(self, sample: Sample, seed: Optional[int] = None) -> Callable[[Dict[str, Tensor]], Tensor]:
        """把 sample 的标量损失写成具名参数的函数（供梯度检查）"""
        if sample.label is None:
            raise ContractError("objective needs a sample with a ground truth")

        def f(named: Dict[str, Tensor]) -> Tensor:
            return self.forward(sample, named, seed).loss

        return f

    def train_step(self, batch: Sequence[Sample], learning_rate: float,
                   seeds: Optional[Sequence[int]] = None, grad_clip: float = 0.0) -> StepResult:
        """
        对 batch 的平均损失做一步 SGD

        grad_clip > 0 时把平均梯度的全局 L2 范数裁剪到 grad_clip 以内；
        返回的 grad_norm 为裁剪前的范数

        Raises:
            ContractError: 批次为空或样本没有标签
            NonFiniteError: 损失或梯度非有限
        """
        if not batch:
            raise ContractError("train_step needs a non-empty batch")
        seeds = list(range(len(batch))) if seeds is None else list(seeds)
        if len(seeds) != len(batch):
            raise ContractError(f"{len(seeds)} seeds for a batch of {len(batch)}")

        totals = {name: np.zeros_like(value) for name, value in self.params.items()}
        losses, ces, aligns = [], [], []
        for sample, seed in zip(batch, seeds):
            if sample.label is None:
                raise ContractError("train_step needs labeled samples")
            tape = Tape()
            named = self.bind(tape)
            result = self.forward(sample, named, seed)
            loss = result.loss.item()
            if not np.isfinite(loss):
                raise NonFiniteError(_non_finite_message(tape, loss))
            grads = backward(tape, result.loss)
            for name, t in named.items():
                totals[name] += grads.of(t)
            align = result.alignment.item()
            losses.append(loss)
            aligns.append(align)
            ces.append(loss - self.config.gamma * align)

        for name, grad in totals.items():
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        mean_grads, norm = clip_by_global_norm({name: g / len(batch) for name, g in totals.items()}, grad_clip)
        if learning_rate != 0:
            self.params = {name: value - learning_rate * mean_grads[name]
                           for name, value in self.params.items()}
        return StepResult(float(np.mean(losses)), float(np.mean(ces)), float(np.mean(aligns)),
                          self.params, norm)

    def predict(self, sample: Sample) -> int:
        """用当前参数做无噪声预测"""
        return self.forward(sample, self.bind(), None).prediction


def _non_finite_message(tape: Tape, loss: float) -> str:
    found = tape.first_non_finite()
    if found is None:
        return f"non-finite loss {loss}"
    nid, node = found
    label = f" '{node.name}'" if node.name else ""
    return f"non-finite loss {loss}; first non-finite node #{nid} ({node.kind}{label})"


def selector_parameter_names(params: Union[Dict[str, np.ndarray], Dict[str, Tensor]]) -> List[str]:
    return [name for name in params if name.startswith(SELECTOR_PREFIX)]
