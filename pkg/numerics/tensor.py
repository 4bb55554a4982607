# -*- coding: UTF-8 -*-
"""
float64 稠密张量与基于 tape 的反向模式自动微分

Tensor 包装一个不可变的 numpy 数组。Tape.watch 创建的张量是该 tape 的叶子，
任一输入被跟踪的运算都会在同一 tape 上追加节点；未跟踪的张量不接触 tape，
同一套运算代码既用于训练（记录）也用于评估（纯 numpy）
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import ContractError, DimensionError

# KL 与 log 的输入在取对数前截断到此下限
LOG_EPS: float = 1e-8

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@dataclass
class Node:
    """一次记录的运算；叶子节点的 vjp 为 None"""
    kind: str
    inputs: Tuple[Optional[int], ...]
    value: np.ndarray
    vjp: Optional[Vjp]
    name: Optional[str] = None


class Tape:
    """只追加的运算记录，节点 id 即列表下标"""

    def __init__(self) -> None:
        self.nodes: List[Node] = []

    def watch(self, data: ArrayLike, name: Optional[str] = None) -> "Tensor":
        """登记一个叶子（参数或任何需要对其求导的值）"""
        value = _as_array(data)
        self.nodes.append(Node("leaf", (), value, None, name))
        return Tensor(value, len(self.nodes) - 1, self)

    def record(self, kind: str, inputs: Sequence["Tensor"], value: np.ndarray, vjp: Vjp) -> "Tensor":
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        self.nodes.append(Node(kind, ids, value, vjp))
        return Tensor(value, len(self.nodes) - 1, self)

    def first_non_finite(self) -> Optional[Tuple[int, Node]]:
        """最早出现 NaN/Inf 的 (id, node)，没有则为 None"""
        for nid, node in enumerate(self.nodes):
            if not np.all(np.isfinite(node.value)):
                return nid, node
        return None

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """不可变的 n 维 float64 数组，可被 tape 跟踪"""

    __slots__ = ("data", "node", "tape")

    def __init__(self, data: ArrayLike, node: Optional[int] = None, tape: Optional[Tape] = None) -> None:
        self.data = _as_array(data)
        self.node = node
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other: "TensorLike") -> "Tensor":
        return add(self, other)

    def __radd__(self, other: "TensorLike") -> "Tensor":
        return add(other, self)

    def __sub__(self, other: "TensorLike") -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: "TensorLike") -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: "TensorLike") -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: "TensorLike") -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: "TensorLike") -> "Tensor":
        return div(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, tracked={self.tracked})"


TensorLike = Union[Tensor, ArrayLike]


class Gradients:
    """backward 的结果：按叶子节点 id 存放梯度"""

    def __init__(self, by_node: Dict[int, np.ndarray]) -> None:
        self.by_node = by_node

    def of(self, leaf: Tensor) -> np.ndarray:
        if leaf.node not in self.by_node:
            raise ContractError(f"tensor {leaf!r} is not a leaf of this tape")
        return self.by_node[leaf.node]

    def __len__(self) -> int:
        return len(self.by_node)


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """
    从标量 loss 反向传播，tape 上的每个叶子都得到梯度

    Raises:
        ContractError: loss 不是标量或不在该 tape 上
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise ContractError("loss was not recorded on the given tape")

    pending: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    leaves: Dict[int, np.ndarray] = {}
    for nid in range(loss.node, -1, -1):
        node = tape.nodes[nid]
        grad = pending.pop(nid, None)
        if node.vjp is None:
            leaves[nid] = grad if grad is not None else np.zeros_like(node.value)
            continue
        if grad is None:
            continue
        for inp, g in zip(node.inputs, node.vjp(grad)):
            if inp is None or g is None:
                continue
            pending[inp] = pending[inp] + g if inp in pending else g
    # 在 loss 之后登记的叶子不影响它
    for nid in range(loss.node + 1, len(tape.nodes)):
        node = tape.nodes[nid]
        if node.vjp is None:
            leaves[nid] = np.zeros_like(node.value)
    return Gradients(leaves)


# ---------------------------------------------------------------------------
# 辅助函数

def _as_array(data: ArrayLike) -> np.ndarray:
    if isinstance(data, Tensor):
        return data.data
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _wrap(x: TensorLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: Vjp) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(value)
    if len(tapes) > 1:
        raise ContractError(f"{kind}: inputs are recorded on different tapes")
    tape = next(iter(tapes.values()))
    return tape.record(kind, inputs, value, vjp)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


def custom_op(kind: str, inputs: Sequence[Tensor], value: np.ndarray, vjp: Vjp) -> Tensor:
    """记录本模块以外定义的运算（值与 vjp 由调用方给出）"""
    return _emit(kind, tuple(inputs), np.asarray(value, dtype=np.float64), vjp)


# ---------------------------------------------------------------------------
# 常量

def constant(data: ArrayLike) -> Tensor:
    return Tensor(data)


def stop_gradient(x: Tensor) -> Tensor:
    """同值，断开与 tape 的联系"""
    return Tensor(x.data)


# ---------------------------------------------------------------------------
# 逐元素运算

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd,
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", (a, b), out,
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """log(max(a, eps))；被截断的位置没有梯度"""
    clamped = np.maximum(a.data, eps)
    live = a.data > eps
    return _emit("log", (a,), np.log(clamped), lambda g: (np.where(live, g / clamped, 0.0),))


# ---------------------------------------------------------------------------
# 归约

def sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (a,), np.sum(a.data, axis=axis, keepdims=keepdims), vjp)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_reduce(a: Tensor, axis: int) -> Tensor:
    """沿 axis 取最大值，梯度只给第一个最大元素"""
    if a.shape[axis] == 0:
        raise DimensionError(f"max_reduce over empty axis {axis} of shape {a.shape}")
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _emit("max", (a,), out, vjp)


# ---------------------------------------------------------------------------
# 线性代数与形状

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """二维矩阵乘"""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose expects 2-D, got {a.shape}")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(src),))


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError(f"gather_rows: indices out of range for {a.shape}")
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros(shape)
        np.add.at(grad, idx, g)
        return (grad,)

    return _emit("gather", (a,), a.data[idx], vjp)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    tail = parts[0].shape[1:]
    for p in parts:
        if p.shape[1:] != tail:
            raise DimensionError(f"concat_rows: trailing shapes {[q.shape for q in parts]} differ")
    bounds = np.cumsum([p.shape[0] for p in parts])[:-1]
    return _emit("concat", tuple(parts), np.concatenate([p.data for p in parts], axis=0),
                 lambda g: tuple(np.split(g, bounds, axis=0)))


def stack(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise DimensionError("stack needs at least one tensor")
    shape = parts[0].shape
    if any(p.shape != shape for p in parts):
        raise DimensionError(f"stack: shapes {[p.shape for p in parts]} differ")
    return _emit("stack", tuple(parts), np.stack([p.data for p in parts]),
                 lambda g: tuple(g[i] for i in range(len(parts))))


# ---------------------------------------------------------------------------
# 归一化

def softmax_rows(a: Tensor) -> Tensor:
    """沿最后一维的 softmax（逐行减去最大值）"""
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)
    return _emit("softmax", (a,), out,
                 lambda g: (out * (g - np.sum(g * out, axis=-1, keepdims=True)),))


def log_softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    probs = np.exp(out)
    return _emit("log_softmax", (a,), out,
                 lambda g: (g - probs * np.sum(g, axis=-1, keepdims=True),))


def l2_normalize_rows(a: Tensor) -> Tensor:
    """逐行缩放到单位 L2 范数；零行保持为零且不回传梯度"""
    norms = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    out = np.where(norms > 0, a.data / safe, 0.0)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        proj = np.sum(g * out, axis=-1, keepdims=True)
        return (np.where(norms > 0, (g - out * proj) / safe, 0.0),)

    return _emit("l2norm", (a,), out, vjp)


# ---------------------------------------------------------------------------
# 选择与卷积

def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    """前向取 hard，反向把梯度原样交给 soft"""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: hard {hard.shape} vs soft {soft.shape}")
    return _emit("straight_through", (soft,), hard.copy(), lambda g: (g,))


def _toeplitz(kernel: np.ndarray, length: int) -> np.ndarray:
    """T[c, t, s] = kernel[c, t - s]（0 <= t - s < taps），其余为 0"""
    taps = kernel.shape[1]
    lag = np.arange(length)[:, None] - np.arange(length)[None, :]
    valid = (lag >= 0) & (lag < taps)
    return np.where(valid[None], kernel[:, np.clip(lag, 0, taps - 1)], 0.0)


def causal_conv(x: Tensor, kernel: Tensor) -> Tensor:
    """
    逐通道直接因果卷积

    o[t, c] = sum_{j <= t, j < K} kernel[c, j] * x[t - j, c]

    参数:
        x: L x C 信号
        kernel: C x K 抽头（K 可以与 L 不同，缺失的抽头视为 0）
    """
    if x.data.ndim != 2 or kernel.data.ndim != 2 or kernel.shape[0] != x.shape[1]:
        raise DimensionError(f"causal_conv: signal {x.shape} vs kernel {kernel.shape}")
    length, taps = x.shape[0], kernel.shape[1]
    xd, kd = x.data, kernel.data
    toe = _toeplitz(kd, length)
    out = np.einsum("cts,sc->tc", toe, xd)

    def vjp(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gx = np.einsum("cts,tc->sc", toe, g)
        gk = np.zeros_like(kd)
        for j in range(min(taps, length)):
            gk[:, j] = np.sum(g[j:] * xd[:length - j], axis=0)
        return gx, gk

    return _emit("causal_conv", (x, kernel), out, vjp)


def one_hot(indices: Iterable[int], width: int) -> np.ndarray:
    idx = list(indices)
    out = np.zeros((len(idx), width))
    out[np.arange(len(idx)), idx] = 1.0
    return out
