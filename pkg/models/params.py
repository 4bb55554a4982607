# -*- coding: UTF-8 -*-
"""
具名参数组

模型把权重存成扁平的 {name: ndarray} 字典；前向时先把字典绑定为张量
（训练时登记到 tape，否则为常量），再按名字重建各类型化的参数组
"""

from dataclasses import fields
from typing import Dict, Mapping, Optional, Type, TypeVar

import numpy as np

from numerics.tensor import Tensor

G = TypeVar("G", bound="ParamGroup")


class ParamGroup:
    """
    dataclass 混入类，Tensor 字段即可学习权重

    Optional[Tensor] 字段可以为 None（没有该权重）；_FLAGS 中的非张量字段不进入具名视图
    """

    _FLAGS: tuple = ()

    def named(self, prefix: str) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for f in fields(self):
            if f.name in self._FLAGS:
                continue
            value = getattr(self, f.name)
            if value is not None:
                out[f"{prefix}{f.name}"] = value
        return out

    def arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named(prefix).items()}

    @classmethod
    def from_named(cls: Type[G], named: Mapping[str, Tensor], prefix: str, **flags) -> G:
        kwargs: Dict[str, Optional[Tensor]] = {}
        for f in fields(cls):
            if f.name in cls._FLAGS:
                continue
            kwargs[f.name] = named.get(f"{prefix}{f.name}")
        kwargs.update(flags)
        return cls(**kwargs)


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """无偏置线性映射，存为 fan_in x fan_out，N(0, 1/fan_in)"""
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
