# -*- coding: UTF-8 -*-
"""
异常定义

库代码只负责抛出异常，命令层（app.py）统一捕获、记录日志并映射为退出码。
"""
from typing import Optional


class GsmtError(Exception):
    """所有 GSMT 异常的基类"""


class DimensionError(GsmtError):
    """张量形状不匹配"""


class ConfigError(GsmtError):
    """配置无效：未知键、解析失败、超参数越界、未知机制类型等"""


class ContractError(GsmtError):
    """调用前置条件被违反"""


class LoadError(GsmtError):
    """二进制文件格式错误"""

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SpecError(GsmtError):
    """合成数据的拒绝采样约束无法满足"""


class NonFiniteError(GsmtError):
    """损失或梯度出现 NaN/Inf"""


class VerificationError(GsmtError):
    """校验套件未通过"""
