# -*- coding: UTF-8 -*-
"""
应用全局配置

包含日志、目录、并行度等应用级配置项；模型与训练超参数见 config.py
"""
import os
from typing import Optional


class AppConfig:
    """
    应用全局配置

    类属性即默认值，环境变量 GSMT_LOG_LEVEL / GSMT_THREADS 可覆盖
    """
    # 日志配置
    LOG_DIR: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'logs')
    LOG_FILE: str = os.path.join(LOG_DIR, 'app.log')
    LOG_LEVEL: str = 'INFO'
    LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    LOG_DATE_FORMAT: str = '%Y-%m-%d %H:%M:%S'

    # 检查点目录
    CHECKPOINT_DIR: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'checkpoints')

    # 配置预设目录
    CONFIG_DIR: str = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'config')

    # 评估并行度上限
    DEFAULT_THREADS: int = 1

    @classmethod
    def ensure_directories(cls) -> None:
        """
        确保所需的目录存在
        创建日志和检查点目录（如果不存在）
        """
        os.makedirs(cls.LOG_DIR, exist_ok=True)
        os.makedirs(cls.CHECKPOINT_DIR, exist_ok=True)

    @classmethod
    def initialize(cls) -> None:
        """
        初始化应用配置
        """
        cls.ensure_directories()

    @classmethod
    def get_log_level(cls) -> str:
        """获取日志级别，环境变量优先"""
        return os.environ.get('GSMT_LOG_LEVEL', cls.LOG_LEVEL).upper()

    @classmethod
    def get_threads(cls) -> int:
        """
        获取评估并行线程数

        Returns:
            int: GSMT_THREADS 的值（至少为 1），未设置或非法时返回默认值
        """
        raw: Optional[str] = os.environ.get('GSMT_THREADS')
        if not raw:
            return cls.DEFAULT_THREADS
        try:
            return max(1, int(raw))
        except ValueError:
            return cls.DEFAULT_THREADS

    @classmethod
    def preset_path(cls, name: str) -> str:
        """获取预设配置文件路径，如 preset_path('toy') -> config/toy.cfg"""
        return os.path.join(cls.CONFIG_DIR, f'{name}.cfg')
