# -*- coding: UTF-8 -*-
# 日志工具模块

import logging
import os
import sys

# 配置日志
def setup_logger():
    """设置并返回日志记录器"""
    from app_config import AppConfig  # 从 app_config 模块导入 AppConfig

    # 创建日志记录器
    logger = logging.getLogger('gsmt')
    if logger.handlers:
        # 重复导入时不再追加处理器
        return logger
    level = AppConfig.get_log_level()
    logger.setLevel(level)
    logger.propagate = False

    # 创建格式化器
    formatter = logging.Formatter(AppConfig.LOG_FORMAT, AppConfig.LOG_DATE_FORMAT)

    # 控制台处理器写 stderr，stdout 留给指标流
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # 确保日志目录存在
    log_dir = AppConfig.LOG_DIR
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    # 创建文件处理器
    file_handler = logging.FileHandler(AppConfig.LOG_FILE, encoding='utf-8')
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger

# 创建全局日志记录器实例
logger = setup_logger()
