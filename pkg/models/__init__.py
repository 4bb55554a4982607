# -*- coding: UTF-8 -*-
# 模型层初始化文件
