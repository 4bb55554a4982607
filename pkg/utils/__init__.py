# -*- coding: UTF-8 -*-
# 工具包初始化文件