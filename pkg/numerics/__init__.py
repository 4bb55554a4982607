# -*- coding: UTF-8 -*-
# 数值计算层初始化文件
