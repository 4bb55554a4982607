# -*- coding: UTF-8 -*-
# 服务层初始化文件