"""数据层 - 读取、有效性标记与预处理"""
