"""数据模型层 - 领域对象与异常定义"""
