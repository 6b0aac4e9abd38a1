"""合成数据"""
