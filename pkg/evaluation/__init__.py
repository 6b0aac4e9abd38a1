"""评估层 - 掩码指标、持续性基线与回测"""
