"""自动微分层 - 张量、计算记录与梯度检查"""
