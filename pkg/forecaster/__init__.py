"""预测层 - 模型结构、训练、检查点与日波动后处理"""
