"""掩码指标

无效的目标步（缺失、未知、功率 <= 0）不参与评估：
- exclude（默认）：同时从分子和分母中剔除
- zero：误差记 0 但仍计入分母，仅用于对照
整段目标都无效时指标无定义，抛 AllInvalid，该风机在该样本上不计分。
"""

from __future__ import annotations

from typing import Literal, Mapping

import numpy as np

from models.entities import TurbineMetric
from models.errors import AllInvalid, TurbineSetMismatch

IgnoreMode = Literal["exclude", "zero"]


def _masked_errors(pred, truth, valid, mode: IgnoreMode) -> tuple[np.ndarray, int]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if pred.shape != truth.shape or pred.shape != valid.shape:
        raise ValueError(f"形状不一致: pred{pred.shape} truth{truth.shape} valid{valid.shape}")
    if not valid.any():
        raise AllInvalid()
    errors = np.where(valid, pred - np.where(valid, truth, 0.0), 0.0)
    if mode == "exclude":
        return errors[valid], int(valid.sum())
    return errors.reshape(-1), int(valid.size)


def masked_mae(pred, truth, valid, mode: IgnoreMode = "exclude") -> float:
    errors, count = _masked_errors(pred, truth, valid, mode)
    return float(np.abs(errors).sum() / count)


def masked_rmse(pred, truth, valid, mode: IgnoreMode = "exclude") -> float:
    errors, count = _masked_errors(pred, truth, valid, mode)
    return float(np.sqrt((errors * errors).sum() / count))


def turbine_metrics(
    preds: Mapping[int, np.ndarray],
    truths: Mapping[int, np.ndarray],
    masks: Mapping[int, np.ndarray],
    mode: IgnoreMode = "exclude",
) -> list[TurbineMetric]:
    """逐风机 MAE / RMSE / (MAE+RMSE)/2，按风机号排序；全无效的风机被跳过"""
    if set(preds) != set(truths) or set(preds) != set(masks):
        raise TurbineSetMismatch(
            f"preds={sorted(preds)} truths={sorted(truths)} masks={sorted(masks)}"
        )
    metrics = []
    for turbine in sorted(preds):
        try:
            mae = masked_mae(preds[turbine], truths[turbine], masks[turbine], mode)
            rmse = masked_rmse(preds[turbine], truths[turbine], masks[turbine], mode)
        except AllInvalid:
            continue
        score = (mae + rmse) / 2
        metrics.append(TurbineMetric(turbine_id=turbine, mae=mae, rmse=rmse, score=score))
    return metrics


def score_sample(
    preds: Mapping[int, np.ndarray],
    truths: Mapping[int, np.ndarray],
    masks: Mapping[int, np.ndarray],
    unit_divisor: float = 1000.0,
    mode: IgnoreMode = "exclude",
) -> float:
    """单个样本的风场得分：Σ 风机得分 / unit_divisor"""
    metrics = turbine_metrics(preds, truths, masks, mode)
    return sum(m.score for m in metrics) / unit_divisor


def persistence_forecast(history_power, horizon: int = 288) -> np.ndarray:
    """持续性基线：把输入窗口最后一个（填充后的）功率值重复 horizon 次

    history_power 为 [input_length] 或 [batch, input_length]。
    """
    history = np.asarray(history_power, dtype=np.float64)
    if history.shape[-1] == 0:
        raise ValueError("输入窗口为空")
    last = history[..., -1:]
    return np.repeat(last, horizon, axis=-1)
