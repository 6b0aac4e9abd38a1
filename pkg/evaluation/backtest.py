"""回测

在验证区间内用固定种子随机抽取 n_samples 个起点；每个起点上全部风机同时预测 288 步，
按风机打分后求和得到该样本的风场得分，再按 sum / mean 聚合所有样本。
持续性基线在同一批样本上计算，不经过后处理。
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel

from config.settings import RunConfig
from evaluation.metrics import persistence_forecast, turbine_metrics
from forecaster.model import ForecasterParams, forward
from forecaster.postprocess import apply_daily_fluctuation
from ingestion.preprocess import MinMaxScaler, WindowIndex, forward_fill
from models.entities import (
    DailyProfile,
    MetricReport,
    SampleRow,
    StepRange,
    TurbineMetric,
    TurbineSeriesSet,
    WindowSpec,
)

REPORT_COLUMNS = ["predictor", "sample_id", "turbine_id", "mae", "rmse", "score"]


class BacktestResult(BaseModel):
    model: MetricReport
    baseline: MetricReport
    offsets: list[int]

    def reports(self) -> list[MetricReport]:
        return [self.model, self.baseline]


class _Accumulator:
    """收集一个预测器在各样本上的逐风机指标"""

    def __init__(self, name: str, config: RunConfig):
        self.name = name
        self.divisor = config.evaluate.unit_divisor
        self.aggregation = config.evaluate.aggregation
        self.rows: list[SampleRow] = []
        self.sample_scores: list[float] = []
        self.by_turbine: dict[int, list[TurbineMetric]] = {}

    def add(self, sample_id: int, metrics: list[TurbineMetric]):
        for m in metrics:
            self.rows.append(SampleRow(
                sample_id=sample_id, turbine_id=m.turbine_id, mae=m.mae, rmse=m.rmse, score=m.score
            ))
            self.by_turbine.setdefault(m.turbine_id, []).append(m)
        score = sum(m.score for m in metrics) / self.divisor
        self.rows.append(SampleRow(
            sample_id=sample_id,
            turbine_id="ALL",
            mae=sum(m.mae for m in metrics) / self.divisor,
            rmse=sum(m.rmse for m in metrics) / self.divisor,
            score=score,
        ))
        self.sample_scores.append(score)

    def _reduce(self, values: list[float]) -> float:
        if not values:
            return 0.0
        total = float(np.sum(values))
        return total if self.aggregation == "sum_over_samples" else total / len(values)

    def report(self) -> MetricReport:
        sample_rows = [r for r in self.rows if r.turbine_id == "ALL"]
        farm_score = self._reduce(self.sample_scores)
        total = SampleRow(
            sample_id="ALL",
            turbine_id="ALL",
            mae=self._reduce([r.mae for r in sample_rows]),
            rmse=self._reduce([r.rmse for r in sample_rows]),
            score=farm_score,
        )
        per_turbine = [
            TurbineMetric(
                turbine_id=turbine,
                mae=float(np.mean([m.mae for m in ms])),
                rmse=float(np.mean([m.rmse for m in ms])),
                score=float(np.mean([m.score for m in ms])),
            )
            for turbine, ms in sorted(self.by_turbine.items())
        ]
        return MetricReport(
            name=self.name,
            per_turbine=per_turbine,
            farm_score=farm_score,
            n_samples=len(self.sample_scores),
            aggregation=self.aggregation,
            unit_divisor=self.divisor,
            sample_scores=list(self.sample_scores),
            rows=[*self.rows, total],
        )


def prepare_inputs(
    series: TurbineSeriesSet, scaler: MinMaxScaler, config: RunConfig
) -> TurbineSeriesSet:
    """填充后用训练区间的缩放器缩放输入特征；valid_mask 原样保留"""
    filled = forward_fill(series, fill_invalid=config.preprocess.fill_invalid)
    return scaler.transform(filled, roles=config.preprocess.input_roles())


def backtest(
    params: ForecasterParams,
    config: RunConfig,
    series: TurbineSeriesSet,
    scaler: MinMaxScaler,
    profile: DailyProfile,
    validation_range: StepRange,
    n_samples: int | None = None,
    sample_seed: int | None = None,
) -> BacktestResult:
    """在验证区间上回测模型与持续性基线

    Args:
        series: 已标记有效性、未填充未缩放的原始序列
        scaler / profile: 训练区间上拟合的缩放器与日波动曲线
        n_samples / sample_seed: 缺省取 config.evaluate
    """
    n_samples = config.evaluate.n_samples if n_samples is None else n_samples
    sample_seed = config.evaluate.sample_seed if sample_seed is None else sample_seed
    spec = WindowSpec(
        input_length=config.model.input_length,
        output_length=config.model.output_length,
    )
    prepared = prepare_inputs(series, scaler, config)
    index = WindowIndex(prepared, spec, config.preprocess.input_roles(), validation_range)

    rng = np.random.default_rng(sample_seed)
    offsets = rng.choice(index.per_turbine, size=n_samples, replace=n_samples > index.per_turbine)
    rows = np.arange(series.n_turbines, dtype=np.int64)
    mode = config.evaluate.ignore_mode
    dtype = np.dtype(config.model.dtype)

    logger.info("=" * 60)
    logger.info(
        f"开始回测: 区间 [{validation_range.start}, {validation_range.stop}), "
        f"{n_samples} 个样本 × {series.n_turbines} 台风机, 可选起点 {index.per_turbine} 个"
    )
    logger.info("=" * 60)

    model_acc = _Accumulator("model", config)
    base_acc = _Accumulator("persistence", config)
    for sample_id, offset in enumerate(offsets):
        batch = index.gather(rows * index.per_turbine + int(offset), dtype=dtype)
        raw = forward(params, config.model, batch.inputs).numpy().astype(np.float64)
        adjusted = apply_daily_fluctuation(raw, batch.start_slot, profile, config.postprocess)
        baseline = persistence_forecast(batch.history_power, config.model.output_length)

        ids = [int(t) for t in batch.turbine_id]
        truths = dict(zip(ids, batch.targets))
        masks = dict(zip(ids, batch.target_valid))
        model_metrics = turbine_metrics(dict(zip(ids, adjusted)), truths, masks, mode)
        if not model_metrics:
            logger.warning(f"  样本 {sample_id} (offset {int(offset)}) 所有风机目标都无效，跳过")
            continue
        model_acc.add(sample_id, model_metrics)
        base_acc.add(sample_id, turbine_metrics(dict(zip(ids, baseline)), truths, masks, mode))
        logger.debug(
            f"  样本 {sample_id}: model={model_acc.sample_scores[-1]:.4f} "
            f"persistence={base_acc.sample_scores[-1]:.4f}"
        )

    result = BacktestResult(
        model=model_acc.report(),
        baseline=base_acc.report(),
        offsets=[int(o) for o in offsets],
    )
    logger.info(
        f"回测完成: model={result.model.farm_score:.4f}, "
        f"persistence={result.baseline.farm_score:.4f} ({config.evaluate.aggregation})"
    )
    return result


# ─────────────────────────── 输出 ───────────────────────────


def report_frame(result: BacktestResult) -> pd.DataFrame:
    records = [
        {"predictor": report.name, **row.model_dump()}
        for report in result.reports()
        for row in report.rows
    ]
    return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def write_report(result: BacktestResult, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_frame(result).to_csv(path, index=False)
    logger.info(f"回测报告已写入: {path}")
    return path


def format_table(result: BacktestResult) -> str:
    """模型 vs 持续性基线的对照表"""
    records = []
    for r in result.reports():
        per_turbine = pd.DataFrame([t.model_dump() for t in r.per_turbine], columns=["mae", "rmse"])
        records.append({
            "predictor": r.name,
            "samples": r.n_samples,
            "mean_mae_kw": per_turbine["mae"].mean(),
            "mean_rmse_kw": per_turbine["rmse"].mean(),
            "farm_score": r.farm_score,
        })
    frame = pd.DataFrame(records)
    return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")
