"""流水线编排 - 各命令共用的读数、训练、预测与回测步骤

产物（相对路径均在 paths.output_dir 下）：
- model.ckpt         参数 + Adam 状态 + 配置
- scaler.txt         训练区间上拟合的 min-max 统计量
- profile.txt        训练区间上拟合的日波动曲线
- loss_history.csv   每个 epoch 的平均训练损失
- run_config.yaml    本次运行的完整配置（由 CLI 在分派命令前写出）
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict

from config.settings import TARGET_ROLE, RunConfig
from evaluation.backtest import BacktestResult, backtest, prepare_inputs, write_report
from forecaster.checkpoint import load_checkpoint, save_checkpoint
from forecaster.model import ForecasterParams, forward
from forecaster.postprocess import (
    apply_daily_fluctuation,
    fit_daily_profile,
    load_profile,
    save_profile,
    start_slot_of,
)
from forecaster.train import FitResult, fit
from ingestion.loader import flag_invalid, load_csv
from ingestion.preprocess import MinMaxScaler, fit_scaler, forward_fill, temporal_split
from models.entities import DailyProfile, StepRange, TurbineSeriesSet
from models.errors import ArtifactMissing, RangeTooShort

FORECAST_COLUMNS = ["turbine_id", "step", "prediction_kw"]


class Artifacts(BaseModel):
    """训练产物（内存中的一份）"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ForecasterParams
    scaler: MinMaxScaler
    profile: DailyProfile
    loss_history: list[float] = []


class ForecastPipeline:
    """把一份 RunConfig 串成 训练 / 预测 / 回测 三条流程"""

    def __init__(self, config: RunConfig):
        self.config = config
        self.paths = config.paths

    # ─────────────────────────── 数据 ───────────────────────────

    def load_series(self, path: Path | str | None = None) -> TurbineSeriesSet:
        """读取 CSV 并施加有效性规则（不填充、不缩放）"""
        source = path or self.config.data.path
        if source is None:
            raise ArtifactMissing("data.path (未配置数据文件)")
        raw = load_csv(source, self.config.data.columns)
        return flag_invalid(raw, self.config.data.validity)

    def splits(self, series: TurbineSeriesSet) -> tuple[StepRange, StepRange]:
        pre = self.config.preprocess
        return temporal_split(series, pre.train_days, pre.validation_days)

    def scaled_roles(self) -> list[str]:
        return [r for r in self.config.preprocess.input_roles() if r != TARGET_ROLE]

    # ─────────────────────────── 训练 ───────────────────────────

    def train(self, series: TurbineSeriesSet | None = None) -> Artifacts:
        """拟合缩放器与日波动曲线，训练模型，并写出全部产物"""
        series = series if series is not None else self.load_series()
        train_range, validation_range = self.splits(series)

        logger.info("=" * 60)
        logger.info("训练流程开始")
        logger.info("=" * 60)

        filled = forward_fill(series, fill_invalid=self.config.preprocess.fill_invalid)
        scaler = fit_scaler(filled, self.scaled_roles(), train_range)
        scaled = scaler.transform(filled, roles=self.scaled_roles())
        profile = fit_daily_profile(series, train_range, self.config.postprocess)

        result: FitResult = fit(
            scaled,
            (train_range, validation_range),
            self.config.model,
            self.config.train,
            feature_roles=self.config.preprocess.input_roles(),
            stride=self.config.preprocess.window.stride,
        )

        save_checkpoint(
            result.params, result.state, self.config.model, self.config.train,
            self.paths.resolve("checkpoint"),
        )
        scaler.save(self.paths.resolve("scaler"))
        save_profile(profile, self.paths.resolve("profile"))
        history = pd.DataFrame({
            "epoch": np.arange(1, len(result.loss_history) + 1),
            "loss": result.loss_history,
        })
        history.to_csv(self.paths.resolve("history"), index=False)

        logger.info(f"训练完成: {result.steps} 步, 损失 {result.loss_history}")
        return Artifacts(
            params=result.params,
            scaler=scaler,
            profile=profile,
            loss_history=result.loss_history,
        )

    def load_artifacts(self) -> Artifacts:
        for name in ("checkpoint", "scaler", "profile"):
            path = self.paths.resolve(name)
            if not path.is_file():
                raise ArtifactMissing(str(path))
        checkpoint = load_checkpoint(self.paths.resolve("checkpoint"))
        if checkpoint.model != self.config.model:
            logger.warning("检查点中的模型配置与当前配置不一致，以检查点为准")
            self.config = self.config.model_copy(update={"model": checkpoint.model})
        return Artifacts(
            params=checkpoint.params,
            scaler=MinMaxScaler.load(self.paths.resolve("scaler")),
            profile=load_profile(self.paths.resolve("profile")),
        )

    # ─────────────────────────── 预测 ───────────────────────────

    def predict(
        self,
        input_path: Path | str | None = None,
        artifacts: Artifacts | None = None,
    ) -> pd.DataFrame:
        """用 CSV 末尾 input_length 步作为历史，为每台风机预测后续 output_length 步"""
        artifacts = artifacts or self.load_artifacts()
        series = self.load_series(input_path)
        model = self.config.model

        present_any = np.flatnonzero(series.present_mask.any(axis=0))
        end = int(present_any[-1]) + 1 if present_any.size else 0
        if end < model.input_length:
            raise RangeTooShort(model.input_length, end)

        prepared = prepare_inputs(series, artifacts.scaler, self.config)
        history = slice(end - model.input_length, end)
        inputs = np.stack(
            [prepared.role(r)[:, history] for r in self.config.preprocess.input_roles()], axis=-1
        )
        raw = forward(artifacts.params, model, inputs.astype(model.dtype)).numpy()
        raw = raw.astype(np.float64)
        slot = start_slot_of(end, series.records_per_day)
        adjusted = apply_daily_fluctuation(raw, slot, artifacts.profile, self.config.postprocess)

        frame = pd.DataFrame({
            "turbine_id": np.repeat(series.turbine_ids, model.output_length),
            "step": np.tile(np.arange(model.output_length), series.n_turbines),
            "prediction_kw": adjusted.reshape(-1),
        }, columns=FORECAST_COLUMNS)
        out = self.paths.resolve("forecast")
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
        logger.info(
            f"预测完成: {series.n_turbines} 台风机 × {model.output_length} 步, "
            f"历史 [{history.start}, {history.stop}), 起始时段 {slot} -> {out}"
        )
        return frame

    # ─────────────────────────── 回测 ───────────────────────────

    def evaluate(
        self,
        series: TurbineSeriesSet | None = None,
        artifacts: Artifacts | None = None,
    ) -> BacktestResult:
        artifacts = artifacts or self.load_artifacts()
        series = series if series is not None else self.load_series()
        _, validation_range = self.splits(series)
        result = backtest(
            artifacts.params,
            self.config,
            series,
            artifacts.scaler,
            artifacts.profile,
            validation_range,
        )
        write_report(result, self.paths.resolve("report"))
        return result
