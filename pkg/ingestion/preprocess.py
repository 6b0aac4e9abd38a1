"""预处理 - 前值填充、min-max 缩放、滑窗切样本与时间划分

约定：
1. 缺失值（以及可选的无效值）用前一个值填充；序列开头的空缺用其后第一个值回填
2. 缩放器只在训练区间上拟合，验证区间沿用训练统计量，不裁剪
3. 目标功率列永远不缩放
4. 填充只影响数值，valid_mask 原样保留，供损失掩码与打分使用
"""

from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from models.entities import StepRange, TurbineSeriesSet, WindowBatch, WindowSpec
from models.errors import AllMissing, InsufficientDays, RangeTooShort, UnfittedRole, UnknownRole

TARGET_ROLE = "target_power"
DEFAULT_FEATURE_ROLES = ("wind_speed", "wind_direction")


# ─────────────────────────── 填充 ───────────────────────────


def forward_fill(series: TurbineSeriesSet, fill_invalid: bool = False) -> TurbineSeriesSet:
    """前值填充

    Args:
        series: 原始序列
        fill_invalid: 为 True 时，valid_mask 为假但数值存在的步也视为空缺

    Returns:
        数值填充后的新序列，present_mask / valid_mask 不变
    """
    filled: dict[str, np.ndarray] = {}
    for role, array in series.values.items():
        missing = np.isnan(array)
        empty_rows = np.flatnonzero(missing.all(axis=1))
        if empty_rows.size:
            raise AllMissing(role, series.turbine_ids[int(empty_rows[0])])
        gaps = missing
        if fill_invalid:
            gaps = missing | ~series.valid_mask
            # 整行都无效（停机、限电）时退回只填 NaN
            blank_rows = gaps.all(axis=1)
            if blank_rows.any():
                turbines = [series.turbine_ids[int(i)] for i in np.flatnonzero(blank_rows)]
                logger.warning(f"风机 {turbines} 的 {role} 没有有效步，仅填充缺失值")
                gaps = np.where(blank_rows[:, None], missing, gaps)
        if not gaps.any():
            filled[role] = array
            continue
        frame = pd.DataFrame(np.where(gaps, np.nan, array))
        filled[role] = frame.ffill(axis=1).bfill(axis=1).to_numpy(dtype=np.float64)
    return series.replace(values=filled)


# ─────────────────────────── 缩放 ───────────────────────────


class MinMaxScaler(BaseModel):
    """按角色的 min-max 缩放器，目标功率不参与"""
    minimum: dict[str, float] = Field(default_factory=dict)
    maximum: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "MinMaxScaler":
        if TARGET_ROLE in self.minimum or TARGET_ROLE in self.maximum:
            raise ValueError("目标功率不能作为缩放角色")
        if set(self.minimum) != set(self.maximum):
            raise ValueError("minimum 与 maximum 的角色集合不一致")
        for role in self.minimum:
            if self.maximum[role] < self.minimum[role]:
                raise ValueError(f"角色 {role} 的 max < min")
        return self

    @property
    def fitted_roles(self) -> set[str]:
        return set(self.minimum)

    def _roles_for(self, series: TurbineSeriesSet, roles: list[str] | None) -> list[str]:
        if roles is None:
            return [r for r in series.roles if r in self.minimum]
        for role in roles:
            if role == TARGET_ROLE:
                continue
            if role not in self.minimum:
                raise UnfittedRole(role)
        return [r for r in roles if r != TARGET_ROLE]

    def scale_array(self, role: str, values: np.ndarray) -> np.ndarray:
        if role not in self.minimum:
            raise UnfittedRole(role)
        lo, hi = self.minimum[role], self.maximum[role]
        if hi == lo:
            return np.zeros_like(values, dtype=np.float64)
        return (values - lo) / (hi - lo)

    def unscale_array(self, role: str, values: np.ndarray) -> np.ndarray:
        if role not in self.minimum:
            raise UnfittedRole(role)
        lo, hi = self.minimum[role], self.maximum[role]
        if hi == lo:
            return np.full_like(values, lo, dtype=np.float64)
        return values * (hi - lo) + lo

    def transform(
        self, series: TurbineSeriesSet, roles: list[str] | None = None
    ) -> TurbineSeriesSet:
        values = dict(series.values)
        for role in self._roles_for(series, roles):
            values[role] = self.scale_array(role, series.role(role))
        return series.replace(values=values)

    def inverse_transform(
        self, series: TurbineSeriesSet, roles: list[str] | None = None
    ) -> TurbineSeriesSet:
        values = dict(series.values)
        for role in self._roles_for(series, roles):
            values[role] = self.unscale_array(role, series.role(role))
        return series.replace(values=values)

    def save(self, path: Path | str) -> Path:
        """每行 `role min max`，repr 保证浮点数精确往返"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["# role min max"]
        for role in sorted(self.minimum):
            lines.append(f"{role} {self.minimum[role]!r} {self.maximum[role]!r}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: Path | str) -> "MinMaxScaler":
        minimum, maximum = {}, {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            role, lo, hi = line.split()
            minimum[role] = float(lo)
            maximum[role] = float(hi)
        return cls(minimum=minimum, maximum=maximum)


def fit_scaler(series: TurbineSeriesSet, roles, fit_range: StepRange) -> MinMaxScaler:
    """在 fit_range 内（所有风机）统计每个角色的最小/最大值；max == min 原样记录"""
    if fit_range.length <= 0:
        raise ValueError("fit_range 不能为空")
    if fit_range.stop > series.n_steps:
        raise RangeTooShort(fit_range.stop, series.n_steps)
    if TARGET_ROLE in roles:
        raise ValueError("目标功率不参与缩放")
    minimum, maximum = {}, {}
    for role in sorted(roles):
        block = series.role(role)[:, fit_range.start:fit_range.stop]
        if np.isnan(block).all():
            raise AllMissing(role)
        minimum[role] = float(np.nanmin(block))
        maximum[role] = float(np.nanmax(block))
    scaler = MinMaxScaler(minimum=minimum, maximum=maximum)
    logger.debug(f"缩放器拟合完成: {scaler.minimum} ~ {scaler.maximum}")
    return scaler


# ─────────────────────────── 滑窗 ───────────────────────────


class WindowIndex:
    """区间内所有 (风机, 起点) 滑窗的惰性索引

    样本 i 对应风机 i // per_turbine 的第 i % per_turbine 个窗口；
    gather 时才真正切出数组，避免一次性物化全量样本。
    """

    def __init__(
        self,
        series: TurbineSeriesSet,
        spec: WindowSpec,
        feature_roles: list[str] | None = None,
        step_range: StepRange | None = None,
    ):
        self.spec = spec
        self.feature_roles = list(feature_roles or DEFAULT_FEATURE_ROLES)
        self.step_range = step_range or series.full_range()
        if self.step_range.stop > series.n_steps:
            raise RangeTooShort(self.step_range.stop, series.n_steps)
        if self.step_range.length < spec.span:
            raise RangeTooShort(spec.span, self.step_range.length)
        for role in self.feature_roles:
            if role not in series.values:
                raise UnknownRole(role)

        self.records_per_day = series.records_per_day
        self.turbine_ids = np.asarray(series.turbine_ids, dtype=np.int64)
        self.features = np.stack([series.role(r) for r in self.feature_roles], axis=-1)
        self.power = series.role(TARGET_ROLE)
        self.valid = series.valid_mask
        self.per_turbine = (self.step_range.length - spec.span) // spec.stride + 1

    def __len__(self) -> int:
        return self.per_turbine * len(self.turbine_ids)

    def starts(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """样本号 -> (风机行号, 输入窗口起点全局步号)"""
        indices = np.asarray(indices, dtype=np.int64)
        rows = indices // self.per_turbine
        offsets = indices % self.per_turbine
        return rows, self.step_range.start + offsets * self.spec.stride

    def gather(self, indices: np.ndarray, dtype=np.float64) -> WindowBatch:
        rows, starts = self.starts(indices)
        in_steps = starts[:, None] + np.arange(self.spec.input_length)
        first_target = starts + self.spec.input_length
        out_steps = first_target[:, None] + np.arange(self.spec.output_length)
        row_col = rows[:, None]
        return WindowBatch(
            inputs=self.features[row_col, in_steps, :].astype(dtype, copy=False),
            targets=self.power[row_col, out_steps],
            target_valid=self.valid[row_col, out_steps],
            start_slot=first_target % self.records_per_day,
            turbine_id=self.turbine_ids[rows],
            target_start=first_target,
            history_power=self.power[row_col, in_steps],
        )

    def gather_all(self, dtype=np.float64) -> WindowBatch:
        return self.gather(np.arange(len(self)), dtype=dtype)


def make_windows(
    series: TurbineSeriesSet,
    spec: WindowSpec,
    feature_roles: list[str] | None = None,
    step_range: StepRange | None = None,
) -> WindowBatch:
    """切出区间内全部滑窗样本

    每台风机样本数 = floor((L - input_length - output_length) / stride) + 1
    """
    return WindowIndex(series, spec, feature_roles, step_range).gather_all()


# ─────────────────────────── 时间划分 ───────────────────────────


def temporal_split(
    series: TurbineSeriesSet,
    train_days: tuple[int, int] = (1, 181),
    validation_days: tuple[int, int] = (231, 245),
) -> tuple[StepRange, StepRange]:
    """按天划分训练/验证区间，两者之间留出间隔以模拟线上的时间先后关系"""
    needed = max(train_days[1], validation_days[1])
    if series.n_days < needed:
        raise InsufficientDays(needed, series.n_days)
    per_day = series.records_per_day
    train = StepRange.from_days(*train_days, records_per_day=per_day)
    validation = StepRange.from_days(*validation_days, records_per_day=per_day)
    logger.info(
        f"时间划分: 训练 第{train_days[0]}-{train_days[1]}天 {train}, "
        f"验证 第{validation_days[0]}-{validation_days[1]}天 {validation}"
    )
    return train, validation
