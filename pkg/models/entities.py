"""风电预测领域模型定义

数据约定：
- 全局步号 step = (day - 1) * records_per_day + 日内时段 slot，10 分钟一个时段，一天 144 个
- TurbineSeriesSet 内每个角色一张 [风机, 步] 的 float64 矩阵，缺失值为 NaN
- present_mask：该步记录存在且目标功率解析成功；valid_mask：再叠加有效性规则，恒为 present_mask 的子集
- 角色 (role) 是语义名：wind_speed / wind_direction / target_power 以及任意附加列
"""

from __future__ import annotations

import operator
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from models.errors import UnknownRole

CORE_ROLES = ("wind_speed", "wind_direction", "target_power")

_COMPARATORS = {
    ">": operator.gt,
    ">=": operator.ge,
    "<": operator.lt,
    "<=": operator.le,
    "==": operator.eq,
    "!=": operator.ne,
}


# ─────────────────────────── 数据读取 ───────────────────────────


class ColumnSchema(BaseModel):
    """CSV 列名与语义角色的映射

    默认只映射三个核心角色；完整的 SDWPF 十参数表头见 sdwpf()。
    """
    turbine_id_column: str = "TurbID"
    day_column: str = "Day"
    time_of_day_column: str = Field(default="Tmstamp", description="HH:MM")
    role_map: dict[str, str] = Field(
        default_factory=lambda: {
            "wind_speed": "Wspd",
            "wind_direction": "Wdir",
            "target_power": "Patv",
        },
        description="语义角色 -> 列名",
    )

    @model_validator(mode="after")
    def _check(self) -> "ColumnSchema":
        missing = [r for r in CORE_ROLES if r not in self.role_map]
        if missing:
            raise ValueError(f"role_map 缺少核心角色: {missing}")
        columns = self.columns()
        if len(set(columns)) != len(columns):
            raise ValueError(f"列映射存在重复列: {columns}")
        return self

    @classmethod
    def sdwpf(cls) -> "ColumnSchema":
        """公开 SDWPF 文件的全部十个参数"""
        return cls(
            role_map={
                "wind_speed": "Wspd",
                "wind_direction": "Wdir",
                "ext_temperature": "Etmp",
                "int_temperature": "Itmp",
                "nacelle_direction": "Ndir",
                "pitch1": "Pab1",
                "pitch2": "Pab2",
                "pitch3": "Pab3",
                "reactive_power": "Prtv",
                "target_power": "Patv",
            }
        )

    def columns(self) -> list[str]:
        return [
            self.turbine_id_column,
            self.day_column,
            self.time_of_day_column,
            *self.role_map.values(),
        ]


class Predicate(BaseModel):
    """逐步谓词 (role, comparison, threshold)：为真表示该步通过检查；NaN 一律不通过"""
    role: str
    comparison: Literal[">", ">=", "<", "<=", "==", "!="]
    threshold: float

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return _COMPARATORS[self.comparison](values, self.threshold)


class ValidityRules(BaseModel):
    """有效性规则，对应评测中的"零值、缺失值、未知值" """
    treat_missing_invalid: bool = Field(
        default=True, description="任一映射列缺失的步记为无效"
    )
    treat_nonpositive_target_invalid: bool = Field(
        default=True, description="目标功率 <= 0 的步记为无效"
    )
    extra_predicates: list[Predicate] = Field(default_factory=list)


class StepRange(BaseModel):
    """全局步号左闭右开区间 [start, stop)"""
    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=0)
    stop: int = Field(ge=0)

    @model_validator(mode="after")
    def _check(self) -> "StepRange":
        if self.stop < self.start:
            raise ValueError(f"区间终点 {self.stop} 小于起点 {self.start}")
        return self

    @property
    def length(self) -> int:
        return self.stop - self.start

    @classmethod
    def from_days(cls, first_day: int, last_day: int, records_per_day: int = 144) -> "StepRange":
        """天区间（1 起，含两端）换算成步区间"""
        return cls(start=(first_day - 1) * records_per_day, stop=last_day * records_per_day)


class TurbineSeriesSet(BaseModel):
    """多风机对齐时间序列，构造后不可变"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    turbine_ids: list[int]
    interval_minutes: int = 10
    records_per_day: int = 144
    values: dict[str, np.ndarray] = Field(description="role -> [n_turbines, n_steps] float64")
    present_mask: np.ndarray = Field(description="[n_turbines, n_steps] bool")
    valid_mask: np.ndarray = Field(description="[n_turbines, n_steps] bool")

    @model_validator(mode="after")
    def _check(self) -> "TurbineSeriesSet":
        shape = (len(self.turbine_ids), self.present_mask.shape[-1])
        if self.present_mask.shape != shape or self.valid_mask.shape != shape:
            raise ValueError(f"掩码形状应为 {shape}")
        for role, array in self.values.items():
            if array.shape != shape:
                raise ValueError(f"角色 {role} 的形状 {array.shape} 与 {shape} 不一致")
        if shape[1] % self.records_per_day != 0:
            raise ValueError(f"序列长度 {shape[1]} 不是 {self.records_per_day} 的整数倍")
        if np.any(self.valid_mask & ~self.present_mask):
            raise ValueError("valid_mask 必须是 present_mask 的子集")
        for array in (*self.values.values(), self.present_mask, self.valid_mask):
            array.setflags(write=False)
        return self

    @property
    def n_turbines(self) -> int:
        return len(self.turbine_ids)

    @property
    def n_steps(self) -> int:
        return int(self.present_mask.shape[1])

    @property
    def n_days(self) -> int:
        return self.n_steps // self.records_per_day

    @property
    def roles(self) -> list[str]:
        return list(self.values)

    def role(self, name: str) -> np.ndarray:
        if name not in self.values:
            raise UnknownRole(name)
        return self.values[name]

    def replace(self, **updates) -> "TurbineSeriesSet":
        """返回替换部分字段后的新对象（重新校验）"""
        fields = {
            "turbine_ids": self.turbine_ids,
            "interval_minutes": self.interval_minutes,
            "records_per_day": self.records_per_day,
            "values": self.values,
            "present_mask": self.present_mask,
            "valid_mask": self.valid_mask,
        }
        fields.update(updates)
        return TurbineSeriesSet(**fields)

    def full_range(self) -> StepRange:
        return StepRange(start=0, stop=self.n_steps)


# ─────────────────────────── 样本 ───────────────────────────


class WindowSpec(BaseModel):
    """滑窗规格"""
    input_length: int = Field(default=288, gt=0)
    output_length: int = Field(default=288, gt=0)
    stride: int = Field(default=1, gt=0)

    @property
    def span(self) -> int:
        return self.input_length + self.output_length


class WindowBatch(BaseModel):
    """一批滑窗样本"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    inputs: np.ndarray = Field(description="[batch, input_length, n_features]")
    targets: np.ndarray = Field(description="[batch, output_length]，原始功率 kW")
    target_valid: np.ndarray = Field(description="[batch, output_length] bool")
    start_slot: np.ndarray = Field(description="[batch] 首个预测步的日内时段")
    turbine_id: np.ndarray = Field(description="[batch]")
    target_start: np.ndarray = Field(description="[batch] 首个预测步的全局步号")
    history_power: np.ndarray = Field(description="[batch, input_length] 输入窗口内（填充后）的功率")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])


# ─────────────────────────── 后处理 ───────────────────────────


class DailyProfile(BaseModel):
    """日内波动曲线：每个时段一个值，已归一化到 [0,1] 并乘以放大系数"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    multiplier: float = 36.0
    source_range: StepRange

    @model_validator(mode="after")
    def _check(self) -> "DailyProfile":
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("日波动曲线必须是非空一维数组")
        self.values.setflags(write=False)
        return self

    def __len__(self) -> int:
        return int(self.values.size)


# ─────────────────────────── 评估 ───────────────────────────


class TurbineMetric(BaseModel):
    turbine_id: int
    mae: float
    rmse: float
    score: float


class SampleRow(BaseModel):
    """报告 CSV 的一行；turbine_id == "ALL" 为聚合行"""
    sample_id: int | str
    turbine_id: int | str
    mae: float
    rmse: float
    score: float


class MetricReport(BaseModel):
    """单个预测器（模型或基线）的回测结果"""
    name: str
    per_turbine: list[TurbineMetric] = Field(default_factory=list)
    farm_score: float = 0.0
    n_samples: int = 0
    aggregation: Literal["sum_over_samples", "mean_over_samples"] = "sum_over_samples"
    unit_divisor: float = 1000.0
    sample_scores: list[float] = Field(default_factory=list, description="每个样本的风场得分")
    rows: list[SampleRow] = Field(default_factory=list, description="逐样本逐风机明细")
