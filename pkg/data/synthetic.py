"""合成风电数据

生成与 SDWPF 同格式的 CSV，保证没有真实数据时整条流水线也能跑通：
- 风速 = 基准风速 + 日周期正弦 + AR(1) 噪声，正弦幅值按功率曲线斜率换算，使功率日波动约为 daily_amplitude
- 功率 = 分段线性功率曲线(风速) + 高斯噪声，截断到 [idle_power, rated_power]
- 风向 = 缓慢随机游走，取模 360
- 按 invalid_fraction 注入无效步：一半把功率置 0，一半把功率单元格留空

同一个 seed 输出逐字节相同的 CSV。
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from ingestion.loader import load_csv
from models.entities import ColumnSchema, TurbineSeriesSet

RECORDS_PER_DAY = 144


class SynthSpec(BaseModel):
    """合成数据规格"""
    n_turbines: int = Field(default=2, ge=1)
    n_days: int = Field(default=60, ge=1)
    seed: int = 2022
    daily_amplitude: float = Field(default=400.0, ge=0.0, description="功率日波动半幅 (kW)")
    noise_std: float = Field(default=30.0, ge=0.0, description="功率噪声标准差 (kW)")
    base_wind_speed: float = Field(default=7.5, gt=0.0, description="m/s")
    wind_noise_std: float = Field(default=0.3, ge=0.0, description="AR(1) 新息标准差 (m/s)")
    wind_noise_phi: float = Field(default=0.9, ge=0.0, lt=1.0)
    turbine_speed_spread: float = Field(default=0.5, ge=0.0, description="各风机基准风速偏移上限")
    direction_step_std: float = Field(default=2.0, ge=0.0, description="风向每步随机游走 (度)")
    cut_in_speed: float = Field(default=3.0, ge=0.0)
    rated_speed: float = Field(default=12.0, gt=0.0)
    rated_power: float = Field(default=1500.0, gt=0.0, le=1620.0)
    idle_power: float = Field(default=1.0, gt=0.0, description="切入风速以下的最小功率，保证有效步功率 > 0")
    invalid_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check(self) -> "SynthSpec":
        if self.rated_speed <= self.cut_in_speed:
            raise ValueError("rated_speed 必须大于 cut_in_speed")
        if self.idle_power >= self.rated_power:
            raise ValueError("idle_power 必须小于 rated_power")
        return self

    @property
    def curve_slope(self) -> float:
        """功率曲线线性段斜率 (kW per m/s)"""
        return (self.rated_power - self.idle_power) / (self.rated_speed - self.cut_in_speed)

    @property
    def speed_amplitude(self) -> float:
        return self.daily_amplitude / self.curve_slope


def power_curve(wind_speed: np.ndarray, spec: SynthSpec) -> np.ndarray:
    """切入前为 idle_power，切入到额定之间线性上升，额定风速以上饱和"""
    fraction = (np.asarray(wind_speed) - spec.cut_in_speed) / (spec.rated_speed - spec.cut_in_speed)
    return spec.idle_power + (spec.rated_power - spec.idle_power) * np.clip(fraction, 0.0, 1.0)


def daily_wave(spec: SynthSpec) -> np.ndarray:
    """风速的日周期分量，[144]"""
    slots = np.arange(RECORDS_PER_DAY)
    return spec.speed_amplitude * np.sin(2 * np.pi * slots / RECORDS_PER_DAY - np.pi / 2)


def expected_daily_power(spec: SynthSpec) -> np.ndarray:
    """不含噪声时的日内功率曲线，用来检验生成数据的周期性"""
    return power_curve(spec.base_wind_speed + daily_wave(spec), spec)


def _ar_noise(rng: np.random.Generator, shape: tuple[int, int], phi: float, std: float):
    shocks = rng.normal(0.0, std, size=shape)
    noise = np.empty(shape)
    noise[:, 0] = shocks[:, 0] / np.sqrt(1 - phi * phi)
    for step in range(1, shape[1]):
        noise[:, step] = phi * noise[:, step - 1] + shocks[:, step]
    return noise


def generate_frame(spec: SynthSpec, schema: ColumnSchema | None = None) -> pd.DataFrame:
    """生成长表 DataFrame，行按 (风机, 天, 时段) 排序"""
    schema = schema or ColumnSchema()
    rng = np.random.default_rng(spec.seed)
    n_steps = spec.n_days * RECORDS_PER_DAY
    shape = (spec.n_turbines, n_steps)

    spread = spec.turbine_speed_spread
    offsets = rng.uniform(-spread, spread, size=(spec.n_turbines, 1))
    wave = np.tile(daily_wave(spec), spec.n_days)
    noise = _ar_noise(rng, shape, spec.wind_noise_phi, spec.wind_noise_std)
    speed = np.maximum(spec.base_wind_speed + offsets + wave + noise, 0.0)

    power = power_curve(speed, spec) + rng.normal(0.0, spec.noise_std, size=shape)
    power = np.clip(power, spec.idle_power, spec.rated_power)

    start = rng.uniform(0.0, 360.0, size=(spec.n_turbines, 1))
    walk = np.cumsum(rng.normal(0.0, spec.direction_step_std, size=shape), axis=1)
    direction = np.mod(start + walk, 360.0)

    speed, direction, power = (np.round(a, 2) for a in (speed, direction, power))
    invalid = rng.random(shape) < spec.invalid_fraction
    blank = rng.random(shape) < 0.5
    power = np.where(invalid & blank, np.nan, np.where(invalid, 0.0, power))

    steps = np.arange(n_steps)
    minutes = (steps % RECORDS_PER_DAY) * 10
    clock = np.array([f"{m // 60:02d}:{m % 60:02d}" for m in minutes])
    role_map = schema.role_map
    frame = pd.DataFrame({
        schema.turbine_id_column: np.repeat(np.arange(1, spec.n_turbines + 1), n_steps),
        schema.day_column: np.tile(steps // RECORDS_PER_DAY + 1, spec.n_turbines),
        schema.time_of_day_column: np.tile(clock, spec.n_turbines),
        role_map["wind_speed"]: speed.reshape(-1),
        role_map["wind_direction"]: direction.reshape(-1),
        role_map["target_power"]: power.reshape(-1),
    })
    logger.debug(
        f"合成数据: {spec.n_turbines} 台风机 × {spec.n_days} 天, "
        f"无效步 {int(invalid.sum())} 个 (其中留空 {int((invalid & blank).sum())})"
    )
    return frame


def write_csv(spec: SynthSpec, path: Path | str, schema: ColumnSchema | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = generate_frame(spec, schema)
    frame.to_csv(path, index=False, float_format="%.2f", na_rep="", lineterminator="\n")
    logger.info(f"合成数据已写入 {path} ({len(frame)} 行)")
    return path


def generate(
    spec: SynthSpec,
    path: Path | str,
    schema: ColumnSchema | None = None,
) -> TurbineSeriesSet:
    """写出 CSV 并按同一方言读回"""
    write_csv(spec, path, schema)
    return load_csv(path, schema)
