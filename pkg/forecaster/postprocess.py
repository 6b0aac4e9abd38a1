"""日波动后处理

模型输出本身几乎没有日内周期，这里把训练区间上统计出的日内平均功率曲线加回去：
1. 每个日内时段对所有风机、所有天的有效功率求均值
2. min-max 归一化到 [0, 1] 后乘以放大系数（默认 36）
3. 按预测起点所在时段旋转后逐步相加，再对大值放大、截断到 [clamp_min, clamp_max]
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from loguru import logger

from config.settings import TARGET_ROLE, PostprocessConfig
from models.entities import DailyProfile, StepRange, TurbineSeriesSet
from models.errors import EmptySlot, ProfileNotFitted, RangeTooShort


def start_slot_of(global_index, records_per_day: int = 144):
    """首个预测步的日内时段；支持标量和数组"""
    if isinstance(global_index, np.ndarray):
        return np.mod(global_index, records_per_day)
    return int(global_index) % records_per_day


def rotate(values: np.ndarray, k: int) -> np.ndarray:
    """rotate(P, k)[s] == P[(s + k) mod len]"""
    return np.roll(np.asarray(values), -int(k))


def fit_daily_profile(
    series: TurbineSeriesSet,
    fit_range: StepRange,
    config: PostprocessConfig | None = None,
) -> DailyProfile:
    """在 fit_range（至少一整天）上拟合全风场日内曲线；时段 = 全局步号 mod records_per_day"""
    config = config or PostprocessConfig()
    per_day = series.records_per_day
    if fit_range.length < per_day:
        raise RangeTooShort(per_day, fit_range.length)
    if fit_range.stop > series.n_steps:
        raise RangeTooShort(fit_range.stop, series.n_steps)

    window = slice(fit_range.start, fit_range.stop)
    power = series.role(TARGET_ROLE)[:, window]
    valid = series.valid_mask[:, window]

    slots = np.broadcast_to(np.arange(fit_range.start, fit_range.stop) % per_day, power.shape)
    sums = np.bincount(slots[valid], weights=power[valid], minlength=per_day)
    counts = np.bincount(slots[valid], minlength=per_day)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptySlot(int(empty[0]))
    slot_means = sums / counts

    low, high = slot_means.min(), slot_means.max()
    if high > low:
        standardized = (slot_means - low) / (high - low)
    else:
        standardized = np.zeros_like(slot_means)
    values = standardized * config.multiplier
    if config.center_profile:
        values = values - values.mean()

    logger.info(
        f"日波动曲线拟合完成: 区间 [{fit_range.start}, {fit_range.stop}), "
        f"时段均值 {low:.1f}~{high:.1f} kW, 放大系数 {config.multiplier}"
    )
    return DailyProfile(values=values, multiplier=config.multiplier, source_range=fit_range)


def apply_daily_fluctuation(
    pred: np.ndarray,
    start_slot,
    profile: DailyProfile | None,
    config: PostprocessConfig | None = None,
) -> np.ndarray:
    """把日波动加到原始预测上

    Args:
        pred: [horizon] 或 [batch, horizon] 的原始预测 (kW)
        start_slot: 首个预测步的日内时段，标量或 [batch]
        profile: fit_daily_profile 的结果

    Returns:
        与 pred 同形状的调整后预测
    """
    if profile is None:
        raise ProfileNotFitted()
    config = config or PostprocessConfig()
    pred = np.asarray(pred)
    period = len(profile)
    horizon = pred.shape[-1]

    slots = np.asarray(start_slot)
    if np.any((slots < 0) | (slots >= period)):
        raise ValueError(f"start_slot 超出 [0, {period}) 范围: {start_slot}")
    # [..., horizon] 的时段下标
    index = np.mod(slots[..., None] + np.arange(horizon), period)
    adjusted = pred + profile.values[index]

    if config.boost_enabled:
        boosted = adjusted * config.boost_factor
        adjusted = np.where(adjusted > config.boost_threshold, boosted, adjusted)
    if config.clamp_enabled:
        adjusted = np.clip(adjusted, config.clamp_min, config.clamp_max)
    return adjusted


# ─────────────────────────── 持久化 ───────────────────────────


def save_profile(profile: DailyProfile, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"# multiplier {profile.multiplier!r}",
        f"# source_range {profile.source_range.start} {profile.source_range.stop}",
        "# slot value",
    ]
    lines += [f"{slot} {float(value)!r}" for slot, value in enumerate(profile.values)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_profile(path: Path | str) -> DailyProfile:
    multiplier = 36.0
    source = (0, 0)
    values: list[float] = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "multiplier":
                multiplier = float(parts[1])
            elif parts[0] == "source_range":
                source = (int(parts[1]), int(parts[2]))
            continue
        slot, value = line.split()
        if int(slot) != len(values):
            raise ValueError(f"日波动文件时段不连续: 期望 {len(values)}，实际 {slot}")
        values.append(float(value))
    return DailyProfile(
        values=np.array(values, dtype=np.float64),
        multiplier=multiplier,
        source_range=StepRange(start=source[0], stop=source[1]),
    )
