"""数据读取 - 将 SDWPF 风格 CSV 对齐到稠密 (天, 时段) 网格

CSV 约定：逗号分隔、首行为表头、UTF-8；时间列为 HH:MM，且落在 10 分钟网格上；
每个 (风机, 天, 时段) 至多一行。网格上没有对应行的位置，和空单元格一样视为缺失。
"""

import re
from pathlib import Path

import numpy as np
import pandas as pd
from loguru import logger

from models.entities import ColumnSchema, TurbineSeriesSet, ValidityRules
from models.errors import ArtifactMissing, DuplicateRow, MalformedRow, MissingColumn, UnknownRole

_TIME_PATTERN = re.compile(r"^(\d{1,2}):(\d{2})$")


def _first_bad_line(bad: pd.Series) -> int:
    # 表头占第 1 行
    return int(bad.idxmax()) + 2


def _parse_positive_int(column: pd.Series, what: str) -> np.ndarray:
    numeric = pd.to_numeric(column.str.strip(), errors="coerce")
    bad = numeric.isna() | (numeric % 1 != 0) | (numeric <= 0 if what == "day" else numeric < 0)
    if bad.any():
        raise MalformedRow(_first_bad_line(bad), f"({what}={column[bad].iloc[0]!r})")
    return numeric.to_numpy(dtype=np.int64)


def _parse_slots(column: pd.Series, interval_minutes: int) -> np.ndarray:
    """HH:MM -> 日内时段号"""
    slots = np.empty(len(column), dtype=np.int64)
    for i, text in enumerate(column):
        match = _TIME_PATTERN.match(text.strip())
        if match is None:
            raise MalformedRow(i + 2, f"(time={text!r})")
        hours, minutes = int(match.group(1)), int(match.group(2))
        if hours >= 24 or minutes >= 60 or minutes % interval_minutes != 0:
            raise MalformedRow(i + 2, f"(time={text!r} 不在 {interval_minutes} 分钟网格上)")
        slots[i] = (hours * 60 + minutes) // interval_minutes
    return slots


def _parse_values(column: pd.Series) -> np.ndarray:
    """数值列：空或非数值 -> NaN；可解析的单元格按 Python float 精确转换"""
    text = column.str.strip()
    parsed = pd.to_numeric(text, errors="coerce")
    out = np.full(len(text), np.nan, dtype=np.float64)
    ok = parsed.notna().to_numpy()
    out[ok] = text[ok].astype(np.float64).to_numpy()
    return out


def load_csv(
    path: Path | str,
    schema: ColumnSchema | None = None,
    interval_minutes: int = 10,
) -> TurbineSeriesSet:
    """读取 CSV 并重排到稠密网格

    Returns:
        present_mask 为假的位置：没有对应行，或目标功率单元格为空/非数值。
        valid_mask 初始等于 present_mask，需再经 flag_invalid 施加规则。
    """
    schema = schema or ColumnSchema()
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissing(str(path))

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise MissingColumn(schema.turbine_id_column) from None

    for column in schema.columns():
        if column not in frame.columns:
            raise MissingColumn(column)
    if frame.empty:
        raise MalformedRow(2, "(文件没有数据行)")

    records_per_day = 24 * 60 // interval_minutes
    turbines = _parse_positive_int(frame[schema.turbine_id_column], "turbine")
    days = _parse_positive_int(frame[schema.day_column], "day")
    slots = _parse_slots(frame[schema.time_of_day_column], interval_minutes)

    keys = pd.DataFrame({"t": turbines, "d": days, "s": slots})
    dup = keys.duplicated(keep="first")
    if dup.any():
        i = int(np.argmax(dup.to_numpy()))
        raise DuplicateRow(
            int(turbines[i]), int(days[i]), frame[schema.time_of_day_column].iloc[i].strip()
        )

    turbine_ids = np.unique(turbines)
    n_steps = int(days.max()) * records_per_day
    rows = np.searchsorted(turbine_ids, turbines)
    steps = (days - 1) * records_per_day + slots
    shape = (len(turbine_ids), n_steps)

    values: dict[str, np.ndarray] = {}
    for role, column in schema.role_map.items():
        grid = np.full(shape, np.nan, dtype=np.float64)
        grid[rows, steps] = _parse_values(frame[column])
        values[role] = grid

    present = np.zeros(shape, dtype=bool)
    present[rows, steps] = True
    present &= ~np.isnan(values["target_power"])

    series = TurbineSeriesSet(
        turbine_ids=[int(t) for t in turbine_ids],
        interval_minutes=interval_minutes,
        records_per_day=records_per_day,
        values=values,
        present_mask=present,
        valid_mask=present.copy(),
    )
    logger.info(
        f"读取 {path.name}: {series.n_turbines} 台风机, {series.n_days} 天, "
        f"{len(frame)} 行 -> 网格 {shape}"
    )
    return series


def flag_invalid(series: TurbineSeriesSet, rules: ValidityRules | None = None) -> TurbineSeriesSet:
    """按规则计算 valid_mask = present_mask AND 全部规则通过；数值本身不变"""
    rules = rules or ValidityRules()
    for predicate in rules.extra_predicates:
        if predicate.role not in series.values:
            raise UnknownRole(predicate.role)

    valid = series.present_mask.copy()
    if rules.treat_missing_invalid:
        for array in series.values.values():
            valid &= ~np.isnan(array)
    if rules.treat_nonpositive_target_invalid:
        with np.errstate(invalid="ignore"):
            valid &= series.values["target_power"] > 0
    for predicate in rules.extra_predicates:
        valid &= predicate.evaluate(series.values[predicate.role])

    flagged = series.replace(valid_mask=valid)
    logger.debug(f"有效性标记: {int(valid.sum())}/{valid.size} 步有效")
    return flagged


def summarize_series(series: TurbineSeriesSet) -> dict:
    """数据集概要：风机数、天数、各角色缺失率与整体无效率"""
    total = series.present_mask.size
    summary = {
        "n_turbines": series.n_turbines,
        "n_days": series.n_days,
        "n_steps": series.n_steps,
        "valid_target_steps": int(series.valid_mask.sum()),
        "invalid_pct": round(100.0 * (1 - series.valid_mask.sum() / total), 3),
        "missing_pct": {},
    }
    for role, array in series.values.items():
        summary["missing_pct"][role] = round(100.0 * float(np.isnan(array).sum()) / total, 3)
    return summary
