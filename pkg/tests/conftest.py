"""公共测试夹具：小型合成数据、手工构造的序列与缩小版配置"""

from pathlib import Path

import numpy as np
import pytest
from loguru import logger

from config.settings import RunConfig
from data.synthetic import SynthSpec, write_csv
from forecaster.model import reduced_config
from ingestion.loader import flag_invalid, load_csv
from models.entities import TurbineSeriesSet

HEADER = "TurbID,Day,Tmstamp,Wspd,Wdir,Patv"


@pytest.fixture(autouse=True)
def _quiet_logger():
    # CLI 会给 loguru 挂文件 sink，每个用例结束后统一卸掉
    logger.remove()
    yield
    logger.remove()


def write_csv_rows(path: Path, rows: list[str], header: str = HEADER) -> Path:
    path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
    return path


def make_series(
    values: dict[str, np.ndarray],
    valid: np.ndarray | None = None,
    present: np.ndarray | None = None,
    records_per_day: int = 144,
) -> TurbineSeriesSet:
    """直接由数组构造序列；缺省 present = 目标非 NaN，valid = present"""
    values = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}
    n_turbines = next(iter(values.values())).shape[0]
    if present is None:
        present = ~np.isnan(values["target_power"])
    if valid is None:
        valid = present.copy()
    return TurbineSeriesSet(
        turbine_ids=list(range(1, n_turbines + 1)),
        records_per_day=records_per_day,
        values=values,
        present_mask=present,
        valid_mask=valid & present,
    )


@pytest.fixture
def tiny_spec() -> SynthSpec:
    return SynthSpec(n_turbines=2, n_days=6, seed=7)


@pytest.fixture
def synth_csv(tmp_path, tiny_spec) -> Path:
    return write_csv(tiny_spec, tmp_path / "synth.csv")


@pytest.fixture
def synth_series(synth_csv) -> TurbineSeriesSet:
    return flag_invalid(load_csv(synth_csv))


@pytest.fixture
def small_model_config():
    return reduced_config(input_length=16, output_length=16, dense3=16)


def small_run_config(data_path: Path, output_dir: Path, **sections) -> RunConfig:
    """2 台风机 × 6 天的合成数据上能在几秒内跑完的完整配置"""
    data = {
        "data": {"path": str(data_path)},
        "preprocess": {
            "window": {"input_length": 16, "output_length": 16, "stride": 1},
            "train_days": [1, 4],
            "validation_days": [5, 6],
        },
        "model": {
            "input_length": 16,
            "output_length": 16,
            "attn_hidden": 4,
            "ffn_hidden": 4,
            "dense1": 8,
            "dense2": 8,
            "dense3": 16,
            "dtype": "float64",
        },
        "train": {"batch_size": 128, "epochs": 2},
        "evaluate": {"n_samples": 5},
        "paths": {"output_dir": str(output_dir)},
    }
    for section, values in sections.items():
        data.setdefault(section, {}).update(values)
    return RunConfig(**data)


@pytest.fixture
def run_config(synth_csv, tmp_path) -> RunConfig:
    return small_run_config(synth_csv, tmp_path / "outputs")
