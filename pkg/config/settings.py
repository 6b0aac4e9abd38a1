"""全局配置管理

一次运行的全部参数收敛到一个 RunConfig：YAML 文件 + 环境变量 (WPF_ 前缀) + 命令行 dotted 覆盖。
默认值对应比赛方案的模型与训练参数，以及验证划分（第 1-181 天训练，第 231-245 天验证）。
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from models.entities import ColumnSchema, ValidityRules, WindowSpec

TARGET_ROLE = "target_power"


# ─────────────────────────── 分段配置 ───────────────────────────


class DataConfig(BaseModel):
    """数据源"""
    path: Path | None = Field(default=None, description="SDWPF 风格 CSV 路径")
    columns: ColumnSchema = Field(default_factory=ColumnSchema)
    validity: ValidityRules = Field(default_factory=ValidityRules)


class PreprocessConfig(BaseModel):
    """预处理与样本切分"""
    feature_roles: list[str] = Field(
        default_factory=lambda: ["wind_speed", "wind_direction"],
        description="输入特征角色（有序）",
    )
    include_target_feature: bool = Field(default=False, description="历史功率是否作为额外输入特征")
    fill_invalid: bool = Field(default=True, description="无效但存在的输入值是否也用前值填充")
    window: WindowSpec = Field(default_factory=WindowSpec)
    train_days: tuple[int, int] = Field(default=(1, 181), description="训练天区间（含端点，1 起）")
    validation_days: tuple[int, int] = Field(default=(231, 245), description="验证天区间（含端点）")

    @model_validator(mode="after")
    def _check(self) -> "PreprocessConfig":
        if TARGET_ROLE in self.feature_roles:
            raise ValueError("目标功率请通过 include_target_feature 开关加入特征")
        for lo, hi in (self.train_days, self.validation_days):
            if lo < 1 or hi < lo:
                raise ValueError(f"非法的天区间: ({lo}, {hi})")
        return self

    def input_roles(self) -> list[str]:
        roles = list(self.feature_roles)
        if self.include_target_feature:
            roles.append(TARGET_ROLE)
        return roles


class ForecasterConfig(BaseModel):
    """BERT 预测器结构"""
    input_length: int = Field(default=288, ge=1)
    output_length: int = Field(default=288, ge=1)
    n_features: int = Field(default=2, ge=1)
    n_encoder_layers: int = Field(default=1, ge=1)
    attn_hidden: int = Field(default=32, ge=1)
    n_heads: int = Field(default=1, ge=1)
    attn_dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    ffn_hidden: int = Field(default=32, ge=1)
    ffn_dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    dense1: int = Field(default=512, ge=1)
    dense1_dropout: float = Field(default=0.25, ge=0.0, lt=1.0)
    dense2: int = Field(default=1024, ge=1)
    dense2_dropout: float = Field(default=0.25, ge=0.0, lt=1.0)
    dense3: int = Field(default=288, ge=1)
    layer_norm_eps: float = Field(default=1e-5, gt=0.0)
    activation: Literal["relu", "tanh"] = "relu"
    dtype: Literal["float32", "float64"] = "float32"
    init_seed: int = 42

    @model_validator(mode="after")
    def _check(self) -> "ForecasterConfig":
        if self.attn_hidden % self.n_heads != 0:
            raise ValueError(f"attn_hidden={self.attn_hidden} 不能被 n_heads={self.n_heads} 整除")
        if self.dense3 != self.output_length:
            raise ValueError(f"dense3={self.dense3} 必须等于 output_length={self.output_length}")
        return self

    @property
    def head_dim(self) -> int:
        return self.attn_hidden // self.n_heads


class TrainConfig(BaseModel):
    """Adam 训练"""
    batch_size: int = Field(default=1024, ge=1)
    epochs: int = Field(default=3, ge=1)
    learning_rate: float = Field(default=0.005, gt=0.0)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    shuffle_seed: int = 2022
    mask_invalid_targets: bool = True
    prefetch_batches: int = Field(default=2, ge=0, description="后台组批队列长度，0 表示同步组批")
    log_every: int = Field(default=50, ge=1)


class PostprocessConfig(BaseModel):
    """日波动后处理"""
    multiplier: float = Field(default=36.0, ge=0.0)
    boost_enabled: bool = True
    boost_factor: float = Field(default=1.1, ge=1.0)
    # 放大阈值没有公认取值，默认取 clamp_max 的一半，需要按数据调
    boost_threshold: float = 810.0
    clamp_enabled: bool = True
    clamp_min: float = 0.0
    clamp_max: float = 1620.0
    center_profile: bool = False

    @model_validator(mode="after")
    def _check(self) -> "PostprocessConfig":
        if self.clamp_max <= self.clamp_min:
            raise ValueError(f"clamp_max={self.clamp_max} 必须大于 clamp_min={self.clamp_min}")
        return self


class EvaluateConfig(BaseModel):
    """回测与打分"""
    n_samples: int = Field(default=195, ge=1)
    aggregation: Literal["sum_over_samples", "mean_over_samples"] = "sum_over_samples"
    unit_divisor: float = Field(default=1000.0, gt=0.0)
    sample_seed: int = 2022
    ignore_mode: Literal["exclude", "zero"] = "exclude"


class PathsConfig(BaseModel):
    """产物路径；相对路径都落在 output_dir 下"""
    output_dir: Path = Path("outputs")
    checkpoint: Path = Path("model.ckpt")
    scaler: Path = Path("scaler.txt")
    profile: Path = Path("profile.txt")
    history: Path = Path("loss_history.csv")
    report: Path = Path("report.csv")
    forecast: Path = Path("forecast.csv")

    def resolve(self, name: str) -> Path:
        path = getattr(self, name)
        return path if path.is_absolute() else self.output_dir / path


# ─────────────────────────── 顶层配置 ───────────────────────────


class RunConfig(BaseSettings):
    """一次运行的完整配置"""

    data: DataConfig = Field(default_factory=DataConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    model: ForecasterConfig = Field(default_factory=ForecasterConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    postprocess: PostprocessConfig = Field(default_factory=PostprocessConfig)
    evaluate: EvaluateConfig = Field(default_factory=EvaluateConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    model_config = SettingsConfigDict(
        env_prefix="WPF_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @model_validator(mode="after")
    def _check_features(self) -> "RunConfig":
        n_inputs = len(self.preprocess.input_roles())
        if self.model.n_features != n_inputs:
            raise ValueError(
                f"model.n_features={self.model.n_features} 与输入特征数 {n_inputs} 不一致"
            )
        window = self.preprocess.window
        if (window.input_length, window.output_length) != (
            self.model.input_length,
            self.model.output_length,
        ):
            raise ValueError("preprocess.window 与 model 的输入/输出长度不一致")
        return self

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False, allow_unicode=True)


# ─────────────────────────── 读写与覆盖 ───────────────────────────


def _set_dotted(data: dict, key: str, value: Any):
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValueError(f"覆盖项 {key} 的前缀 {part} 不是配置段")
    node[parts[-1]] = value


def parse_overrides(items: list[str] | None) -> dict:
    """把 ["train.epochs=5", "model.dtype=float64"] 解析成嵌套 dict，值按 YAML 标量解析"""
    data: dict = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"覆盖项格式应为 key=value: {item}")
        key, raw = item.split("=", 1)
        _set_dotted(data, key.strip(), yaml.safe_load(raw))
    return data


def _deep_merge(base: dict, extra: dict) -> dict:
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def seed_overrides(seed: int) -> dict:
    """--seed N 统一覆盖所有随机种子"""
    return {
        "model": {"init_seed": seed},
        "train": {"shuffle_seed": seed},
        "evaluate": {"sample_seed": seed},
    }


def apply_seed(config: RunConfig, seed: int) -> RunConfig:
    """返回所有随机种子都替换为 seed 的新配置"""
    data = _deep_merge(config.model_dump(mode="json"), seed_overrides(seed))
    return RunConfig(**data)


def load_run_config(
    path: Path | str | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """读取 YAML 配置并依次叠加 --seed 与 dotted 覆盖"""
    data: dict = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(text) or {}
    if seed is not None:
        data = _deep_merge(data, seed_overrides(seed))
    data = _deep_merge(data, parse_overrides(overrides))
    return RunConfig(**data)


def dump_run_config(config: RunConfig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_yaml(), encoding="utf-8")
    return path
