"""Adam 训练

- 所有风机的滑窗样本混在一起训练一个全局模型，每个 epoch 用 shuffle_seed + epoch 打乱
- 每个 batch：训练模式前向 → 带 target_valid 掩码的 RMSE → 反传 → Adam 更新
- 最后一个不满的 batch 保留；全无有效目标的 batch 跳过并计数
- 不做学习率调度、梯度裁剪与早停；损失非有限时直接中止
"""

from __future__ import annotations

import queue
import threading
from typing import Iterator

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from autodiff import ops
from autodiff.tensor import Tape, backward
from config.settings import ForecasterConfig, TrainConfig
from forecaster.model import ForecasterParams, forward, init_params
from ingestion.preprocess import WindowIndex
from models.entities import StepRange, TurbineSeriesSet, WindowBatch, WindowSpec
from models.errors import NoTrainingData, NonFiniteLoss, RangeTooShort, ShapeMismatch


class AdamState(BaseModel):
    """每个参数的一阶矩 m、二阶矩 v 与步数 t"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = Field(default=0, ge=0)

    @classmethod
    def fresh(cls, params: ForecasterParams) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params},
            v={name: np.zeros_like(t.data) for name, t in params},
        )


class FitResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ForecasterParams
    state: AdamState
    loss_history: list[float]
    steps: int
    skipped_batches: int


def adam_step(
    params: ForecasterParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[ForecasterParams, AdamState]:
    """一步 Adam（带偏差修正），返回新的参数与状态，不修改入参"""
    t = state.t + 1
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t

    new_values, new_m, new_v = {}, {}, {}
    for name, tensor in params:
        if name not in grads:
            raise ShapeMismatch(f"缺少参数 {name} 的梯度")
        g = grads[name]
        if g.shape != tensor.shape or state.m[name].shape != tensor.shape:
            raise ShapeMismatch(
                f"{name}: 参数 {tensor.shape}, 梯度 {g.shape}, m {state.m[name].shape}"
            )
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_values[name] = (tensor.data - update).astype(tensor.dtype, copy=False)
        new_m[name] = m.astype(tensor.dtype, copy=False)
        new_v[name] = v.astype(tensor.dtype, copy=False)
    return params.replaced(new_values), AdamState(m=new_m, v=new_v, t=t)


# ─────────────────────────── 组批 ───────────────────────────


def _batch_stream(
    index: WindowIndex,
    batches: list[np.ndarray],
    dtype,
    prefetch: int,
) -> Iterator[WindowBatch]:
    """按给定顺序产出 batch；prefetch > 0 时由后台线程经有界队列提前组批，顺序不变"""
    if prefetch == 0:
        for ids in batches:
            yield index.gather(ids, dtype=dtype)
        return

    hand_off: queue.Queue = queue.Queue(maxsize=prefetch)
    done = object()
    stop = threading.Event()

    def produce():
        try:
            for ids in batches:
                if stop.is_set():
                    return
                hand_off.put(index.gather(ids, dtype=dtype))
            hand_off.put(done)
        except Exception as e:  # 交给消费者线程抛出
            hand_off.put(e)

    worker = threading.Thread(target=produce, name="batch-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = hand_off.get()
            if item is done:
                break
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop.set()
        while worker.is_alive():
            try:
                hand_off.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.05)


def _loss_mask(batch: WindowBatch, config: TrainConfig) -> np.ndarray:
    if config.mask_invalid_targets:
        return batch.target_valid
    return np.isfinite(batch.targets)


# ─────────────────────────── 训练主循环 ───────────────────────────


def fit(
    series: TurbineSeriesSet,
    splits: tuple[StepRange, StepRange] | StepRange,
    model_config: ForecasterConfig,
    train_config: TrainConfig,
    feature_roles: list[str] | None = None,
    params: ForecasterParams | None = None,
    stride: int = 1,
) -> FitResult:
    """在训练区间上训练模型

    Args:
        series: 已填充、已缩放的序列
        splits: (训练区间, 验证区间) 或单独的训练区间
        model_config: 模型结构
        train_config: 训练超参
        feature_roles: 输入特征角色，顺序即特征维顺序
        params: 续训时的初始参数，None 则按 init_seed 初始化
    """
    train_range = splits[0] if isinstance(splits, tuple) else splits
    spec = WindowSpec(
        input_length=model_config.input_length,
        output_length=model_config.output_length,
        stride=stride,
    )
    try:
        index = WindowIndex(series, spec, feature_roles, train_range)
    except RangeTooShort as e:
        raise NoTrainingData(str(e)) from e

    if params is None:
        params = init_params(model_config)
    state = AdamState.fresh(params)
    dtype = np.dtype(model_config.dtype)
    n_samples = len(index)
    batch_size = train_config.batch_size

    logger.info("=" * 60)
    logger.info(
        f"开始训练: {n_samples} 个样本, batch={batch_size}, epochs={train_config.epochs}, "
        f"lr={train_config.learning_rate}, 参数量={params.total_size()}"
    )
    logger.info("=" * 60)

    history: list[float] = []
    skipped = 0
    step = 0
    for epoch in range(train_config.epochs):
        order = np.random.default_rng(train_config.shuffle_seed + epoch).permutation(n_samples)
        batches = [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]
        losses = []
        stream = _batch_stream(index, batches, dtype, train_config.prefetch_batches)
        for b, batch in enumerate(stream):
            mask = _loss_mask(batch, train_config)
            if not mask.any():
                skipped += 1
                logger.warning(f"  epoch {epoch + 1} batch {b}: 没有有效目标，跳过")
                continue

            rng = np.random.default_rng([train_config.shuffle_seed, epoch, b])
            targets = batch.targets.astype(dtype, copy=False)
            with Tape() as tape:
                pred = forward(params, model_config, batch.inputs, training=True, rng=rng)
                loss = ops.rmse_loss(pred, targets, mask)
            value = loss.item()
            if not np.isfinite(value):
                raise NonFiniteLoss(step, {
                    "epoch": epoch + 1,
                    "batch": b,
                    "loss": value,
                    "max_abs_input": float(np.abs(batch.inputs).max()),
                    "max_abs_pred": float(np.nanmax(np.abs(pred.data))),
                    "valid_targets": int(mask.sum()),
                })

            grads = backward(loss, tape)
            named = {name: grads[tensor] for name, tensor in params}
            params, state = adam_step(params, named, state, train_config)
            losses.append(value)
            step += 1
            if step % train_config.log_every == 0:
                logger.debug(f"  step {step} epoch {epoch + 1} batch {b}: loss={value:.4f}")

        if not losses:
            raise NoTrainingData(f"第 {epoch + 1} 个 epoch 所有 batch 都没有有效目标")
        history.append(float(np.mean(losses)))
        logger.info(
            f"[epoch {epoch + 1}/{train_config.epochs}] 平均损失 {history[-1]:.4f} "
            f"({len(losses)} 个 batch)"
        )

    if skipped:
        logger.warning(f"共跳过 {skipped} 个没有有效目标的 batch")
    return FitResult(
        params=params,
        state=state,
        loss_history=history,
        steps=step,
        skipped_batches=skipped,
    )
