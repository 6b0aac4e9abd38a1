"""有限差分梯度检查

中心差分 (f(x+eps·e) - f(x-eps·e)) / (2·eps) 与 tape 梯度逐元素比较，返回最大相对误差。
绝对差不超过 atol (默认 1e-8) 的元素记误差 0，避免两个都接近 0 的梯度被相对误差放大。
检查必须在 float64 下进行，float32 的差分没有意义。
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from typing import Callable

import numpy as np
from loguru import logger
from pydantic import BaseModel

from autodiff import ops
from autodiff.tensor import _SABOTAGED, Tape, Tensor, backward


class CheckResult(BaseModel):
    name: str
    max_error: float
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


@contextmanager
def sabotage(op: str):
    """临时把某个原语的反向规则放大 1.5 倍，用作检查器的负对照"""
    _SABOTAGED.add(op)
    try:
        yield
    finally:
        _SABOTAGED.discard(op)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.where(diff <= atol, 0.0, diff / np.where(denom == 0, 1.0, denom))
    return float(err.max()) if err.size else 0.0


def grad_check(
    f: Callable[..., Tensor],
    inputs: list[Tensor],
    eps: float = 1e-5,
    atol: float = 1e-8,
) -> float:
    """对所有 requires_grad 的输入做中心差分检查，返回最坏相对误差"""
    if eps <= 0:
        raise ValueError("eps 必须为正")
    with Tape() as tape:
        out = f(*inputs)
    grads = backward(out, tape)

    worst = 0.0
    for position, tensor in enumerate(inputs):
        if not tensor.requires_grad:
            continue
        analytic = grads.get(tensor, np.zeros_like(tensor.data))
        numeric = np.empty(tensor.size, dtype=np.float64)
        base = tensor.data.reshape(-1)
        for i in range(tensor.size):
            values = []
            for sign in (1.0, -1.0):
                bumped = base.copy()
                bumped[i] += sign * eps
                args = list(inputs)
                args[position] = Tensor(bumped.reshape(tensor.shape), copy=False)
                values.append(float(f(*args).data))
            numeric[i] = (values[0] - values[1]) / (2 * eps)
        worst = max(worst, relative_error(analytic.reshape(-1), numeric, atol))
    return worst


# ─────────────────────────── 原语检查套件 ───────────────────────────


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    # relu 在 0 处不可导，样本点与 0 保持距离
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 1e-2, x + np.sign(x + 1e-12) * 0.05, x)


def _projected(op_output: Tensor, weights: np.ndarray) -> Tensor:
    """把张量输出投影成标量：Σ out·R，R 是固定随机权重"""
    return ops.sum_all(ops.mul(op_output, Tensor(weights, copy=False)))


def _case(name: str, rng: np.random.Generator):
    """为某个原语生成 (f, inputs)"""
    dims = lambda n: tuple(int(d) for d in rng.integers(1, 5, size=n))  # noqa: E731

    def param(shape, positive=False):
        data = rng.uniform(0.5, 1.5, size=shape) if positive else rng.normal(size=shape)
        return Tensor(data, requires_grad=True, dtype=np.float64)

    if name == "matmul":
        b_, m, k, n = dims(4)
        a, b = param((b_, m, k)), param((k, n))
        w = rng.normal(size=(b_, m, n))
        return (lambda a, b: _projected(ops.matmul(a, b), w)), [a, b]
    if name == "bmm":
        b_, m, k, n = dims(4)
        a, b = param((b_, m, k)), param((b_, k, n))
        w = rng.normal(size=(b_, m, n))
        return (lambda a, b: _projected(ops.bmm(a, b), w)), [a, b]
    if name == "affine":
        b_, d_in, d_out = dims(3)
        x, w_, bias = param((b_, d_in)), param((d_in, d_out)), param((d_out,))
        w = rng.normal(size=(b_, d_out))
        return (lambda x, w_, bias: _projected(ops.affine(x, w_, bias), w)), [x, w_, bias]
    if name in ("add", "mul"):
        shape = dims(3)
        x, y = param(shape), param(shape)
        w = rng.normal(size=shape)
        fn = getattr(ops, name)
        return (lambda x, y: _projected(fn(x, y), w)), [x, y]
    if name == "scale":
        shape = dims(2)
        c = float(rng.normal())
        w = rng.normal(size=shape)
        return (lambda x: _projected(ops.scale(x, c), w)), [param(shape)]
    if name == "relu":
        shape = dims(3)
        x = Tensor(_away_from_zero(rng, shape), requires_grad=True)
        w = rng.normal(size=shape)
        return (lambda x: _projected(ops.relu(x), w)), [x]
    if name == "tanh":
        shape = dims(2)
        w = rng.normal(size=shape)
        return (lambda x: _projected(ops.tanh(x), w)), [param(shape)]
    if name == "softmax":
        shape = dims(2)
        w = rng.normal(size=shape)
        return (lambda x: _projected(ops.softmax_lastaxis(x), w)), [param(shape)]
    if name == "layer_norm":
        b_, t = dims(2)
        d = int(rng.integers(3, 7))
        x, gamma, beta = param((b_, t, d)), param((d,), positive=True), param((d,))
        w = rng.normal(size=(b_, t, d))
        return (lambda x, g, bt: _projected(ops.layer_norm(x, g, bt, 1e-5), w)), [x, gamma, beta]
    if name == "dropout":
        shape = dims(3)
        seed = int(rng.integers(1 << 31))
        w = rng.normal(size=shape)

        def f(x):
            out = ops.dropout(x, 0.3, True, np.random.default_rng(seed))
            return _projected(out, w)

        return f, [param(shape)]
    if name == "reshape":
        a, b = dims(2)
        w = rng.normal(size=(b, a))
        return (lambda x: _projected(ops.reshape(x, (b, a)), w)), [param((a, b))]
    if name == "transpose":
        shape = dims(3)
        axes = tuple(int(i) for i in rng.permutation(3))
        w = rng.normal(size=tuple(shape[i] for i in axes))
        return (lambda x: _projected(ops.transpose(x, axes), w)), [param(shape)]
    if name == "rmse_loss":
        b_, h = dims(2)
        target = rng.normal(size=(b_, h))
        mask = rng.random((b_, h)) < 0.7
        mask.reshape(-1)[0] = True
        return (lambda p: ops.rmse_loss(p, target, mask)), [param((b_, h))]
    raise KeyError(name)


PRIMITIVE_TOLERANCES = {
    "matmul": 1e-6,
    "bmm": 1e-6,
    "affine": 1e-6,
    "add": 1e-6,
    "mul": 1e-6,
    "scale": 1e-6,
    "relu": 1e-6,
    "tanh": 1e-6,
    "softmax": 1e-6,
    "layer_norm": 1e-5,
    "dropout": 1e-6,
    "reshape": 1e-6,
    "transpose": 1e-6,
    "rmse_loss": 1e-6,
}


def primitive_suite(trials: int = 100, seed: int = 0, eps: float = 1e-5) -> list[CheckResult]:
    """对每个原语跑 trials 组随机形状/随机种子的梯度检查"""
    results = []
    for name, tolerance in PRIMITIVE_TOLERANCES.items():
        worst = 0.0
        for trial in range(trials):
            rng = np.random.default_rng([seed, trial, zlib.crc32(name.encode())])
            f, inputs = _case(name, rng)
            worst = max(worst, grad_check(f, inputs, eps))
        result = CheckResult(name=name, max_error=worst, tolerance=tolerance, trials=trials)
        level = "INFO" if result.passed else "ERROR"
        logger.log(level, f"  {name:<12} max_rel_err={worst:.3e} (tol {tolerance:.0e})")
        results.append(result)
    return results
