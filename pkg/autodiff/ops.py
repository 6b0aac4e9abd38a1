"""可微原语

只覆盖预测模型需要的算子，每个算子给出前向结果与精确的反向规则。
除 affine 的偏置外不做通用广播；形状不符直接抛 ShapeMismatch。
"""

from __future__ import annotations

import numpy as np

from autodiff.tensor import Tensor, record
from models.errors import ElementCountMismatch, EmptyMask, NonFiniteInput, ShapeMismatch


def _swap_last(array: np.ndarray) -> np.ndarray:
    return np.swapaxes(array, -1, -2)


# ─────────────────────────── 线性代数 ───────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a [..., m, k] @ b [k, n]，a 的批维共享同一个 b"""
    if b.data.ndim != 2 or a.data.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    k, n = b.shape

    def backward(grad):
        da = grad @ b.data.T
        db = a.data.reshape(-1, k).T @ grad.reshape(-1, n)
        return da, db

    return record("matmul", (a, b), a.data @ b.data, backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """批矩阵乘 a [..., m, k] @ b [..., k, n]，批维必须完全一致"""
    if (
        a.data.ndim < 2
        or a.data.ndim != b.data.ndim
        or a.shape[:-2] != b.shape[:-2]
        or a.shape[-1] != b.shape[-2]
    ):
        raise ShapeMismatch(f"bmm {a.shape} @ {b.shape}")

    def backward(grad):
        return grad @ _swap_last(b.data), _swap_last(a.data) @ grad

    return record("bmm", (a, b), a.data @ b.data, backward)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x [..., d_in] @ w [d_in, d_out] + b [d_out]"""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"affine x{x.shape} w{w.shape} b{b.shape}")
    d_in, d_out = w.shape

    def backward(grad):
        flat = grad.reshape(-1, d_out)
        dx = grad @ w.data.T
        dw = x.data.reshape(-1, d_in).T @ flat
        db = flat.sum(axis=0)
        return dx, dw, db

    return record("affine", (x, w, b), x.data @ w.data + b.data, backward)


# ─────────────────────────── 逐元素 ───────────────────────────


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeMismatch(f"add {x.shape} + {y.shape}")
    return record("add", (x, y), x.data + y.data, lambda grad: (grad, grad))


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeMismatch(f"mul {x.shape} * {y.shape}")

    def backward(grad):
        return grad * y.data, grad * x.data

    return record("mul", (x, y), x.data * y.data, backward)


def scale(x: Tensor, c: float) -> Tensor:
    factor = x.dtype.type(c)
    return record("scale", (x,), x.data * factor, lambda grad: (grad * factor,))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return record(
        "relu", (x,), np.where(positive, x.data, 0).astype(x.dtype), lambda grad: (grad * positive,)
    )


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record("tanh", (x,), out, lambda grad: (grad * (1 - out * out),))


def sum_all(x: Tensor) -> Tensor:
    def backward(grad):
        return (np.broadcast_to(grad, x.shape).astype(x.dtype),)

    return record("sum_all", (x,), np.asarray(x.data.sum(), dtype=x.dtype), backward)


# ─────────────────────────── 形状 ───────────────────────────


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ElementCountMismatch(f"{x.shape} -> {tuple(shape)}") from None
    return record("reshape", (x,), out, lambda grad: (grad.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeMismatch(f"transpose axes {axes} 不适用于 {x.shape}")
    inverse = tuple(np.argsort(axes))
    return record(
        "transpose", (x,), x.data.transpose(axes), lambda grad: (grad.transpose(inverse),)
    )


# ─────────────────────────── 归一化与注意力 ───────────────────────────


def softmax_lastaxis(x: Tensor) -> Tensor:
    """减去行最大值的数值稳定 softmax"""
    if not np.isfinite(x.data).all():
        raise NonFiniteInput("softmax")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=-1, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), out, backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """最后一维均值/方差（总体方差）归一化后仿射"""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatch(f"layer_norm x{x.shape} gamma{gamma.shape} beta{beta.shape}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = gamma.data * x_hat + beta.data

    def backward(grad):
        lead = tuple(range(grad.ndim - 1))
        dgamma = (grad * x_hat).sum(axis=lead)
        dbeta = grad.sum(axis=lead)
        dx_hat = grad * gamma.data
        dx = (inv_std / d) * (
            d * dx_hat
            - dx_hat.sum(axis=-1, keepdims=True)
            - x_hat * (dx_hat * x_hat).sum(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return record("layer_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), backward)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """inverted dropout：训练时按 rate 置零并把保留元素放大 1/(1-rate)；评估时恒等"""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate 必须在 [0, 1) 内: {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("训练模式的 dropout 需要随机数生成器")
    keep = (rng.random(x.shape) >= rate) * x.dtype.type(1.0 / (1.0 - rate))
    keep = keep.astype(x.dtype, copy=False)
    return record("dropout", (x,), x.data * keep, lambda grad: (grad * keep,))


# ─────────────────────────── 损失 ───────────────────────────


def rmse_loss(pred: Tensor, target, mask: np.ndarray, eps_loss: float = 1e-8) -> Tensor:
    """sqrt(Σ mask·(pred-target)² / Σ mask + eps_loss)

    掩码外的位置（包括其中的 NaN）对损失和梯度都没有任何影响。
    """
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeMismatch(f"rmse_loss pred{pred.shape} target{target.shape} mask{mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMask()
    diff = np.where(mask, pred.data - np.where(mask, target, 0), 0).astype(pred.dtype, copy=False)
    loss = np.sqrt((diff * diff).sum() / count + eps_loss)

    def backward(grad):
        return (grad * diff / (count * loss),)

    return record("rmse_loss", (pred,), np.asarray(loss, dtype=pred.dtype), backward)
