"""反向模式自动微分核心：Tensor / Tape / backward

设计：
- Tensor 是不可变的稠密 numpy 数组包装，requires_grad 标记是否需要梯度
- 前向计算在 `with Tape() as tape:` 内执行时，每个原语把 (输入, 输出, 反向规则) 追加到 tape
- backward 按执行顺序的逆序遍历 tape，每个节点的反向规则恰好执行一次
- Tape 只能 backward 一次；活动 tape 按线程隔离，不同线程可以各自求导
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from models.errors import DetachedLoss, NotScalar, ShapeMismatch, TapeConsumed

BackwardFn = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]

_local = threading.local()
# 负对照用：被列入的原语，其反向规则会被故意放大
_SABOTAGED: set[str] = set()


class Tensor:
    """稠密张量（行主序）"""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        dtype=None,
        copy: bool = True,
    ):
        array = np.array(data, dtype=dtype, copy=copy) if copy else np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        if any(dim == 0 for dim in array.shape):
            raise ShapeMismatch(f"张量各维长度必须 >= 1，实际 {array.shape}")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, "
            f"requires_grad={self.requires_grad})"
        )


class TapeNode:
    """一次原语执行的记录"""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(
        self,
        op: str,
        inputs: tuple[Tensor, ...],
        output: Tensor,
        backward_fn: BackwardFn,
    ):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """按执行顺序记录原语；也是上下文管理器，进入时成为当前线程的活动 tape"""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.consumed = False
        self.rules_applied = 0
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn):
        if self.consumed:
            raise TapeConsumed()
        if op in _SABOTAGED:
            backward_fn = _sabotaged(backward_fn)
        self.nodes.append(TapeNode(op, inputs, output, backward_fn))
        self._outputs.add(id(output))

    def produced(self, tensor: Tensor) -> bool:
        return id(tensor) in self._outputs


def _stack() -> list[Tape]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _sabotaged(backward_fn: BackwardFn) -> BackwardFn:
    def broken(grad: np.ndarray):
        return tuple(None if g is None else g * 1.5 for g in backward_fn(grad))
    return broken


def record(
    op: str,
    inputs: tuple[Tensor, ...],
    out: np.ndarray,
    backward_fn: BackwardFn,
) -> Tensor:
    """包装原语输出；任一输入需要梯度且存在活动 tape 时才记录"""
    output = Tensor(out, copy=False)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        tape.record(op, inputs, output, backward_fn)
    return output


def backward(loss: Tensor, tape: Tape | None = None) -> dict[Tensor, np.ndarray]:
    """从标量损失反传，返回每个叶子张量（requires_grad 且非 tape 输出）的梯度

    同一张量被多次使用时梯度相加；梯度每次调用从零开始累积。
    """
    tape = tape or current_tape()
    if loss.size != 1:
        raise NotScalar(loss.shape)
    if tape is None:
        raise DetachedLoss()
    if tape.consumed:
        raise TapeConsumed()

    if not tape.produced(loss):
        if loss.requires_grad:
            tape.consumed = True
            return {loss: np.ones_like(loss.data)}
        raise DetachedLoss()

    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        upstream = grads.pop(id(node.output), None)
        if upstream is None:
            continue
        tape.rules_applied += 1
        for tensor, grad in zip(node.inputs, node.backward_fn(upstream)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if not tape.produced(tensor):
                leaves[key] = tensor
    return {tensor: grads[key] for key, tensor in leaves.items()}
