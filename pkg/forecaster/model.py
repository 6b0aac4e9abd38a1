"""BERT 风电预测模型

结构（自下而上）：
1. token embedding：逐步仿射到 attn_hidden 维，不加任何位置编码
2. post-norm 编码层：h = LN(x + Dropout(SelfAttn(x)))，out = LN(h + Dropout(FFN(h)))
3. 展平 [input_length × attn_hidden]，让稠密层同时混合时间与特征
4. 三层稠密：dense1 + 激活 + dropout → dense2 + 激活 + dropout → dense3（= 预测步数），输出不加激活

没有位置编码，所以第 1-2 段对时间维的置换是等变的。
"""

from __future__ import annotations

import math

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from autodiff import ops
from autodiff.gradcheck import CheckResult, grad_check
from autodiff.tensor import Tensor
from config.settings import ForecasterConfig
from models.errors import NonFiniteInput, ShapeMismatch


class ForecasterParams(BaseModel):
    """按名字寻址的全部可学习参数"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tensors: dict[str, Tensor]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def total_size(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def replaced(self, arrays: dict[str, np.ndarray]) -> "ForecasterParams":
        """用新数组替换同名参数，返回新的参数集（张量本身不可变）"""
        return ForecasterParams(
            tensors={
                name: Tensor(arrays.get(name, t.data), requires_grad=True, name=name)
                for name, t in self.tensors.items()
            }
        )


# ─────────────────────────── 参数表 ───────────────────────────


def _layer_prefix(index: int) -> str:
    return "" if index == 0 else f"layer{index}."


def param_shapes(config: ForecasterConfig) -> dict[str, tuple[int, ...]]:
    """全部参数名及形状（有序）"""
    d, f = config.attn_hidden, config.ffn_hidden
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (config.n_features, d),
        "embed.b": (d,),
    }
    for i in range(config.n_encoder_layers):
        p = _layer_prefix(i)
        for proj in ("q", "k", "v", "o"):
            shapes[f"{p}attn.w{proj}"] = (d, d)
            shapes[f"{p}attn.b{proj}"] = (d,)
        shapes[f"{p}ln1.gamma"] = (d,)
        shapes[f"{p}ln1.beta"] = (d,)
        shapes[f"{p}ffn.w1"] = (d, f)
        shapes[f"{p}ffn.b1"] = (f,)
        shapes[f"{p}ffn.w2"] = (f, d)
        shapes[f"{p}ffn.b2"] = (d,)
        shapes[f"{p}ln2.gamma"] = (d,)
        shapes[f"{p}ln2.beta"] = (d,)
    shapes.update({
        "head.w1": (config.input_length * d, config.dense1),
        "head.b1": (config.dense1,),
        "head.w2": (config.dense1, config.dense2),
        "head.b2": (config.dense2,),
        "head.w3": (config.dense2, config.dense3),
        "head.b3": (config.dense3,),
    })
    return shapes


def param_count(config: ForecasterConfig) -> int:
    """闭式参数量：各参数元素个数之和"""
    return sum(math.prod(shape) for shape in param_shapes(config).values())


def init_params(config: ForecasterConfig, seed: int | None = None) -> ForecasterParams:
    """Glorot 均匀初始化：权重 U(±sqrt(6/(fan_in+fan_out)))，偏置 0，LN gamma=1 beta=0"""
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    dtype = np.dtype(config.dtype)
    tensors = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            data = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape).astype(dtype)
        tensors[name] = Tensor(data, requires_grad=True, name=name, copy=False)
    return ForecasterParams(tensors=tensors)


# ─────────────────────────── 前向 ───────────────────────────


def _activate(x: Tensor, config: ForecasterConfig) -> Tensor:
    return ops.relu(x) if config.activation == "relu" else ops.tanh(x)


def self_attention(
    params: ForecasterParams,
    prefix: str,
    config: ForecasterConfig,
    x: Tensor,
) -> Tensor:
    """缩放点积自注意力；n_heads=1 时拆头/合头退化为恒等，但仍走通用路径"""
    batch, steps, hidden = x.shape
    heads, head_dim = config.n_heads, config.head_dim

    def split(t: Tensor) -> Tensor:
        return ops.transpose(ops.reshape(t, (batch, steps, heads, head_dim)), (0, 2, 1, 3))

    q = split(ops.affine(x, params[f"{prefix}attn.wq"], params[f"{prefix}attn.bq"]))
    k = split(ops.affine(x, params[f"{prefix}attn.wk"], params[f"{prefix}attn.bk"]))
    v = split(ops.affine(x, params[f"{prefix}attn.wv"], params[f"{prefix}attn.bv"]))

    scores = ops.scale(ops.bmm(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    context = ops.bmm(ops.softmax_lastaxis(scores), v)
    merged = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, steps, hidden))
    return ops.affine(merged, params[f"{prefix}attn.wo"], params[f"{prefix}attn.bo"])


def encoder_layer(
    params: ForecasterParams,
    index: int,
    config: ForecasterConfig,
    x: Tensor,
    training: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    p = _layer_prefix(index)
    eps = config.layer_norm_eps
    attended = ops.dropout(self_attention(params, p, config, x), config.attn_dropout, training, rng)
    h = ops.layer_norm(ops.add(x, attended), params[f"{p}ln1.gamma"], params[f"{p}ln1.beta"], eps)

    ffn = ops.affine(
        _activate(ops.affine(h, params[f"{p}ffn.w1"], params[f"{p}ffn.b1"]), config),
        params[f"{p}ffn.w2"],
        params[f"{p}ffn.b2"],
    )
    ffn = ops.dropout(ffn, config.ffn_dropout, training, rng)
    return ops.layer_norm(ops.add(h, ffn), params[f"{p}ln2.gamma"], params[f"{p}ln2.beta"], eps)


def _as_input(inputs, config: ForecasterConfig) -> Tensor:
    data = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs)
    expected = (config.input_length, config.n_features)
    if data.ndim != 3 or data.shape[1:] != expected:
        raise ShapeMismatch(f"输入应为 [batch, {expected[0]}, {expected[1]}]，实际 {data.shape}")
    if not np.isfinite(data).all():
        raise NonFiniteInput("forward")
    # 调用方传入的数组不能被冻结，只有已是 Tensor 的输入可以共用内存
    return Tensor(data, dtype=np.dtype(config.dtype), copy=not isinstance(inputs, Tensor))


def encode(
    params: ForecasterParams,
    config: ForecasterConfig,
    inputs,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """第 1-2 段：token embedding + 编码层，输出 [batch, input_length, attn_hidden]"""
    x = _as_input(inputs, config)
    h = ops.affine(x, params["embed.w"], params["embed.b"])
    for i in range(config.n_encoder_layers):
        h = encoder_layer(params, i, config, h, training, rng)
    return h


def forward(
    params: ForecasterParams,
    config: ForecasterConfig,
    inputs,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """完整前向，输出 [batch, output_length]，单位 kW（模型内不做截断）"""
    h = encode(params, config, inputs, training, rng)
    batch = h.shape[0]
    flat = ops.reshape(h, (batch, config.input_length * config.attn_hidden))

    d1 = _activate(ops.affine(flat, params["head.w1"], params["head.b1"]), config)
    d1 = ops.dropout(d1, config.dense1_dropout, training, rng)
    d2 = _activate(ops.affine(d1, params["head.w2"], params["head.b2"]), config)
    d2 = ops.dropout(d2, config.dense2_dropout, training, rng)
    return ops.affine(d2, params["head.w3"], params["head.b3"])


# ─────────────────────────── 整模型梯度检查 ───────────────────────────


def reduced_config(**overrides) -> ForecasterConfig:
    """梯度检查 / 单测用的小模型"""
    base = dict(
        input_length=8,
        output_length=8,
        n_features=2,
        attn_hidden=4,
        ffn_hidden=4,
        dense1=8,
        dense2=8,
        dense3=8,
        dtype="float64",
    )
    base.update(overrides)
    return ForecasterConfig(**base)


def model_gradcheck(seed: int = 0, batch: int = 3, eps: float = 1e-5) -> CheckResult:
    """缩小版模型上，对全部参数做 rmse_loss∘forward 的有限差分检查（float64，评估模式）"""
    config = reduced_config()
    params = init_params(config, seed)
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(0, 1, size=(batch, config.input_length, config.n_features))
    target = rng.normal(size=(batch, config.output_length))
    mask = rng.random((batch, config.output_length)) < 0.8
    mask[0, 0] = True
    names = params.names()

    def loss_fn(*tensors: Tensor) -> Tensor:
        local = ForecasterParams(tensors=dict(zip(names, tensors)))
        return ops.rmse_loss(forward(local, config, inputs), target, mask)

    worst = grad_check(loss_fn, [params[n] for n in names], eps)
    result = CheckResult(name="forecaster", max_error=worst, tolerance=1e-4, trials=1)
    level = "INFO" if result.passed else "ERROR"
    logger.log(
        level,
        f"  {'forecaster':<12} max_rel_err={worst:.3e} (tol 1e-04, {params.total_size()} 个参数)",
    )
    return result
