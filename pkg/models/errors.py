"""异常定义

所有业务异常都继承 ForecastError，CLI 只需捕获这一个基类即可决定退出码。
异常携带的上下文（列名、行号、步数等）作为属性保留，便于测试与日志。
"""

from __future__ import annotations


class ForecastError(Exception):
    """工具包内所有可预期错误的基类"""


# ─────────────────────────── 数据读取 ───────────────────────────


class MissingColumn(ForecastError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"CSV 表头缺少列: {name}")


class MalformedRow(ForecastError):
    def __init__(self, line: int, detail: str = ""):
        self.line = line
        super().__init__(f"第 {line} 行无法解析 {detail}".rstrip())


class DuplicateRow(ForecastError):
    def __init__(self, turbine: int, day: int, time: str):
        self.turbine = turbine
        self.day = day
        self.time = time
        super().__init__(f"重复记录: 风机 {turbine}, 第 {day} 天, {time}")


class UnknownRole(ForecastError):
    def __init__(self, role: str):
        self.role = role
        super().__init__(f"未知的数据角色: {role}")


# ─────────────────────────── 预处理 ───────────────────────────


class AllMissing(ForecastError):
    def __init__(self, role: str, turbine: int | None = None):
        self.role = role
        self.turbine = turbine
        where = f"风机 {turbine} 的 {role} 整列缺失" if turbine is not None else f"{role} 在区间内全部缺失"
        super().__init__(where)


class UnfittedRole(ForecastError):
    def __init__(self, role: str):
        self.role = role
        super().__init__(f"缩放器未拟合该角色: {role}")


class RangeTooShort(ForecastError):
    def __init__(self, needed: int, got: int):
        self.needed = needed
        self.got = got
        super().__init__(f"区间长度不足: 需要 {needed} 步，实际 {got} 步")


class InsufficientDays(ForecastError):
    def __init__(self, needed: int, got: int):
        self.needed = needed
        self.got = got
        super().__init__(f"天数不足: 划分需要 {needed} 天，数据只有 {got} 天")


# ─────────────────────────── 自动微分 ───────────────────────────


class ShapeMismatch(ForecastError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"形状不匹配: {detail}")


class ElementCountMismatch(ForecastError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"元素个数不一致: {detail}")


class NonFiniteInput(ForecastError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op} 收到非有限输入 (NaN/Inf)")


class EmptyMask(ForecastError):
    def __init__(self):
        super().__init__("掩码中没有任何有效位置")


class NotScalar(ForecastError):
    def __init__(self, shape: tuple[int, ...]):
        self.shape = shape
        super().__init__(f"backward 需要标量损失，实际形状 {shape}")


class DetachedLoss(ForecastError):
    def __init__(self):
        super().__init__("损失张量不在当前 Tape 上")


class TapeConsumed(ForecastError):
    def __init__(self):
        super().__init__("Tape 已执行过一次 backward，不能重复使用")


# ─────────────────────────── 训练 ───────────────────────────


class NoTrainingData(ForecastError):
    def __init__(self, detail: str = ""):
        self.detail = detail
        super().__init__(f"没有可用的训练样本 {detail}".rstrip())


class NonFiniteLoss(ForecastError):
    def __init__(self, step: int, diagnostics: dict):
        self.step = step
        self.diagnostics = diagnostics
        super().__init__(f"第 {step} 步损失非有限: {diagnostics}")


class CorruptCheckpoint(ForecastError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"检查点文件损坏: {reason}")


class VersionMismatch(ForecastError):
    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"检查点版本 {found} 与当前版本 {expected} 不一致")


# ─────────────────────────── 后处理与评估 ───────────────────────────


class EmptySlot(ForecastError):
    def __init__(self, slot: int):
        self.slot = slot
        super().__init__(f"日内时段 {slot} 在拟合区间内没有有效观测")


class ProfileNotFitted(ForecastError):
    def __init__(self):
        super().__init__("日波动曲线尚未拟合")


class TurbineSetMismatch(ForecastError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"预测与真值的风机集合不一致: {detail}")


class AllInvalid(ForecastError):
    def __init__(self):
        super().__init__("全部真值无效，指标无定义")


class ArtifactMissing(ForecastError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"缺少产物文件: {path}")
