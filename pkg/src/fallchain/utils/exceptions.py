"""
Fallchain自定义异常

定义整条跌倒检测流水线的异常层次结构，用于更精确的错误处理。
CLI 根据异常类别映射退出码：参数/数据校验错误为 1，运行期失败为 2。
"""

from typing import Optional


class FallchainException(Exception):
    """Fallchain基础异常类"""
    pass


class ParameterValidationError(FallchainException, ValueError):
    """参数验证错误

    当输入参数或输入数据不符合要求时抛出，例如：
    - 负数或零值
    - 超出有效范围
    - 形状或布局不一致
    """
    pass


class CalculationError(FallchainException):
    """计算过程错误

    当计算过程中发生错误时抛出，例如：
    - 路径规划无解
    - 数值溢出
    - 内部逻辑错误
    """
    pass


class ReportGenerationError(FallchainException):
    """报告生成错误

    当生成HTML报告、热力图或汇总文件时发生错误，例如：
    - 模板文件缺失
    - 文件写入失败
    - 渲染错误
    """
    pass


class ArtifactError(ParameterValidationError):
    """Model or dataset artifact cannot be read (missing keys, wrong version)."""
    pass


# ---------------------------------------------------------------------------
# signal-io
# ---------------------------------------------------------------------------

class MalformedRow(ParameterValidationError):
    """A data file row has an unparsable token or the wrong field count."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where = f"{where} "
        super().__init__(f"{where}{message}")


class EmptyFile(ParameterValidationError):
    pass


class InvalidDuration(ParameterValidationError):
    pass


class InvalidK(ParameterValidationError):
    pass


# ---------------------------------------------------------------------------
# preproc
# ---------------------------------------------------------------------------

class TooShort(ParameterValidationError):
    pass


class InvalidAlpha(ParameterValidationError):
    pass


class UnknownCode(ParameterValidationError):
    pass


class DivisionByZero(ParameterValidationError, ZeroDivisionError):
    pass


class DegenerateChannelWarning(UserWarning):
    """A normalization channel has min == max; it maps to 0."""
    pass


# ---------------------------------------------------------------------------
# nnkernel / fedsim
# ---------------------------------------------------------------------------

class ShapeMismatch(ParameterValidationError):
    pass


class NonDistribution(ParameterValidationError):
    pass


class LayoutMismatch(ParameterValidationError):
    pass


class NonFiniteGradient(ParameterValidationError):
    pass


class EmptyClient(ParameterValidationError):
    pass


class EmptyUpdateSet(ParameterValidationError):
    pass


class NonPositiveWeight(ParameterValidationError):
    pass


class EmptyDataset(ParameterValidationError):
    pass


class TooFewSubjects(ParameterValidationError):
    pass


class SingleClassDataset(ParameterValidationError):
    pass


class EmptyTestSet(ParameterValidationError):
    pass


# ---------------------------------------------------------------------------
# fingerprint / locmodel
# ---------------------------------------------------------------------------

class EmptySequence(ParameterValidationError):
    pass


class UnknownAnchor(ParameterValidationError):
    pass


class EmptyVector(ParameterValidationError):
    pass


class EmptyTrainSet(ParameterValidationError):
    pass


class LengthMismatch(ParameterValidationError):
    pass


class NotFitted(ParameterValidationError):
    """predict/evaluate called before fit, or the trained model file is absent."""
    pass


# ---------------------------------------------------------------------------
# mission / cli
# ---------------------------------------------------------------------------

class NoPath(CalculationError):
    pass


class OutOfBounds(ParameterValidationError):
    pass


class BlockedEndpoint(ParameterValidationError):
    pass


class IllegalTransition(ParameterValidationError):
    pass


class MissingArtifact(ParameterValidationError):
    pass


class UnknownConfigKey(ParameterValidationError):
    pass
