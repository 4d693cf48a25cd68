"""
异常定义 - 所有模块统一抛出 HinError 子类，由命令行入口统一捕获
"""

from typing import Any, Dict, Optional, Sequence


class HinError(Exception):
    """异构网络引擎的基础异常"""


class IngestError(HinError):
    """数据读入错误（未知端点、重复节点ID、格式错误）"""


class SchemaError(HinError):
    """元路径与图模式不匹配"""


class ShapeError(HinError):
    """矩阵/参数维度不一致"""


class SpectrumError(HinError):
    """特征值求解器未收敛"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class MixingWindowError(HinError):
    """混合窗口的类别数超出谱的范围"""


class AttentionError(HinError):
    """注意力邻域为空等错误"""


class TrainingError(HinError):
    """训练过程中出现非有限损失"""

    def __init__(self, message: str, epoch: int = -1, losses: Optional[Sequence[float]] = None):
        super().__init__(f"{message} (epoch={epoch})")
        self.epoch = epoch
        self.losses = list(losses or [])


class EvaluationError(HinError):
    """下游评估失败（划分重采样次数耗尽、K 过大等）"""


class SynthesisError(HinError):
    """合成基准图生成失败"""

    def __init__(self, message: str, stats: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.stats = stats or {}


class ConfigError(HinError):
    """配置文件错误，附带键名和行号"""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        where = []
        if key is not None:
            where.append(f"key={key}")
        if line is not None:
            where.append(f"line={line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.key = key
        self.line = line


class StageError(HinError):
    """流水线某阶段失败，附带阶段名"""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
