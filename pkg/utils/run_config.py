"""
运行配置 - 默认值表 + `key = value` 配置文件 + 命令行覆盖，合并后统一校验
"""

import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from config import (ACTIVATIONS, DEFAULT_ACTIVATION, DEFAULT_ADAM_EPS, DEFAULT_BETA1, DEFAULT_BETA2,
                    DEFAULT_DROPOUT, DEFAULT_HEADS, DEFAULT_HIDDEN, DEFAULT_K, DEFAULT_LAYERS,
                    DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS, DEFAULT_OUTPUT_ROOT, DEFAULT_PATIENCE,
                    DEFAULT_WEIGHT_DECAY, EVAL_RATIOS, EVAL_REPEATS, KMEANS_RESTARTS, OUTPUT_ROOT_ENV,
                    VARIANTS)
from .console_log import log_info
from .errors import ConfigError
from .training import TrainConfig

SYNTHETIC_KINDS = ("none", "newman", "powerlaw")
PATH_KEYS = ("nodes", "edges", "features", "labels")


@dataclass
class RunConfig:
    """一次运行的完整配置（已校验）"""
    subcommand: str = "run"
    nodes: str = ""
    edges: str = ""
    features: str = ""
    labels: str = ""
    target_type: str = ""
    variant: str = "giam"
    k: int = DEFAULT_K
    hidden: int = DEFAULT_HIDDEN
    heads: int = DEFAULT_HEADS
    layers: int = DEFAULT_LAYERS
    activation: str = DEFAULT_ACTIVATION
    constrained: bool = True
    metapaths: List[str] = field(default_factory=list)
    learning_rate: float = DEFAULT_LEARNING_RATE
    dropout: float = DEFAULT_DROPOUT
    patience: int = DEFAULT_PATIENCE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_ADAM_EPS
    train_split: float = 0.1
    val_split: float = 0.1
    eval_ratios: List[float] = field(default_factory=lambda: list(EVAL_RATIOS))
    eval_repeats: int = EVAL_REPEATS
    kmeans_restarts: int = KMEANS_RESTARTS
    synthetic: str = "none"
    output: str = ""
    seed: int = 0
    verbose: bool = True
    n_jobs: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, dropout_rate=self.dropout, patience=self.patience,
                           max_epochs=self.max_epochs, seed=self.seed, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, weight_decay=self.weight_decay)

    def to_text(self) -> str:
        """规范的 key = value 文本（用于配置哈希和保存）"""
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, list):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"不是布尔值: {text}")


def _parse_list(text: str, item):
    return [item(part.strip()) for part in text.split(",") if part.strip()]


class RunConfigLoader:
    """运行配置管理器：默认值 -> 配置文件 -> 命令行覆盖"""

    def __init__(self, config_file: Optional[str] = None):
        """
        参数:
            config_file: 配置文件路径，None 表示只用默认值
        """
        self.config_file = config_file
        self.default_config: Dict[str, Any] = asdict(RunConfig())
        self.default_config["output"] = os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)
        self.lines: Dict[str, int] = {}

    def _convert(self, key: str, raw: str, line: Optional[int]):
        template = self.default_config[key]
        try:
            if isinstance(template, bool):
                return _parse_bool(raw)
            if isinstance(template, int):
                return int(raw)
            if isinstance(template, float):
                return float(raw)
            if isinstance(template, list):
                return _parse_list(raw, float) if key == "eval_ratios" else _parse_list(raw, str)
            return raw.strip()
        except ValueError as exc:
            raise ConfigError(f"类型不匹配: {exc}", key=key, line=line) from exc

    def parse_text(self, text: str) -> Dict[str, Any]:
        """解析 `key = value` 行，`#` 之后为注释"""
        values: Dict[str, Any] = {}
        for lineno, raw_line in enumerate(text.splitlines(), start=1):
            line = raw_line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("缺少 '='", line=lineno)
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in self.default_config:
                raise ConfigError("未知的配置项", key=key, line=lineno)
            values[key] = self._convert(key, raw, lineno)
            self.lines[key] = lineno
        return values

    def load_config(self) -> Dict[str, Any]:
        """读取配置文件并与默认值合并"""
        merged = dict(self.default_config)
        if self.config_file:
            if not os.path.exists(self.config_file):
                raise ConfigError(f"配置文件不存在: {self.config_file}")
            with open(self.config_file, "r", encoding="utf-8") as f:
                merged.update(self.parse_text(f.read()))
            log_info(f"📄 加载运行配置: {self.config_file}")
        return merged

    def build(self, overrides: Optional[Dict[str, Any]] = None, check_paths: bool = True) -> RunConfig:
        """
        合并并校验

        参数:
            overrides: 命令行给出的值（None 表示未给出）
            check_paths: 是否检查数据文件存在
        """
        merged = self.load_config()
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in self.default_config:
                raise ConfigError("未知的命令行参数", key=key)
            merged[key] = self._convert(key, value, None) if isinstance(value, str) else value
            self.lines.pop(key, None)
        config = RunConfig(**merged)
        self.validate(config, check_paths)
        return config

    def _fail(self, message: str, key: str):
        raise ConfigError(message, key=key, line=self.lines.get(key))

    def validate(self, config: RunConfig, check_paths: bool = True):
        """取值范围和跨字段规则"""
        if config.variant not in VARIANTS:
            self._fail(f"未知的模型变体 {config.variant}（可选: {', '.join(VARIANTS)}）", "variant")
        if config.activation not in ACTIVATIONS:
            self._fail(f"未知的激活函数 {config.activation}", "activation")
        if config.synthetic not in SYNTHETIC_KINDS:
            self._fail(f"synthetic 只能是 {', '.join(SYNTHETIC_KINDS)}", "synthetic")
        for key in ("k", "hidden", "heads", "layers", "patience", "max_epochs", "eval_repeats", "kmeans_restarts"):
            if getattr(config, key) < 1:
                self._fail("必须为正整数", key)
        if config.n_jobs == 0:
            self._fail("n_jobs 不能为0", "n_jobs")
        if config.learning_rate <= 0:
            self._fail("学习率必须为正", "learning_rate")
        if not 0.0 <= config.dropout < 1.0:
            self._fail("dropout 必须在[0, 1)内", "dropout")
        if not (0.0 <= config.beta1 < 1.0 and 0.0 <= config.beta2 < 1.0):
            self._fail("动量系数必须在[0, 1)内", "beta1")
        for key in ("train_split", "val_split"):
            if getattr(config, key) < 0:
                self._fail("划分大小不能为负", key)
        for ratio in config.eval_ratios:
            if not 0.0 < ratio < 1.0:
                self._fail(f"评估比例必须在(0, 1)内: {ratio}", "eval_ratios")
        if config.variant == "giam3" and not config.metapaths:
            self._fail("giam3 需要候选元路径", "metapaths")
        if config.variant == "giam" and config.hidden < config.heads:
            self._fail("hidden 不能小于 heads", "heads")
        if config.synthetic == "none" and check_paths:
            for key in ("nodes", "edges"):
                if not getattr(config, key):
                    self._fail("缺少必需的数据文件", key)
            for key in PATH_KEYS:
                path = getattr(config, key)
                if path and not os.path.exists(path):
                    self._fail(f"文件不存在: {path}", key)

    def save_config(self, config: RunConfig, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(config.to_text())
        log_info(f"💾 配置已保存: {path}")


def parse_config(config_file: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None,
                 check_paths: bool = True) -> RunConfig:
    """配置文件 + 命令行覆盖 -> 校验后的 RunConfig"""
    return RunConfigLoader(config_file).build(overrides, check_paths)
