"""
半监督训练 - 交叉熵目标、解析梯度、Adam更新、dropout、早停和有限差分梯度校验
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split
from tqdm import tqdm

from config import (DEFAULT_ACTIVATION, DEFAULT_ADAM_EPS, DEFAULT_BETA1, DEFAULT_BETA2,
                    DEFAULT_DROPOUT, DEFAULT_HEADS, DEFAULT_HIDDEN, DEFAULT_LAYERS,
                    DEFAULT_LEARNING_RATE, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
                    DEFAULT_WEIGHT_DECAY)
from .console_log import is_verbose, log_info, log_ok
from .errors import HinError, TrainingError
from .hin_models import ModelInputs, ModelParams, _softmax_rows, get_model
from .node_attention import dropout  # noqa: F401  训练模块对外提供dropout

FD_SAMPLE = 200     # 大参数块随机抽取的坐标数


@dataclass(frozen=True)
class LabeledSplit:
    """
    有标签节点的划分

    labels 按模型行空间排列，未标注的行为 -1；train/val/test 为行下标。
    """
    labels: np.ndarray
    n_classes: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    class_names: Tuple[str, ...] = ()

    def __post_init__(self):
        parts = [np.asarray(self.train), np.asarray(self.val), np.asarray(self.test)]
        joined = np.concatenate(parts)
        if len(np.unique(joined)) != len(joined):
            raise HinError("训练/验证/测试集存在重叠")
        if len(joined) and np.any(self.labels[joined] < 0):
            raise HinError("划分中包含未标注的节点")

    def one_hot(self, mask: np.ndarray) -> np.ndarray:
        y = np.zeros((len(mask), self.n_classes))
        y[np.arange(len(mask)), self.labels[mask]] = 1.0
        return y


def _split_size(value: float, total: int) -> int:
    # 小于1为比例，否则为个数
    return int(round(value * total)) if value < 1 else int(value)


def _stratified_take(pool: np.ndarray, labels: np.ndarray, size: int, state: int,
                     strict: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    从 pool 中按类别比例取 size 个，返回 (取出的, 剩下的)

    strict 为假时分层失败退回普通随机抽取
    """
    empty = np.array([], dtype=np.int64)
    if size == 0:
        return empty, pool
    if size == len(pool):
        return pool, empty
    try:
        taken, rest = train_test_split(pool, train_size=size, stratify=labels[pool], random_state=state)
    except ValueError as exc:
        if not strict:
            taken, rest = train_test_split(pool, train_size=size, random_state=state)
            return np.asarray(taken, dtype=np.int64), np.asarray(rest, dtype=np.int64)
        raise HinError(f"无法按类别分层抽取 {size} 个节点（共 {len(pool)} 个）: {exc}") from exc
    return np.asarray(taken, dtype=np.int64), np.asarray(rest, dtype=np.int64)


def make_split(labels: np.ndarray, n_classes: int, train: float, val: float, seed: int,
               class_names: Sequence[str] = ()) -> LabeledSplit:
    """
    按类别分层随机划分有标签节点，剩余的全部作为测试集

    参数:
        labels: 每行的类别编号，-1 表示无标签
        train, val: 比例(<1) 或个数(>=1)
        seed: 随机种子
    返回:
        LabeledSplit；训练集包含每个出现过的类别
    """
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.flatnonzero(labels >= 0)
    n_train = _split_size(train, len(labeled))
    n_val = _split_size(val, len(labeled))
    if n_train < 1 or n_train + n_val > len(labeled):
        raise HinError(f"划分大小无效: 训练 {n_train}, 验证 {n_val}, 有标签 {len(labeled)}")
    train_state, val_state = np.random.default_rng(seed).integers(0, 2**31 - 1, size=2)
    train_rows, rest = _stratified_take(labeled, labels, n_train, int(train_state))
    missing = np.setdiff1d(labels[labeled], labels[train_rows])
    if len(missing):
        raise HinError(f"训练集缺少类别 {missing.tolist()}，请增大训练比例")
    val_rows, test_rows = _stratified_take(rest, labels, n_val, int(val_state), strict=False)
    return LabeledSplit(labels=labels, n_classes=n_classes, train=np.sort(train_rows), val=np.sort(val_rows),
                        test=np.sort(test_rows), class_names=tuple(class_names))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    dropout_rate: float = DEFAULT_DROPOUT
    patience: int = DEFAULT_PATIENCE
    max_epochs: int = DEFAULT_MAX_EPOCHS
    seed: int = 0
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = DEFAULT_ADAM_EPS
    weight_decay: float = DEFAULT_WEIGHT_DECAY

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise HinError(f"学习率必须为正: {self.learning_rate}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise HinError(f"dropout比例必须在[0, 1)内: {self.dropout_rate}")
        if self.patience < 1:
            raise HinError(f"patience至少为1: {self.patience}")
        if self.max_epochs < 1:
            raise HinError(f"max_epochs至少为1: {self.max_epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise HinError(f"动量系数必须在[0, 1)内: ({self.beta1}, {self.beta2})")
        if self.weight_decay < 0:
            raise HinError(f"weight_decay不能为负: {self.weight_decay}")


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    best_epoch: int = 0
    params: Optional[ModelParams] = None
    stop_reason: str = ""

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(m={k: np.zeros_like(v) for k, v in params.blocks.items()},
                   v={k: np.zeros_like(v) for k, v in params.blocks.items()})


# ==================== 损失与梯度 ====================

def cross_entropy(classifier: np.ndarray, embeddings: np.ndarray, split: LabeledSplit,
                  mask: np.ndarray) -> float:
    """
    掩码节点上的平均交叉熵 -mean(Y · ln softmax(H C))

    参数:
        classifier: C (hidden, n_classes)
        embeddings: H
        mask: 参与计算的行下标
    """
    mask = np.asarray(mask)
    if len(mask) == 0:
        raise HinError("交叉熵的掩码为空")
    logits = embeddings[mask] @ classifier
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(log_probs[np.arange(len(mask)), split.labels[mask]]))


def _loss_and_grads(variant: str, params: ModelParams, inputs: ModelInputs, split: LabeledSplit,
                    mask: np.ndarray, dropout_rate: float = 0.0, rng=None) -> Tuple[float, Dict[str, np.ndarray]]:
    model = get_model(variant)
    h, cache = model.forward(params, inputs, dropout_rate, rng)
    loss = cross_entropy(params.classifier, h, split, mask)
    probs = _softmax_rows(h[mask] @ params.classifier)
    d_logits = (probs - split.one_hot(mask)) / len(mask)
    d_h = np.zeros_like(h)
    d_h[mask] = d_logits @ params.classifier.T
    grads = model.backward(params, inputs, cache, d_h)
    grads["C"] = h[mask].T @ d_logits
    return loss, grads


def backward(variant: str, params: ModelParams, inputs: ModelInputs, split: LabeledSplit,
             mask: np.ndarray) -> Dict[str, np.ndarray]:
    """掩码损失对每个参数块的解析梯度（评估模式，无dropout）"""
    _, grads = _loss_and_grads(variant, params, inputs, split, np.asarray(mask))
    return grads


def adam_step(params: ModelParams, grads: Dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> Tuple[ModelParams, AdamState]:
    """
    带偏差校正的Adam更新（不修改输入）

    返回:
        (新参数, 新的矩估计状态)
    """
    t = state.t + 1
    new_blocks, new_m, new_v = {}, {}, {}
    for name, value in params.blocks.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        m = config.beta1 * state.m[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name] + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        new_blocks[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return params.replace(new_blocks), AdamState(m=new_m, v=new_v, t=t)


# ==================== 训练与推理 ====================

def embed(variant: str, params: ModelParams, inputs: ModelInputs) -> np.ndarray:
    """评估模式的嵌入（无dropout，确定性）"""
    h, _ = get_model(variant).forward(params, inputs)
    return h


def predict(variant: str, params: ModelParams, inputs: ModelInputs) -> np.ndarray:
    """类别概率"""
    return _softmax_rows(embed(variant, params, inputs) @ params.classifier)


def accuracy(variant: str, params: ModelParams, inputs: ModelInputs, split: LabeledSplit,
             mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    if len(mask) == 0:
        return float("nan")
    pred = predict(variant, params, inputs)[mask].argmax(axis=1)
    return float(np.mean(pred == split.labels[mask]))


def init_params(variant: str, inputs: ModelInputs, n_classes: int, seed: int, hidden: int = DEFAULT_HIDDEN,
                heads: int = DEFAULT_HEADS, layers: int = DEFAULT_LAYERS,
                activation: str = DEFAULT_ACTIVATION) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    return get_model(variant).init_params(inputs, hidden, n_classes, rng, heads=heads, layers=layers,
                                          activation=activation)


def train(variant: str, inputs: ModelInputs, split: LabeledSplit, config: TrainConfig,
          params: Optional[ModelParams] = None, hidden: int = DEFAULT_HIDDEN, heads: int = DEFAULT_HEADS,
          layers: int = DEFAULT_LAYERS, activation: str = DEFAULT_ACTIVATION) -> TrainHistory:
    """
    前向/反向/Adam 循环，验证损失连续 patience 轮没有改进时停止

    参数:
        variant: 模型变体
        inputs: 预计算的模型输入
        split: 有标签划分（验证集为空时用训练损失做早停）
        config: 训练超参数
        params: 初始参数，默认按种子初始化
    返回:
        TrainHistory，params 为验证损失最好的那一轮的参数
    """
    if params is None:
        params = init_params(variant, inputs, split.n_classes, config.seed, hidden, heads, layers, activation)
    dropout_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    state = AdamState.zeros_like(params)
    history = TrainHistory(params=params.copy())
    monitor = split.val if len(split.val) else split.train
    best_loss = np.inf
    wait = 0

    epochs = tqdm(range(config.max_epochs), desc=f"训练 {variant}", disable=not is_verbose(), leave=False)
    for epoch in epochs:
        eval_h = embed(variant, params, inputs)
        val_loss = cross_entropy(params.classifier, eval_h, split, monitor)
        preds = (eval_h[monitor] @ params.classifier).argmax(axis=1)
        val_acc = float(np.mean(preds == split.labels[monitor]))

        train_loss, grads = _loss_and_grads(variant, params, inputs, split, split.train,
                                            config.dropout_rate, dropout_rng)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise TrainingError("损失出现非有限值", epoch=epoch, losses=history.train_loss[-5:])

        if val_loss < best_loss:
            best_loss = val_loss
            wait = 0
            history.best_epoch = epoch
            history.params = params.copy()
        else:
            wait += 1
            if wait >= config.patience:
                history.stop_reason = f"验证损失连续{config.patience}轮未改进"
                break

        if config.weight_decay > 0:
            grads = {k: g + config.weight_decay * params[k] for k, g in grads.items()}
        params, state = adam_step(params, grads, state, config)
        epochs.set_postfix(train=f"{train_loss:.4f}", val=f"{val_loss:.4f}")
    else:
        history.stop_reason = f"达到最大轮数{config.max_epochs}"

    log_ok(f"训练结束: {history.stop_reason}，最佳轮次={history.best_epoch}，"
           f"验证损失={best_loss:.4f}")
    return history


def finite_difference_check(variant: str, params: ModelParams, inputs: ModelInputs, split: LabeledSplit,
                            epsilon: float = 1e-5, mask: Optional[np.ndarray] = None,
                            seed: int = 0) -> float:
    """
    中心差分与解析梯度的最大相对误差

    参数:
        epsilon: 差分步长，1e-7 <= epsilon <= 1e-4
        mask: 损失所用的行，默认训练集
        seed: 大参数块抽样坐标的种子
    返回:
        max |a-b| / max(|a|, |b|, 1e-8)
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon 超出范围: {epsilon}")
    mask = split.train if mask is None else np.asarray(mask)
    analytic = backward(variant, params, inputs, split, mask)
    rng = np.random.default_rng(seed)
    worst = 0.0

    def loss_at(blocks):
        h = embed(variant, params.replace(blocks), inputs)
        return cross_entropy(blocks["C"], h, split, mask)

    for name, value in params.blocks.items():
        flat_count = value.size
        coords = np.arange(flat_count) if flat_count <= FD_SAMPLE else \
            rng.choice(flat_count, size=FD_SAMPLE, replace=False)
        grad = analytic.get(name, np.zeros_like(value)).ravel()
        for c in coords:
            plus = {k: v.copy() for k, v in params.blocks.items()}
            minus = {k: v.copy() for k, v in params.blocks.items()}
            plus[name].ravel()[c] += epsilon
            minus[name].ravel()[c] -= epsilon
            numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * epsilon)
            a = float(grad[c])
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    log_info(f"🔍 梯度校验 {variant}: 最大相对误差={worst:.3e}")
    return worst
