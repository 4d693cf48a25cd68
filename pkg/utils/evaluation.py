"""
下游评估 - 线性探针分类(Macro/Micro-F1)、K-Means聚类(NMI/ARI)，多次重复取平均
"""

import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import adjusted_rand_score, f1_score, normalized_mutual_info_score
from sklearn.model_selection import train_test_split

from config import (EVAL_RATIOS, EVAL_REPEATS, KMEANS_MAX_ITER, KMEANS_RESTARTS, KMEANS_TOL,
                    PROBE_C, PROBE_TOL)
from .console_log import log_info, log_warn
from .errors import EvaluationError

PROBE_RETRIES = 10      # 极小比例下训练侧缺类时的重抽次数
PROBE_MAX_ITER = 1000
REPORT_COLUMNS = ["metric", "ratio", "mean", "stddev"]


@dataclass
class EvalReport:
    """评估结果：每个比例的F1均值和标准差，以及聚类的NMI/ARI"""
    macro_f1: Dict[float, Tuple[float, float]] = field(default_factory=dict)
    micro_f1: Dict[float, Tuple[float, float]] = field(default_factory=dict)
    nmi: Tuple[float, float] = (float("nan"), float("nan"))
    ari: Tuple[float, float] = (float("nan"), float("nan"))
    repeats: int = 0
    seeds: List[int] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """metric,ratio,mean,stddev 形式的表格，聚类指标的ratio为空"""
        rows = []
        for ratio in sorted(self.macro_f1):
            rows.append(("macro_f1", ratio, *self.macro_f1[ratio]))
            rows.append(("micro_f1", ratio, *self.micro_f1[ratio]))
        if not np.isnan(self.nmi[0]):
            rows.append(("nmi", np.nan, *self.nmi))
            rows.append(("ari", np.nan, *self.ari))
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def f1_scores(pred: Sequence[int], true: Sequence[int], classes: Sequence[int]) -> Tuple[float, float]:
    """
    Macro-F1 与 Micro-F1

    参数:
        pred, true: 类别编号
        classes: 完整的类别集合（没有预测也没有真值的类别按0计入平均）
    """
    labels = list(classes)
    macro = f1_score(true, pred, labels=labels, average="macro", zero_division=0)
    micro = f1_score(true, pred, labels=labels, average="micro", zero_division=0)
    return float(macro), float(micro)


def nmi(pred: Sequence[int], true: Sequence[int]) -> float:
    """算术平均归一化的互信息；任一划分只有一个块时定义为0"""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if len(pred) != len(true):
        raise EvaluationError(f"标签长度不一致: {len(pred)} vs {len(true)}")
    if len(np.unique(pred)) < 2 or len(np.unique(true)) < 2:
        return 0.0
    return float(normalized_mutual_info_score(true, pred, average_method="arithmetic"))


def ari(pred: Sequence[int], true: Sequence[int]) -> float:
    """按超几何期望修正的兰德指数"""
    if len(pred) != len(true):
        raise EvaluationError(f"标签长度不一致: {len(pred)} vs {len(true)}")
    return float(adjusted_rand_score(true, pred))


def kmeans(embeddings: np.ndarray, n_clusters: int, restarts: int = KMEANS_RESTARTS, seed: int = 0) -> np.ndarray:
    """
    k-means++ 初始化，多次重启取惯性最小的结果

    参数:
        embeddings: (n, d)
        n_clusters: K >= 2
        restarts: 重启次数
        seed: 随机种子
    返回:
        每行的簇编号
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if n_clusters < 2:
        raise EvaluationError(f"K至少为2: {n_clusters}")
    if n_clusters > len(x):
        raise EvaluationError(f"K={n_clusters} 大于样本数 {len(x)}")
    distinct = len(np.unique(x, axis=0))
    if distinct == 1:
        # 全部点相同：标签恒为0
        log_warn(f"所有点都相同，K={n_clusters} 退化为单簇")
        return np.zeros(len(x), dtype=np.int64)
    if distinct < n_clusters:
        raise EvaluationError(f"K={n_clusters} 大于不同点的个数 {distinct}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        model = KMeans(n_clusters=n_clusters, init="k-means++", n_init=restarts, max_iter=KMEANS_MAX_ITER,
                       tol=KMEANS_TOL, random_state=seed)
        return model.fit_predict(x).astype(np.int64)


def _classifier_split(x: np.ndarray, y: np.ndarray, ratio: float, seed: int):
    classes = np.unique(y)
    rng = np.random.default_rng(seed)
    for attempt in range(PROBE_RETRIES):
        state = int(rng.integers(0, 2**31 - 1))
        try:
            x_tr, x_te, y_tr, y_te = train_test_split(x, y, train_size=ratio, stratify=y, random_state=state)
        except ValueError:
            x_tr, x_te, y_tr, y_te = train_test_split(x, y, train_size=ratio, random_state=state)
        if len(np.unique(y_tr)) == len(classes) and len(y_te):
            return x_tr, x_te, y_tr, y_te
    raise EvaluationError(f"比例 {ratio} 下连续 {PROBE_RETRIES} 次抽样训练侧都缺少类别")


def _classify_once(x: np.ndarray, y: np.ndarray, ratio: float, seed: int) -> Tuple[float, float]:
    x_tr, x_te, y_tr, y_te = _classifier_split(x, y, ratio, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf = LogisticRegression(C=PROBE_C, tol=PROBE_TOL, max_iter=PROBE_MAX_ITER)
        clf.fit(x_tr, y_tr)
    return f1_scores(clf.predict(x_te), y_te, np.unique(y))


def repeat_seeds(seed: int, repeats: int) -> List[int]:
    """由 SeedSequence 派生每次重复的种子，结果与执行顺序无关"""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(repeats)]


def _classify_repeats(x, y, ratio, repeats, seed, n_jobs) -> np.ndarray:
    seeds = repeat_seeds(seed, repeats)
    results = Parallel(n_jobs=n_jobs)(delayed(_classify_once)(x, y, ratio, s) for s in seeds)
    return np.array(results)


def linear_probe(embeddings: np.ndarray, labels: Sequence[int], ratio: float, repeats: int = EVAL_REPEATS,
                 seed: int = 0, n_jobs: int = 1) -> Tuple[float, float]:
    """
    线性探针：分层随机划分，L2正则多项逻辑回归，在剩余部分上算F1

    参数:
        embeddings: 有标签节点的嵌入
        labels: 对应的类别
        ratio: 训练比例
        repeats: 重复次数
        seed: 种子
        n_jobs: joblib 并行数
    返回:
        (macro_f1 均值, micro_f1 均值)
    """
    if not 0.0 < ratio < 1.0:
        raise EvaluationError(f"训练比例必须在(0, 1)内: {ratio}")
    scores = _classify_repeats(np.asarray(embeddings, dtype=np.float64), np.asarray(labels), ratio,
                            repeats, seed, n_jobs)
    return float(scores[:, 0].mean()), float(scores[:, 1].mean())


def evaluate_embeddings(embeddings: np.ndarray, labels: Sequence[int], n_clusters: Optional[int] = None,
                        ratios: Sequence[float] = EVAL_RATIOS, repeats: int = EVAL_REPEATS,
                        restarts: int = KMEANS_RESTARTS, seed: int = 0, n_jobs: int = 1) -> EvalReport:
    """
    完整评估：每个比例的线性探针 + K-Means 聚类

    参数:
        embeddings: 有标签节点的嵌入
        labels: 类别编号
        n_clusters: K，默认等于类别数
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if len(x) != len(y):
        raise EvaluationError(f"嵌入行数 {len(x)} 与标签数 {len(y)} 不一致")
    report = EvalReport(repeats=repeats, seeds=repeat_seeds(seed, repeats))
    for ratio in ratios:
        scores = _classify_repeats(x, y, ratio, repeats, seed, n_jobs)
        report.macro_f1[ratio] = (float(scores[:, 0].mean()), float(scores[:, 0].std()))
        report.micro_f1[ratio] = (float(scores[:, 1].mean()), float(scores[:, 1].std()))
        log_info(f"📈 探针 {ratio:.0%}: Macro-F1={report.macro_f1[ratio][0]:.4f}, "
                 f"Micro-F1={report.micro_f1[ratio][0]:.4f}")

    k = n_clusters or len(np.unique(y))
    nmis, aris = [], []
    for s in report.seeds:
        pred = kmeans(x, k, restarts, s)
        nmis.append(nmi(pred, y))
        aris.append(ari(pred, y))
    report.nmi = (float(np.mean(nmis)), float(np.std(nmis)))
    report.ari = (float(np.mean(aris)), float(np.std(aris)))
    log_info(f"📈 聚类: NMI={report.nmi[0]:.4f}, ARI={report.ari[0]:.4f}")
    return report
