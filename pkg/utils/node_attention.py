"""
节点级注意力 - 打分、softmax归一化、加权聚合、多头拼接，
以及在传播矩阵支撑集上的向量化前向/反向计算
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from config import LEAKY_SLOPE
from .errors import AttentionError


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x, slope: float = LEAKY_SLOPE):
    return np.where(x > 0, 1.0, slope)


def activate(x: np.ndarray, name: str) -> np.ndarray:
    """可配置的激活函数 σ"""
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    raise ValueError(f"未知的激活函数: {name}")


def activate_grad(x: np.ndarray, name: str) -> np.ndarray:
    """σ'(x)，x为激活前的值"""
    if name == "identity":
        return np.ones_like(x)
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "elu":
        return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
    raise ValueError(f"未知的激活函数: {name}")


def dropout(matrix: np.ndarray, rate: float, rng: np.random.Generator, return_mask: bool = False):
    """
    反向缩放的dropout：保留的元素乘以 1/(1-rate)

    参数:
        matrix: 输入
        rate: 丢弃比例，0 <= rate < 1
        rng: 随机流
        return_mask: 同时返回已缩放的保留掩码（反向传播用）
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout比例必须在[0, 1)内: {rate}")
    matrix = np.asarray(matrix, dtype=np.float64)
    if rate == 0.0:
        mask = np.ones_like(matrix)
    else:
        mask = (rng.random(matrix.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out = matrix * mask
    return (out, mask) if return_mask else out


def attention_score(h_u: np.ndarray, h_v: np.ndarray, mu: np.ndarray, w: np.ndarray,
                    slope: float = LEAKY_SLOPE) -> float:
    """
    节点对的重要性系数 e = LeakyReLU(μᵀ [W h_u || W h_v])

    参数:
        h_u, h_v: 隐向量
        mu: 注意力向量，长度为 2 × W的输出维度
        w: 映射矩阵，形状 (d_out, d_in)
    返回:
        标量 e
    """
    joined = np.concatenate([w @ np.asarray(h_u, dtype=np.float64), w @ np.asarray(h_v, dtype=np.float64)])
    return float(leaky_relu(float(np.dot(mu, joined)), slope))


def attention_weights(scores: Sequence[float]) -> np.ndarray:
    """softmax归一化；邻域为空时报错（调用方应走无注意力的零填充路径）"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise AttentionError("注意力邻域为空")
    shifted = np.exp(scores - scores.max())
    return shifted / shifted.sum()


def attention_aggregate(alpha: np.ndarray, projected: np.ndarray, activation: str = "identity") -> np.ndarray:
    """
    h_u = σ(Σ_v α_uv W h_v)

    参数:
        alpha: 权重向量（和为1）
        projected: 邻居的 W h_v，按行排列
        activation: σ
    """
    return activate(np.asarray(alpha) @ np.asarray(projected), activation)


def multi_head(heads: Sequence[np.ndarray]) -> np.ndarray:
    """K个头的输出拼接"""
    if len(heads) == 0:
        raise AttentionError("多头注意力至少需要一个头")
    return np.concatenate([np.atleast_1d(h) for h in heads], axis=-1)


def segment_softmax(scores: np.ndarray, rows: np.ndarray, n_rows: int) -> np.ndarray:
    """按行分段的softmax（同一行的边共享归一化）"""
    row_max = np.full(n_rows, -np.inf)
    np.maximum.at(row_max, rows, scores)
    ex = np.exp(scores - row_max[rows])
    denom = np.bincount(rows, weights=ex, minlength=n_rows)
    return ex / denom[rows]


@dataclass
class HeadCache:
    """单个(组, 头)前向的中间结果"""
    z: np.ndarray           # X @ W_h
    pre: np.ndarray         # 每条边的 LeakyReLU 输入
    alpha: np.ndarray       # softmax 后的权重
    used: np.ndarray        # dropout 后实际参与聚合的权重
    keep: Optional[np.ndarray]
    agg: np.ndarray         # 激活前的聚合结果


def support_edges(s_block: sp.csr_matrix, col_offset: int):
    """传播矩阵某列块的支撑集 -> (行号, 全局列号)，行号有序"""
    coo = s_block.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64) + col_offset


def head_forward(x: np.ndarray, w: np.ndarray, mu: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                 activation: str, dropout_rate: float = 0.0, rng=None):
    """
    一个头在一个组上的向量化注意力

    参数:
        x: 投影后的特征 (n, d)
        w: 注意力映射 (d, d_head)，即 Wh 中 W 的转置
        mu: (2 d_head,)
        rows, cols: 支撑集上的边
    返回:
        (输出 (n, d_head), HeadCache)
    """
    n = x.shape[0]
    z = x @ w
    d_head = w.shape[1]
    a = z @ mu[:d_head]
    b = z @ mu[d_head:]
    pre = a[rows] + b[cols]
    scores = leaky_relu(pre)
    alpha = segment_softmax(scores, rows, n) if len(rows) else np.zeros(0)
    keep = None
    used = alpha
    if dropout_rate > 0.0 and rng is not None and len(alpha):
        used, keep = dropout(alpha, dropout_rate, rng, return_mask=True)
    weights = sp.csr_matrix((used, (rows, cols)), shape=(n, n))
    agg = np.asarray(weights @ z)
    return activate(agg, activation), HeadCache(z=z, pre=pre, alpha=alpha, used=used, keep=keep, agg=agg)


def head_backward(x: np.ndarray, w: np.ndarray, mu: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                  cache: HeadCache, d_out: np.ndarray, activation: str):
    """
    head_forward 的反向传播

    返回:
        (dX, dW, dμ)
    """
    n = x.shape[0]
    d_head = w.shape[1]
    z = cache.z
    d_agg = d_out * activate_grad(cache.agg, activation)
    weights = sp.csr_matrix((cache.used, (rows, cols)), shape=(n, n))
    d_z = np.asarray(weights.T @ d_agg)

    if len(rows):
        d_used = np.einsum("ij,ij->i", d_agg[rows], z[cols])
        d_alpha = d_used * cache.keep if cache.keep is not None else d_used
        weighted = np.bincount(rows, weights=cache.alpha * d_alpha, minlength=n)
        d_scores = cache.alpha * (d_alpha - weighted[rows])
        d_pre = d_scores * leaky_relu_grad(cache.pre)
        d_a = np.bincount(rows, weights=d_pre, minlength=n)
        d_b = np.bincount(cols, weights=d_pre, minlength=n)
    else:
        d_a = np.zeros(n)
        d_b = np.zeros(n)

    mu_a, mu_b = mu[:d_head], mu[d_head:]
    d_mu = np.concatenate([z.T @ d_a, z.T @ d_b])
    d_z += np.outer(d_a, mu_a) + np.outer(d_b, mu_b)
    return d_z @ w.T, x.T @ d_z, d_mu


def group_attention(x: np.ndarray, heads_w: List[np.ndarray], heads_mu: List[np.ndarray],
                    rows: np.ndarray, cols: np.ndarray, activation: str,
                    dropout_rate: float = 0.0, rng=None):
    """一个组上的K头注意力，输出按头拼接"""
    outs, caches = [], []
    for w, mu in zip(heads_w, heads_mu):
        out, cache = head_forward(x, w, mu, rows, cols, activation, dropout_rate, rng)
        outs.append(out)
        caches.append(cache)
    return multi_head(outs), caches
