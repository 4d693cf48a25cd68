"""
概率传播 - 马尔可夫转移矩阵、无约束游走、模块度零模型、零模型约束游走、
以及基于马尔可夫生成元谱的传播深度估计
"""

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from config import DENSE_EIGEN_LIMIT, ZERO_EIGEN_TOL
from .console_log import log_info
from .errors import MixingWindowError, SpectrumError
from .hin_graph import AugmentedAdjacency, _compact, sparse_product


@dataclass(frozen=True)
class TransitionMatrix:
    """P = D̃^{-1} Ã，行随机"""
    matrix: sp.csr_matrix

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class NullTransition:
    """
    零模型转移矩阵的秩1表示：q_uv = d̃_v / Σ_r d̃_r，与源节点u无关

    不物化 n×n 的 A'，只保存度向量和总度。
    """
    degrees: np.ndarray
    total_degree: float

    @property
    def row(self) -> np.ndarray:
        """所有源节点共享的一行 q"""
        return self.degrees / self.total_degree

    def entry(self, u: int, v: int) -> float:
        return float(self.degrees[v] / self.total_degree)

    def apply(self, s) -> np.ndarray:
        """稠密计算 S·Q = (S·1) qᵀ，行和为1时即为广播的 q"""
        row_sums = np.asarray(s.sum(axis=1)).ravel()
        return np.outer(row_sums, self.row)


@dataclass(frozen=True)
class PropagationState:
    """k步传播矩阵 S^(k) 或 Z^(k)"""
    matrix: sp.csr_matrix
    step: int
    constrained: bool
    nodes: Optional[np.ndarray] = None      # 行/列对应的全局节点下标，None表示全部节点

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


@dataclass(frozen=True)
class SpectrumResult:
    """马尔可夫生成元 M = I - P 的最小若干特征值（升序）"""
    eigenvalues: np.ndarray
    c_max: int


@dataclass(frozen=True)
class MixingWindow:
    """第c个局部混合态的进入/退出时间，math.inf 表示无界"""
    c: int
    t_enter: float
    t_exit: float

    @staticmethod
    def format_time(t: float) -> str:
        return "unbounded" if math.isinf(t) else f"{t:.6g}"


def transition(aug: AugmentedAdjacency) -> TransitionMatrix:
    """
    一步随机游走的转移矩阵 p_uv = ã_uv / d̃_u

    参数:
        aug: 自环增广邻接
    返回:
        TransitionMatrix
    """
    inv_deg = sp.diags(1.0 / aug.degrees)
    return TransitionMatrix(matrix=_compact(inv_deg @ aug.matrix))


def null_transition(aug: AugmentedAdjacency) -> NullTransition:
    """
    模块度零模型上的转移矩阵

    a'_uv = d̃_u d̃_v / Σd̃，行归一化后 q_uv = d̃_v / Σd̃。
    """
    return NullTransition(degrees=np.asarray(aug.degrees, dtype=np.float64).copy(),
                          total_degree=float(aug.total_degree))


def _identity_state(n: int, constrained: bool, nodes: Optional[np.ndarray] = None) -> PropagationState:
    return PropagationState(matrix=sp.identity(n, format="csr", dtype=np.float64),
                            step=0, constrained=constrained, nodes=nodes)


def unconstrained_walk(p: TransitionMatrix, k: int, nodes: Optional[np.ndarray] = None) -> PropagationState:
    """
    无约束k步游走 Z^(k) = Z^(k-1)·P，Z^(0) = I（等价于GCN的传播矩阵 P^(k)）

    参数:
        p: 转移矩阵
        k: 步数，k >= 0
    返回:
        PropagationState
    """
    if k < 0:
        raise ValueError(f"步数必须非负: k={k}")
    state = _identity_state(p.size, constrained=False, nodes=nodes)
    z = state.matrix
    for _ in range(k):
        z = sparse_product(z, p.matrix)
    return PropagationState(matrix=z, step=k, constrained=False, nodes=nodes)


def constrained_step(s: PropagationState, p: TransitionMatrix, q: NullTransition) -> PropagationState:
    """
    约束游走的一步：S' = max(S·P - S·Q, 0)，S = D_s^{-1} S'

    S行和为1，所以 (S·Q)_uv = q_v；S·P中未存储的位置减去q_v后必为负，
    只需在S·P的非零位置上做减法和截断。截断后全零的行退化为自指示行。
    """
    sp_prod = sparse_product(s.matrix, p.matrix).tocsr()
    q_row = q.row
    data = sp_prod.data - q_row[sp_prod.indices]
    np.maximum(data, 0.0, out=data)
    clipped = sp.csr_matrix((data, sp_prod.indices.copy(), sp_prod.indptr.copy()), shape=sp_prod.shape)
    clipped.eliminate_zeros()

    row_sums = np.asarray(clipped.sum(axis=1)).ravel()
    dead = np.flatnonzero(row_sums <= 0.0)
    if len(dead):
        n = clipped.shape[0]
        fallback = sp.csr_matrix((np.ones(len(dead)), (dead, dead)), shape=(n, n))
        clipped = (clipped + fallback).tocsr()
        row_sums[dead] = 1.0

    normalized = _compact(sp.diags(1.0 / row_sums) @ clipped)
    return PropagationState(matrix=normalized, step=s.step + 1, constrained=True, nodes=s.nodes)


def constrained_walk(p: TransitionMatrix, q: NullTransition, k: int,
                     nodes: Optional[np.ndarray] = None) -> PropagationState:
    """
    零模型约束的k步游走，从 S^(0) = I 开始

    参数:
        p: 转移矩阵
        q: 零模型转移
        k: 步数，k >= 1
    返回:
        行随机、非负且通常稀疏的 S^(k)
    """
    if k < 1:
        raise ValueError(f"约束游走步数至少为1: k={k}")
    state = _identity_state(p.size, constrained=True, nodes=nodes)
    for _ in range(k):
        state = constrained_step(state, p, q)
    log_info(f"🔄 约束游走完成: k={k}, nnz={state.matrix.nnz}, "
             f"稀疏度={1.0 - state.matrix.nnz / float(p.size * p.size):.3f}")
    return state


def _symmetric_generator(aug: AugmentedAdjacency) -> sp.csr_matrix:
    """I - D̃^{-1/2} Ã D̃^{-1/2}，与 M = I - P 相似"""
    inv_sqrt = sp.diags(1.0 / np.sqrt(aug.degrees))
    n = aug.matrix.shape[0]
    return _compact(sp.identity(n, format="csr") - inv_sqrt @ aug.matrix @ inv_sqrt)


def markov_spectrum(p: TransitionMatrix, aug: AugmentedAdjacency, c_max: int) -> SpectrumResult:
    """
    马尔可夫生成元 M = I - P 的最小 c_max 个特征值

    参数:
        p: 转移矩阵（用于维度校验）
        aug: 自环增广邻接
        c_max: 需要的特征值个数，1 <= c_max <= n
    返回:
        SpectrumResult（升序）
    """
    n = aug.matrix.shape[0]
    if p.size != n:
        raise SpectrumError(f"转移矩阵与邻接维度不一致: {p.size} vs {n}")
    if not 1 <= c_max <= n:
        raise SpectrumError(f"c_max 超出范围: {c_max} (n={n})")

    sym = _symmetric_generator(aug)
    if n <= DENSE_EIGEN_LIMIT:
        values = scipy.linalg.eigh(sym.toarray(), eigvals_only=True, subset_by_index=[0, c_max - 1])
    else:
        wanted = min(c_max + 1, n - 1)
        try:
            # 平移-求逆：sigma略小于0使 M - sigma·I 正定
            values = scipy.sparse.linalg.eigsh(sym, k=wanted, sigma=-1e-3, which="LM",
                                               tol=ZERO_EIGEN_TOL, return_eigenvectors=False)
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise SpectrumError("特征值迭代未收敛", diagnostics={
                "requested": wanted,
                "converged": len(exc.eigenvalues),
                "n": n,
            }) from exc
        values = np.sort(values)[:c_max]

    values = np.clip(np.sort(np.real(values)), 0.0, 2.0)
    return SpectrumResult(eigenvalues=values, c_max=c_max)


def _reciprocal(value: float) -> float:
    return math.inf if value < ZERO_EIGEN_TOL else 1.0 / value


def mixing_window(spectrum: SpectrumResult, c: int) -> MixingWindow:
    """
    第c个局部混合态的窗口：T_ext = 1/λ_c，T_ent = 1/λ_{c+1}

    参数:
        spectrum: 升序特征值
        c: 类别数，2 <= c 且 c+1 <= 谱长度
    返回:
        MixingWindow
    """
    lam = spectrum.eigenvalues
    if c < 2 or c + 1 > len(lam):
        raise MixingWindowError(f"c={c} 超出范围（需要 2 <= c <= {len(lam) - 1}）")
    return MixingWindow(c=c, t_enter=_reciprocal(float(lam[c])), t_exit=_reciprocal(float(lam[c - 1])))


def mixing_windows(spectrum: SpectrumResult) -> List[MixingWindow]:
    """所有合法c的混合窗口"""
    return [mixing_window(spectrum, c) for c in range(2, len(spectrum.eigenvalues))]


def build_state(aug: AugmentedAdjacency, k: int, constrained: bool = True,
                nodes: Optional[np.ndarray] = None) -> PropagationState:
    """增广邻接 -> 转移矩阵 -> (零模型) -> k步游走 的完整流程"""
    p = transition(aug)
    if constrained:
        return constrained_walk(p, null_transition(aug), k, nodes=nodes)
    return unconstrained_walk(p, k, nodes=nodes)
