"""
合成基准图 - Newman四社区网络、幂律度/幂律社区规模的植入划分图，
以及传播矩阵的诊断表（零比例、组内概率质量、行聚类NMI）
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
import scipy.sparse as sp

from config import KMEANS_RESTARTS
from .console_log import log_info, log_warn
from .errors import SynthesisError
from .evaluation import kmeans, nmi
from .hin_graph import HinGraph, augment, build_graph
from .propagation import (PropagationState, constrained_step, markov_spectrum, mixing_window,
                          null_transition, transition)

SYNTH_NODE_TYPE = "N"
NEWMAN_RETRIES = 50
NEWMAN_TOLERANCE = 1.5          # 实际组内平均度与 z_in 的允许偏差
POWERLAW_RETRIES = 20
POWERLAW_DROP_LIMIT = 0.15      # 重连后仍无法放置的边端比例上限
REWIRE_ATTEMPTS = 100           # 每条坏边尝试交换的次数


@dataclass(frozen=True)
class NewmanSpec:
    n: int = 128
    groups: int = 4
    z_in: float = 14.0
    z_out: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.groups < 1 or self.n % self.groups:
            raise SynthesisError(f"n={self.n} 不能被组数 {self.groups} 整除")
        if self.z_in < 0 or self.z_out < 0 or self.z_in + self.z_out >= self.n:
            raise SynthesisError(f"平均度无效: z_in={self.z_in}, z_out={self.z_out}, n={self.n}")

    @property
    def group_size(self) -> int:
        return self.n // self.groups


@dataclass(frozen=True)
class PlantedPowerLawSpec:
    n: int = 1000
    degree_exponent: float = 2.5
    size_exponent: float = 1.5
    mu: float = 0.1
    min_degree: int = 8
    max_degree: int = 50
    min_community: int = 20
    max_community: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.degree_exponent <= 1 or self.size_exponent <= 1:
            raise SynthesisError(f"幂律指数必须大于1: {self.degree_exponent}, {self.size_exponent}")
        if not 0.0 <= self.mu < 1.0:
            raise SynthesisError(f"混合比例必须在[0, 1)内: {self.mu}")
        if not 1 <= self.min_degree <= self.max_degree < self.n:
            raise SynthesisError(f"度范围无效: [{self.min_degree}, {self.max_degree}]")
        if not 2 <= self.min_community <= self.max_community <= self.n:
            raise SynthesisError(f"社区规模范围无效: [{self.min_community}, {self.max_community}]")


def _to_hin(n: int, edges) -> HinGraph:
    nodes = [(str(i), SYNTH_NODE_TYPE) for i in range(n)]
    return build_graph(nodes, [(str(u), str(v)) for u, v in edges])


def _mean_intra_degree(edges, groups: np.ndarray, n: int) -> Tuple[float, float]:
    intra = sum(1 for u, v in edges if groups[u] == groups[v])
    cross = len(edges) - intra
    return 2.0 * intra / n, 2.0 * cross / n


def newman_graph(spec: NewmanSpec) -> Tuple[HinGraph, np.ndarray]:
    """
    Newman基准：组内每对以 z_in/(组大小-1) 连边，组间每对以 z_out/(n-组大小) 连边

    参数:
        spec: NewmanSpec
    返回:
        (单类型HinGraph, 每个节点的真实组号)
    """
    size = spec.group_size
    p_in = spec.z_in / (size - 1) if size > 1 else 0.0
    p_out = spec.z_out / (spec.n - size) if spec.n > size else 0.0
    groups = np.repeat(np.arange(spec.groups), size)
    seeds = np.random.default_rng(spec.seed).integers(0, 2**31 - 1, size=NEWMAN_RETRIES)
    realized = {}
    for attempt, s in enumerate(seeds):
        g = nx.random_partition_graph([size] * spec.groups, min(p_in, 1.0), min(p_out, 1.0), seed=int(s))
        edges = sorted((min(u, v), max(u, v)) for u, v in g.edges())
        intra, cross = _mean_intra_degree(edges, groups, spec.n)
        realized = {"attempt": attempt + 1, "mean_intra_degree": intra, "mean_cross_degree": cross}
        if abs(intra - spec.z_in) <= NEWMAN_TOLERANCE:
            log_info(f"🧪 Newman图: n={spec.n}, 组内平均度={intra:.2f}, 组间平均度={cross:.2f}")
            return _to_hin(spec.n, edges), groups
    raise SynthesisError(f"{NEWMAN_RETRIES} 次采样都未达到目标组内平均度 {spec.z_in}", stats=realized)


def _truncated_powerlaw(rng: np.random.Generator, exponent: float, low: float, high: float, size: int) -> np.ndarray:
    """[low, high] 上密度 ∝ x^-exponent 的逆CDF采样"""
    a = 1.0 - exponent
    u = rng.random(size)
    return (u * (high ** a - low ** a) + low ** a) ** (1.0 / a)


def _community_sizes(rng: np.random.Generator, spec: PlantedPowerLawSpec) -> List[int]:
    sizes: List[int] = []
    while sum(sizes) < spec.n:
        sizes.append(int(round(_truncated_powerlaw(rng, spec.size_exponent, spec.min_community,
                                                   spec.max_community, 1)[0])))
    overflow = sum(sizes) - spec.n
    sizes[-1] -= overflow
    if sizes[-1] < spec.min_community and len(sizes) > 1:
        leftover = sizes.pop()
        sizes[int(np.argmin(sizes))] += leftover
    return sizes


def _assign_communities(rng: np.random.Generator, internal: np.ndarray, sizes: List[int]) -> np.ndarray:
    """内部度大的节点先分配，只放进装得下它的社区，装不下时截断到社区规模-1"""
    capacity = np.array(sizes)
    groups = np.full(len(internal), -1, dtype=np.int64)
    for v in np.argsort(-internal, kind="stable"):
        open_ = np.flatnonzero(capacity > 0)
        fits = open_[np.array(sizes)[open_] > internal[v]]
        choice = rng.choice(fits) if len(fits) else open_[np.argmax(np.array(sizes)[open_])]
        groups[v] = choice
        capacity[choice] -= 1
        internal[v] = min(internal[v], sizes[choice] - 1)
    return groups


def _rewire(rng: np.random.Generator, pairs: List[Tuple[int, int]],
            allowed) -> Tuple[List[Tuple[int, int]], int]:
    """
    把自环、重边和不允许的边交换到合法边上，度序列不变

    坏边 (u, v) 与随机一条好边 (x, y) 交换成 (u, x) 和 (v, y)，两条新边都合法且不存在时才接受。

    参数:
        pairs: 配置模型配对出的边
        allowed: allowed(u, v) 为真的边才能保留
    返回:
        (简单图的边表, 修复失败丢掉的边端数)
    """
    good: List[Tuple[int, int]] = []
    present = set()
    bad: List[Tuple[int, int]] = []
    for u, v in pairs:
        e = (min(u, v), max(u, v))
        if u != v and e not in present and allowed(u, v):
            present.add(e)
            good.append(e)
        else:
            bad.append((u, v))

    def valid(a, b):
        return a != b and (min(a, b), max(a, b)) not in present and allowed(a, b)

    def place(u, v) -> bool:
        for _ in range(REWIRE_ATTEMPTS):
            if not good:
                return False
            i = int(rng.integers(len(good)))
            x, y = good[i] if rng.random() < 0.5 else good[i][::-1]
            if {u, x} == {v, y} or not (valid(u, x) and valid(v, y)):
                continue
            present.discard(good[i])
            good[i] = good[-1]
            good.pop()
            for a, b in ((u, x), (v, y)):
                e = (min(a, b), max(a, b))
                present.add(e)
                good.append(e)
            return True
        return False

    lost = 2 * sum(1 for u, v in bad if not place(u, v))
    return good, lost


def _wire(rng: np.random.Generator, stubs: np.ndarray, nodes: np.ndarray,
          allowed) -> Tuple[List[Tuple[int, int]], int]:
    """配置模型配对边端后重连成简单图，返回(全局编号的边表, 丢失的边端数)"""
    stubs = stubs.copy()
    if stubs.sum() % 2:
        stubs[int(np.argmax(stubs))] += 1
    multi = nx.configuration_model(stubs.tolist(), seed=int(rng.integers(0, 2**31 - 1)))
    pairs = [(int(nodes[u]), int(nodes[v])) for u, v in multi.edges()]
    return _rewire(rng, pairs, allowed)


def planted_powerlaw_graph(spec: PlantedPowerLawSpec) -> Tuple[HinGraph, np.ndarray]:
    """
    幂律度序列 + 幂律社区规模的植入划分图（LFR的简化替代）

    每个节点 round(μ·d) 个边端连到社区外，其余在社区内；
    社区内和跨社区分别用配置模型配对边端，自环、重边以及跨社区阶段落在同一社区内的边
    通过双边交换重连，度序列保持不变；重连失败的边端超过上限时整体重抽。

    参数:
        spec: PlantedPowerLawSpec
    返回:
        (单类型HinGraph, 每个节点的社区编号)
    """
    rng = np.random.default_rng(spec.seed)
    stats: Dict[str, float] = {}
    best = None
    for attempt in range(POWERLAW_RETRIES):
        degrees = np.rint(_truncated_powerlaw(rng, spec.degree_exponent, spec.min_degree,
                                              spec.max_degree, spec.n)).astype(np.int64)
        sizes = _community_sizes(rng, spec)
        external = np.rint(spec.mu * degrees).astype(np.int64)
        internal = degrees - external
        groups = _assign_communities(rng, internal, sizes)

        edges = set()
        lost = 0
        for c in range(len(sizes)):
            members = np.flatnonzero(groups == c)
            wired, miss = _wire(rng, internal[members], members, lambda u, v: True)
            edges.update(wired)
            lost += miss
        if external.sum() > 0:
            wired, miss = _wire(rng, external, np.arange(spec.n), lambda u, v: groups[u] != groups[v])
            edges.update(wired)
            lost += miss
        total = int(internal.sum() + external.sum())
        drop = lost / max(total, 1)
        stats = {"attempt": attempt + 1, "dropped_fraction": drop, "edges": len(edges),
                 "largest_community": max(sizes), "communities": len(sizes)}
        if best is None or drop < best[0]:
            best = (drop, sorted(edges), groups)
        if drop <= POWERLAW_DROP_LIMIT:
            break
    drop, edges, groups = best
    if drop > POWERLAW_DROP_LIMIT:
        raise SynthesisError("修复后度序列仍无法实现", stats=stats)
    if drop > 0:
        log_warn(f"重连后仍有 {drop:.1%} 的边端无法放置")
    log_info(f"🧪 幂律植入图: n={spec.n}, 边={len(edges)}, 社区数={len(np.unique(groups))}, "
             f"最大社区={np.bincount(groups).max()}")
    return _to_hin(spec.n, edges), groups


def hub_node(graph: HinGraph, groups: np.ndarray) -> int:
    """最大社区中度最大的节点"""
    degrees = np.asarray(graph.adjacency.sum(axis=1)).ravel()
    largest = np.argmax(np.bincount(groups))
    members = np.flatnonzero(groups == largest)
    return int(members[np.argmax(degrees[members])])


def _row_stats(matrix: sp.csr_matrix, groups: np.ndarray, hub: int) -> Tuple[float, float, float]:
    n = matrix.shape[0]
    row = matrix.getrow(hub)
    zero_fraction = 1.0 - row.nnz / float(n)
    same = groups[row.indices] == groups[hub]
    hub_within = float(row.data[same].sum())
    coo = matrix.tocoo()
    within = np.bincount(coo.row, weights=coo.data * (groups[coo.row] == groups[coo.col]), minlength=n)
    return zero_fraction, hub_within, float(within.mean())


def propagation_report(graph: HinGraph, groups: np.ndarray, k_list: Sequence[int], hub: Optional[int] = None,
                       seed: int = 0, restarts: int = KMEANS_RESTARTS,
                       keep_grids: bool = False):
    """
    对每个 k 和两种游走统计：枢纽行零比例、组内概率质量、行聚类NMI

    参数:
        graph: 合成图
        groups: 真实组号
        k_list: 步数列表（可含0）
        hub: 观察的节点，默认最大社区中度最大的节点
        keep_grids: 同时返回每个 (k, 游走) 的传播矩阵
    返回:
        DataFrame（列: k, walk, hub, zero_fraction, hub_within_mass, mean_within_mass, row_nmi），
        keep_grids 为真时返回 (DataFrame, {(k, walk): matrix})
    """
    aug = augment(graph)
    p = transition(aug)
    q = null_transition(aug)
    hub = hub_node(graph, groups) if hub is None else hub
    n_groups = len(np.unique(groups))
    n = graph.node_count

    z = PropagationState(sp.identity(n, format="csr"), 0, False)
    s = PropagationState(sp.identity(n, format="csr"), 0, True)
    rows, grids = [], {}
    for k in sorted(set(int(x) for x in k_list)):
        while z.step < k:
            z = PropagationState(z.matrix @ p.matrix, z.step + 1, False)
        while s.step < k:
            s = constrained_step(s, p, q)
        for walk, state in (("unconstrained", z), ("constrained", s)):
            zero_fraction, hub_within, mean_within = _row_stats(state.matrix.tocsr(), groups, hub)
            pred = kmeans(state.matrix.toarray(), n_groups, restarts, seed) if n_groups >= 2 else groups
            rows.append({"k": k, "walk": walk, "hub": hub, "zero_fraction": zero_fraction,
                         "hub_within_mass": hub_within, "mean_within_mass": mean_within,
                         "row_nmi": nmi(pred, groups)})
            if keep_grids:
                grids[(k, walk)] = state.matrix
    table = pd.DataFrame(rows)
    return (table, grids) if keep_grids else table


def _rounded(t: float) -> float:
    return t if math.isinf(t) else int(round(t))


def newman_window_check(spec: NewmanSpec, c: int = 4) -> Tuple[float, float]:
    """Newman图第c个混合态的 (进入时间, 退出时间)，四舍五入到整数，无界时保留 inf"""
    graph, _ = newman_graph(spec)
    aug = augment(graph)
    window = mixing_window(markov_spectrum(transition(aug), aug, c + 1), c)
    return _rounded(window.t_enter), _rounded(window.t_exit)
