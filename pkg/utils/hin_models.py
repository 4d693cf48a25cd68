"""
模型变体 - GCN基线、朴素模型(giam1)、改进模型(giam2)、节点级注意力(giam)
以及带元路径级注意力的诊断变体(giam3)

每个变体提供 init_params / forward / backward，前向得到嵌入 H，
分类器 C 和损失在 training 模块中统一处理。
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from config import DEFAULT_ACTIVATION, DEFAULT_HEADS, DEFAULT_LAYERS
from .console_log import log_info
from .errors import HinError, IngestError, SchemaError, ShapeError
from .hin_graph import (AugmentedAdjacency, HinGraph, MetaPath, _compact, augment,
                        augment_matrix, meta_path_adjacency)
from .node_attention import (activate, activate_grad, dropout, group_attention,
                             head_backward, support_edges)
from .propagation import PropagationState, build_state


# ==================== 特征 ====================

@dataclass(frozen=True)
class FeatureSet:
    """
    按节点类型分块的原始特征 H^(0)

    type_index 给出每种类型在模型行空间中的 [start, stop)，
    blocks[t] 的行数必须等于该类型的节点数。
    """
    type_order: Tuple[str, ...]
    type_index: Dict[str, Tuple[int, int]]
    blocks: Dict[str, sp.csr_matrix]

    def __post_init__(self):
        for t in self.type_order:
            start, stop = self.type_index[t]
            block = self.blocks[t]
            if block.shape[0] != stop - start:
                raise ShapeError(f"类型 {t} 的特征行数 {block.shape[0]} 与节点数 {stop - start} 不一致")
            if block.nnz and not np.all(np.isfinite(block.data)):
                raise IngestError(f"类型 {t} 的特征包含非有限值")

    @property
    def node_count(self) -> int:
        return max((stop for _, stop in self.type_index.values()), default=0)

    @property
    def dims(self) -> Dict[str, int]:
        return {t: int(self.blocks[t].shape[1]) for t in self.type_order}


def row_type_index(graph: HinGraph, nodes: np.ndarray) -> Dict[str, Tuple[int, int]]:
    """有序的全局节点下标 -> 各类型在局部行空间中的区间"""
    result = {}
    for t in graph.type_order:
        start, stop = graph.type_index[t]
        where = np.flatnonzero((nodes >= start) & (nodes < stop))
        if len(where):
            result[t] = (int(where[0]), int(where[-1]) + 1)
    return result


def build_features(graph: HinGraph, records: Optional[Mapping[str, Mapping[int, float]]] = None) -> FeatureSet:
    """
    由稀疏特征记录构造 FeatureSet

    参数:
        graph: 异构图
        records: 节点ID -> {维度: 值}；没有任何记录的类型使用one-hot单位阵
    返回:
        覆盖全部节点的 FeatureSet
    """
    records = records or {}
    by_type: Dict[str, List[Tuple[int, int, float]]] = {}
    for node_id, entries in records.items():
        if node_id not in graph.id_to_index:
            raise IngestError(f"特征表引用了未声明的节点: {node_id}")
        idx = graph.id_to_index[node_id]
        t = graph.type_of(idx)
        local = idx - graph.type_index[t][0]
        for col, value in entries.items():
            if col < 0:
                raise IngestError(f"节点 {node_id} 的特征下标为负: {col}")
            by_type.setdefault(t, []).append((local, int(col), float(value)))

    blocks = {}
    for t in graph.type_order:
        start, stop = graph.type_index[t]
        n_t = stop - start
        if t in by_type:
            rows, cols, vals = zip(*by_type[t])
            dim = max(cols) + 1
            blocks[t] = _compact(sp.coo_matrix((vals, (rows, cols)), shape=(n_t, dim)))
        else:
            blocks[t] = sp.identity(n_t, format="csr", dtype=np.float64)
    return FeatureSet(type_order=graph.type_order, type_index=dict(graph.type_index), blocks=blocks)


def restrict_features(features: FeatureSet, graph: HinGraph, nodes: np.ndarray) -> FeatureSet:
    """把全图特征限制到派生节点集合（候选元路径模式）"""
    local_index = row_type_index(graph, nodes)
    blocks = {}
    for t, (start, stop) in local_index.items():
        g0 = graph.type_index[t][0]
        picked = nodes[start:stop] - g0
        blocks[t] = features.blocks[t][picked].tocsr()
    order = tuple(t for t in graph.type_order if t in local_index)
    return FeatureSet(type_order=order, type_index=local_index, blocks=blocks)


# ==================== 参数 ====================

class ModelParams:
    """
    模型参数块的有序集合

    块命名: proj/<类型>、gcn/W0、naive/W<层>、W、att/W<头>、att/mu/<类型>/<头>、beta、C
    """

    def __init__(self, variant: str, blocks: Mapping[str, np.ndarray], heads: int = 1,
                 activation: str = DEFAULT_ACTIVATION):
        self.variant = variant
        self.heads = int(heads)
        self.activation = activation
        self.blocks: "OrderedDict[str, np.ndarray]" = OrderedDict(
            (name, np.asarray(value, dtype=np.float64)) for name, value in blocks.items())

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.blocks:
            raise ShapeError(f"缺少参数块: {name}")
        return self.blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def names(self) -> List[str]:
        return list(self.blocks)

    @property
    def classifier(self) -> np.ndarray:
        return self["C"]

    def replace(self, blocks: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.variant, blocks, heads=self.heads, activation=self.activation)

    def copy(self) -> "ModelParams":
        return self.replace({k: v.copy() for k, v in self.blocks.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.blocks.values())

    def size(self) -> int:
        return int(sum(v.size for v in self.blocks.values()))


def glorot(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """均匀分布 ±sqrt(6/(fan_in+fan_out))，向量的 fan_out 取1"""
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ==================== 分组嵌入 ====================

@dataclass(frozen=True)
class GroupedEmbedding:
    """按组（直接元路径或端点类型）分开的嵌入块"""
    labels: Tuple[str, ...]
    blocks: Tuple[np.ndarray, ...]

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(int(b.shape[1]) for b in self.blocks)

    def block(self, label: str) -> np.ndarray:
        return self.blocks[self.labels.index(label)]

    def total(self) -> np.ndarray:
        return np.sum(self.blocks, axis=0)


def inter_concatenate(grouped: GroupedEmbedding) -> np.ndarray:
    """g_u = 各组嵌入按组顺序拼接"""
    rows = {b.shape[0] for b in grouped.blocks}
    if len(rows) > 1:
        raise ShapeError(f"各组行数不一致: {sorted(rows)}")
    return np.hstack(grouped.blocks)


def normalized_adjacency(aug: AugmentedAdjacency) -> sp.csr_matrix:
    """Â = D̃^{-1/2} Ã D̃^{-1/2}"""
    inv_sqrt = sp.diags(1.0 / np.sqrt(aug.degrees))
    return _compact(inv_sqrt @ aug.matrix @ inv_sqrt)


def direct_groups(aug: AugmentedAdjacency, type_index: Mapping[str, Tuple[int, int]],
                  type_order: Sequence[str]) -> List[Tuple[str, str]]:
    """Ã中出现的 (源类型, 邻居类型) 组合，自环保证每个 (t, t) 都在"""
    groups = []
    for s in type_order:
        r0, r1 = type_index[s]
        for t in type_order:
            c0, c1 = type_index[t]
            if aug.matrix[r0:r1, c0:c1].nnz:
                groups.append((s, t))
    return groups


def _group_slices(norm: sp.csr_matrix, type_index, groups):
    out = []
    for s, t in groups:
        r0, r1 = type_index[s]
        c0, c1 = type_index[t]
        out.append((f"{s}-{t}", r0, r1, c0, c1, norm[r0:r1, c0:c1].tocsr()))
    return out


def _intra_blocks(slices, h: np.ndarray) -> GroupedEmbedding:
    n = h.shape[0]
    labels, blocks = [], []
    for label, r0, r1, c0, c1, sub in slices:
        block = np.zeros((n, h.shape[1]))
        block[r0:r1] = sub @ h[c0:c1]
        labels.append(label)
        blocks.append(block)
    return GroupedEmbedding(labels=tuple(labels), blocks=tuple(blocks))


def intra_aggregate(aug: AugmentedAdjacency, h: np.ndarray, type_index: Mapping[str, Tuple[int, int]],
                    groups: Optional[Sequence[Tuple[str, str]]] = None) -> GroupedEmbedding:
    """
    组内聚合 e_u^(m) = Σ_v δ(τ(u,v), m) (d̃_u d̃_v)^{-1/2} h_v

    参数:
        aug: 自环增广邻接
        h: 上一层嵌入 (n, d)
        type_index: 类型 -> 行区间
        groups: (源类型, 邻居类型) 列表，默认取 Ã 中出现的全部组合
    返回:
        GroupedEmbedding，组标签形如 "A-P"；没有邻居的组为零向量
    """
    order = sorted(type_index, key=lambda t: type_index[t][0])
    if groups is None:
        groups = direct_groups(aug, type_index, order)
    return _intra_blocks(_group_slices(normalized_adjacency(aug), type_index, groups), h)


def grouped_propagate(s: PropagationState, h0: np.ndarray,
                      type_index: Mapping[str, Tuple[int, int]]) -> GroupedEmbedding:
    """
    按端点类型拆分 S·H^(0) 的列块

    参数:
        s: 传播矩阵
        h0: 投影后的特征
        type_index: 类型 -> 行区间（与s的行空间一致）
    """
    labels, blocks = [], []
    for t in sorted(type_index, key=lambda x: type_index[x][0]):
        c0, c1 = type_index[t]
        labels.append(t)
        blocks.append(np.asarray(s.matrix[:, c0:c1] @ h0[c0:c1]))
    return GroupedEmbedding(labels=tuple(labels), blocks=tuple(blocks))


def project_features(features: FeatureSet, params: ModelParams) -> np.ndarray:
    """各类型特征经各自的投影矩阵映射到统一宽度，按行空间顺序拼接"""
    parts = []
    for t in features.type_order:
        w = params[f"proj/{t}"]
        block = features.blocks[t]
        if block.shape[1] != w.shape[0]:
            raise ShapeError(f"类型 {t} 的投影形状 {w.shape} 与特征维度 {block.shape[1]} 不匹配")
        parts.append(np.asarray(block @ w))
    return np.vstack(parts)


def _as_projected(features, params: ModelParams) -> np.ndarray:
    if isinstance(features, FeatureSet):
        return project_features(features, params)
    return np.asarray(features, dtype=np.float64)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


# ==================== 模型输入 ====================

@dataclass
class ModelInputs:
    """一次训练/推理所需的全部预计算结构"""
    features: FeatureSet
    aug: Optional[AugmentedAdjacency] = None
    state: Optional[PropagationState] = None
    metapath_states: Tuple[PropagationState, ...] = ()
    metapath_labels: Tuple[str, ...] = ()
    nodes: Optional[np.ndarray] = None          # 行空间对应的全局节点下标
    _cache: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def row_count(self) -> int:
        return self.features.node_count

    @property
    def type_index(self) -> Dict[str, Tuple[int, int]]:
        return self.features.type_index

    @property
    def type_order(self) -> Tuple[str, ...]:
        return self.features.type_order

    def global_nodes(self) -> np.ndarray:
        return np.arange(self.row_count) if self.nodes is None else self.nodes

    def norm_adjacency(self) -> sp.csr_matrix:
        if "norm" not in self._cache:
            if self.aug is None:
                raise HinError("该变体需要自环增广邻接")
            self._cache["norm"] = normalized_adjacency(self.aug)
        return self._cache["norm"]

    def naive_slices(self):
        if "naive" not in self._cache:
            groups = direct_groups(self.aug, self.type_index, self.type_order)
            self._cache["naive"] = _group_slices(self.norm_adjacency(), self.type_index, groups)
        return self._cache["naive"]

    def state_columns(self) -> List[Tuple[str, int, int, sp.csr_matrix]]:
        if "columns" not in self._cache:
            if self.state is None:
                raise HinError("该变体需要预计算的传播矩阵")
            self._cache["columns"] = [(t, c0, c1, self.state.matrix[:, c0:c1].tocsr())
                                      for t, (c0, c1) in self.type_index.items()]
        return self._cache["columns"]

    def attention_support(self):
        if "support" not in self._cache:
            self._cache["support"] = [(t, *support_edges(block, c0))
                                      for t, c0, c1, block in self.state_columns()]
        return self._cache["support"]


@dataclass
class ForwardCache:
    """前向中间量，反向传播使用"""
    x: np.ndarray
    keep: Optional[np.ndarray]
    inner: Any


# ==================== 变体 ====================

class HinModel:
    """模型变体基类：负责特征投影、dropout以及投影矩阵的梯度"""
    variant = ""

    def init_params(self, inputs: ModelInputs, hidden: int, n_classes: int, rng: np.random.Generator,
                    heads: int = DEFAULT_HEADS, layers: int = DEFAULT_LAYERS,
                    activation: str = DEFAULT_ACTIVATION) -> ModelParams:
        blocks: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for t in inputs.type_order:
            blocks[f"proj/{t}"] = glorot(rng, (inputs.features.dims[t], hidden))
        blocks.update(self._init_body(inputs, hidden, rng, heads, layers))
        blocks["C"] = glorot(rng, (hidden, n_classes))
        return ModelParams(self.variant, blocks, heads=heads, activation=activation)

    def _init_body(self, inputs, hidden, rng, heads, layers) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def embed(self, params: ModelParams, inputs: ModelInputs, x: np.ndarray,
              dropout_rate: float = 0.0, rng=None):
        raise NotImplementedError

    def embed_backward(self, params: ModelParams, inputs: ModelInputs, x: np.ndarray,
                       inner, d_h: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        raise NotImplementedError

    def forward(self, params: ModelParams, inputs: ModelInputs, dropout_rate: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, ForwardCache]:
        """
        前向传播

        参数:
            dropout_rate: 训练时的dropout比例，评估时为0
            rng: 训练模块持有的随机流
        返回:
            (嵌入H, 反向所需的缓存)
        """
        x = project_features(inputs.features, params)
        keep = None
        if dropout_rate > 0.0 and rng is not None:
            x, keep = dropout(x, dropout_rate, rng, return_mask=True)
        h, inner = self.embed(params, inputs, x, dropout_rate, rng)
        return h, ForwardCache(x=x, keep=keep, inner=inner)

    def backward(self, params: ModelParams, inputs: ModelInputs, cache: ForwardCache,
                 d_h: np.ndarray) -> Dict[str, np.ndarray]:
        """嵌入梯度 dL/dH -> 除分类器外所有参数块的梯度"""
        grads, d_x = self.embed_backward(params, inputs, cache.x, cache.inner, d_h)
        if cache.keep is not None:
            d_x = d_x * cache.keep
        for t in inputs.type_order:
            start, stop = inputs.type_index[t]
            grads[f"proj/{t}"] = np.asarray(inputs.features.blocks[t].T @ d_x[start:stop])
        return grads


class GcnModel(HinModel):
    """两层GCN基线：H = Â ReLU(Â X W0)，分类器C充当第二层权重"""
    variant = "gcn"

    def _init_body(self, inputs, hidden, rng, heads, layers):
        return {"gcn/W0": glorot(rng, (hidden, hidden))}

    def embed(self, params, inputs, x, dropout_rate=0.0, rng=None):
        norm = inputs.norm_adjacency()
        a1 = np.asarray(norm @ x)
        p0 = a1 @ params["gcn/W0"]
        h1 = np.maximum(p0, 0.0)
        return np.asarray(norm @ h1), (a1, p0)

    def embed_backward(self, params, inputs, x, inner, d_h):
        a1, p0 = inner
        norm = inputs.norm_adjacency()
        d_h1 = np.asarray(norm.T @ d_h)
        d_p0 = d_h1 * (p0 > 0)
        grads = {"gcn/W0": a1.T @ d_p0}
        d_x = np.asarray(norm.T @ (d_p0 @ params["gcn/W0"].T))
        return grads, d_x


class NaiveModel(HinModel):
    """朴素模型：每层按直接元路径分组聚合再拼接，H^(l+1) = σ((Â ∘ H^(l)) W^(l))"""
    variant = "giam1"

    def _init_body(self, inputs, hidden, rng, heads, layers):
        width = len(inputs.naive_slices()) * hidden
        return {f"naive/W{i}": glorot(rng, (width, hidden)) for i in range(layers)}

    @staticmethod
    def layer_count(params: ModelParams) -> int:
        return sum(1 for name in params.names() if name.startswith("naive/W"))

    def embed(self, params, inputs, x, dropout_rate=0.0, rng=None):
        slices = inputs.naive_slices()
        h = x
        trace = []
        for i in range(self.layer_count(params)):
            g = inter_concatenate(_intra_blocks(slices, h))
            p = g @ params[f"naive/W{i}"]
            trace.append((g, p))
            h = activate(p, params.activation)
        return h, trace

    def embed_backward(self, params, inputs, x, inner, d_h):
        slices = inputs.naive_slices()
        grads = {}
        for i in reversed(range(len(inner))):
            g, p = inner[i]
            w = params[f"naive/W{i}"]
            d_p = d_h * activate_grad(p, params.activation)
            grads[f"naive/W{i}"] = g.T @ d_p
            d_g = d_p @ w.T
            width = d_g.shape[1] // len(slices)
            d_h = np.zeros((d_g.shape[0], width))
            for j, (_, r0, r1, c0, c1, sub) in enumerate(slices):
                d_h[c0:c1] += np.asarray(sub.T @ d_g[r0:r1, j * width:(j + 1) * width])
        return grads, d_h


class ImprovedModel(HinModel):
    """改进模型：一次性 H = σ((S^(k) ∘ H^(0)) W)，按端点类型分组"""
    variant = "giam2"

    def _init_body(self, inputs, hidden, rng, heads, layers):
        return {"W": glorot(rng, (len(inputs.type_order) * hidden, hidden))}

    def embed(self, params, inputs, x, dropout_rate=0.0, rng=None):
        g = np.hstack([np.asarray(block @ x[c0:c1]) for _, c0, c1, block in inputs.state_columns()])
        p = g @ params["W"]
        return activate(p, params.activation), (g, p)

    def embed_backward(self, params, inputs, x, inner, d_h):
        g, p = inner
        d_p = d_h * activate_grad(p, params.activation)
        grads = {"W": g.T @ d_p}
        d_g = d_p @ params["W"].T
        width = x.shape[1]
        d_x = np.zeros_like(x)
        for j, (_, c0, c1, block) in enumerate(inputs.state_columns()):
            d_x[c0:c1] += np.asarray(block.T @ d_g[:, j * width:(j + 1) * width])
        return grads, d_x


class AttentionModel(HinModel):
    """完整模型：每个端点类型组内，在S^(k)支撑集上做多头节点级注意力"""
    variant = "giam"

    @staticmethod
    def head_width(hidden: int, heads: int) -> int:
        return max(1, hidden // heads)

    def _init_body(self, inputs, hidden, rng, heads, layers):
        dh = self.head_width(hidden, heads)
        body = OrderedDict()
        for h in range(heads):
            body[f"att/W{h}"] = glorot(rng, (hidden, dh))
        for t in inputs.type_order:
            for h in range(heads):
                body[f"att/mu/{t}/{h}"] = glorot(rng, (2 * dh,))
        body["W"] = glorot(rng, (len(inputs.type_order) * heads * dh, hidden))
        return body

    def _head_params(self, params, t):
        ws = [params[f"att/W{h}"] for h in range(params.heads)]
        mus = [params[f"att/mu/{t}/{h}"] for h in range(params.heads)]
        return ws, mus

    def embed(self, params, inputs, x, dropout_rate=0.0, rng=None):
        outs, caches = [], []
        for t, rows, cols in inputs.attention_support():
            ws, mus = self._head_params(params, t)
            out, head_caches = group_attention(x, ws, mus, rows, cols, params.activation, dropout_rate, rng)
            outs.append(out)
            caches.append(head_caches)
        g = np.hstack(outs)
        p = g @ params["W"]
        return activate(p, params.activation), (g, p, caches)

    def embed_backward(self, params, inputs, x, inner, d_h):
        g, p, caches = inner
        d_p = d_h * activate_grad(p, params.activation)
        grads: Dict[str, np.ndarray] = {"W": g.T @ d_p}
        d_g = d_p @ params["W"].T
        d_x = np.zeros_like(x)
        for h in range(params.heads):
            grads[f"att/W{h}"] = np.zeros_like(params[f"att/W{h}"])
        offset = 0
        for (t, rows, cols), head_caches in zip(inputs.attention_support(), caches):
            ws, mus = self._head_params(params, t)
            for h, (w, mu, cache) in enumerate(zip(ws, mus, head_caches)):
                dh = w.shape[1]
                d_out = d_g[:, offset:offset + dh]
                offset += dh
                dx_h, dw_h, dmu_h = head_backward(x, w, mu, rows, cols, cache, d_out, params.activation)
                d_x += dx_h
                grads[f"att/W{h}"] += dw_h
                grads[f"att/mu/{t}/{h}"] = dmu_h
        return grads, d_x


class MetaPathAttentionModel(HinModel):
    """诊断变体：每条候选元路径各自传播，共享W，再用全局softmax权重组合"""
    variant = "giam3"

    def _init_body(self, inputs, hidden, rng, heads, layers):
        if not inputs.metapath_states:
            raise HinError("giam3 需要候选元路径的传播矩阵")
        return {"W": glorot(rng, (hidden, hidden)),
                "beta": np.zeros(len(inputs.metapath_states))}

    def embed(self, params, inputs, x, dropout_rate=0.0, rng=None):
        gs, ps, es = [], [], []
        for state in inputs.metapath_states:
            g = np.asarray(state.matrix @ x)
            p = g @ params["W"]
            gs.append(g)
            ps.append(p)
            es.append(activate(p, params.activation))
        weights = _softmax_rows(params["beta"])
        h = giam3_forward(es, params["beta"])
        return h, (gs, ps, es, weights)

    def embed_backward(self, params, inputs, x, inner, d_h):
        gs, ps, es, weights = inner
        scores = np.array([np.sum(d_h * e) for e in es])
        grads = {"beta": weights * (scores - np.dot(weights, scores)),
                 "W": np.zeros_like(params["W"])}
        d_x = np.zeros_like(x)
        for state, g, p, w_m in zip(inputs.metapath_states, gs, ps, weights):
            d_p = w_m * d_h * activate_grad(p, params.activation)
            grads["W"] += g.T @ d_p
            d_x += np.asarray(state.matrix.T @ (d_p @ params["W"].T))
        return grads, d_x


MODEL_REGISTRY = {
    "gcn": GcnModel,
    "giam1": NaiveModel,
    "giam2": ImprovedModel,
    "giam": AttentionModel,
    "giam3": MetaPathAttentionModel,
}


def get_model(variant: str) -> HinModel:
    if variant not in MODEL_REGISTRY:
        raise HinError(f"未知的模型变体: {variant}（可选: {', '.join(MODEL_REGISTRY)}）")
    return MODEL_REGISTRY[variant]()


# ==================== 函数式前向接口 ====================

def gcn_forward(aug: AugmentedAdjacency, h0: np.ndarray, params: ModelParams) -> np.ndarray:
    """
    两层GCN：softmax(Â ReLU(Â H^(0) W^(0)) W^(1))

    参数:
        aug: 自环增广邻接
        h0: 输入特征（已是统一宽度）
        params: 需要 gcn/W0 与 C
    返回:
        每行和为1的类别概率
    """
    norm = normalized_adjacency(aug)
    h1 = np.maximum(np.asarray(norm @ (np.asarray(h0) @ params["gcn/W0"])), 0.0)
    return _softmax_rows(np.asarray(norm @ h1) @ params["C"])


def naive_forward(aug: AugmentedAdjacency, features, params: ModelParams, layers: int,
                  type_index: Optional[Mapping[str, Tuple[int, int]]] = None) -> np.ndarray:
    """
    朴素模型的k层前向 H^(k)

    参数:
        features: FeatureSet，或已投影的稠密矩阵（此时需给出 type_index）
        layers: 层数 k >= 1
    """
    if layers < 1:
        raise ValueError(f"层数至少为1: {layers}")
    if isinstance(features, FeatureSet):
        type_index = features.type_index
    elif type_index is None:
        raise ShapeError("稠密输入需要提供 type_index")
    h = _as_projected(features, params)
    for i in range(layers):
        h = activate(inter_concatenate(intra_aggregate(aug, h, type_index)) @ params[f"naive/W{i}"],
                     params.activation)
    return h


def improved_forward(s: PropagationState, features, params: ModelParams,
                     type_index: Optional[Mapping[str, Tuple[int, int]]] = None) -> np.ndarray:
    """H = σ((S^(k) ∘ H^(0)) W)，σ默认为恒等"""
    if isinstance(features, FeatureSet):
        type_index = features.type_index
    elif type_index is None:
        raise ShapeError("稠密输入需要提供 type_index")
    h0 = _as_projected(features, params)
    return activate(inter_concatenate(grouped_propagate(s, h0, type_index)) @ params["W"], params.activation)


def giam_forward(s: PropagationState, features, params: ModelParams,
                 type_index: Optional[Mapping[str, Tuple[int, int]]] = None) -> np.ndarray:
    """改进模型的组内加权和换成S支撑集上的多头节点级注意力（评估模式，无dropout）"""
    if isinstance(features, FeatureSet):
        type_index = features.type_index
    elif type_index is None:
        raise ShapeError("稠密输入需要提供 type_index")
    x = _as_projected(features, params)
    model = AttentionModel()
    outs = []
    for t in sorted(type_index, key=lambda name: type_index[name][0]):
        c0, c1 = type_index[t]
        rows, cols = support_edges(s.matrix[:, c0:c1].tocsr(), c0)
        ws, mus = model._head_params(params, t)
        out, _ = group_attention(x, ws, mus, rows, cols, params.activation)
        outs.append(out)
    return activate(np.hstack(outs) @ params["W"], params.activation)


def giam3_forward(embeddings: Sequence[np.ndarray], metapath_attention: np.ndarray) -> np.ndarray:
    """
    元路径级注意力：softmax(β) 加权的凸组合

    参数:
        embeddings: 每条元路径的嵌入（同形状）
        metapath_attention: 每条元路径的标量logit
    """
    logits = np.asarray(metapath_attention, dtype=np.float64)
    if len(embeddings) != len(logits):
        raise ShapeError(f"元路径嵌入数 {len(embeddings)} 与注意力logit数 {len(logits)} 不一致")
    weights = _softmax_rows(logits)
    return np.tensordot(weights, np.stack(embeddings), axes=1)


# ==================== 候选元路径模式 ====================

def _derived_adjacency(graph: HinGraph, paths: Sequence[MetaPath], offsets: Dict[str, int], size: int):
    union = sp.csr_matrix((size, size), dtype=np.float64)
    for path in paths:
        block = meta_path_adjacency(graph, path).tocoo()
        rows = block.row + offsets[path.source_type]
        cols = block.col + offsets[path.target_type]
        ones = np.ones(len(rows))
        union = union + sp.coo_matrix((ones, (rows, cols)), shape=(size, size)) \
            + sp.coo_matrix((ones, (cols, rows)), shape=(size, size))
    union = _compact(union)
    union = _compact(union - sp.diags(union.diagonal()))
    union.data[:] = 1.0
    return union


def candidate_metapath_state(graph: HinGraph, candidate_set: Sequence[MetaPath], k: int,
                             constrained: bool = True,
                             node_types: Optional[Sequence[str]] = None) -> PropagationState:
    """
    候选元路径模式的传播矩阵

    以候选元路径邻接的并集为边集构造派生图（节点为各路径的端点类型），
    然后走 增广 -> 转移 -> 零模型 -> 游走 的标准流程。

    参数:
        graph: 异构图
        candidate_set: 候选元路径，如 [M-D-M, M-A-M]
        k: 步数
        constrained: False 时使用无约束游走
        node_types: 指定派生图的节点类型（默认为候选路径端点类型）
    返回:
        PropagationState，nodes 记录派生图每一行对应的全局节点下标
    """
    if not candidate_set:
        raise SchemaError("候选元路径集合为空")
    wanted = set(node_types) if node_types is not None else \
        {p.source_type for p in candidate_set} | {p.target_type for p in candidate_set}
    types = [t for t in graph.type_order if t in wanted]
    offsets, pieces, size = {}, [], 0
    for t in types:
        offsets[t] = size
        pieces.append(graph.nodes_of(t))
        size += len(pieces[-1])
    for path in candidate_set:
        if path.source_type not in offsets or path.target_type not in offsets:
            raise SchemaError(f"元路径 {path.label} 的端点类型不在派生节点集合中")
    nodes = np.concatenate(pieces)

    union = _derived_adjacency(graph, candidate_set, offsets, size)
    if union.nnz == 0:
        raise SchemaError(f"候选元路径 {[p.label for p in candidate_set]} 的邻接并集为空")
    log_info(f"🧭 派生图: 节点={size}（类型 {'/'.join(types)}）, 边={union.nnz // 2}")
    return build_state(augment_matrix(union), k, constrained=constrained, nodes=nodes)


def prepare_inputs(variant: str, graph: HinGraph, features: FeatureSet, k: int,
                   constrained: bool = True, candidates: Sequence[MetaPath] = ()) -> ModelInputs:
    """
    按变体预计算模型输入

    gcn/giam1 使用全图 Ã；giam2/giam 使用 S^(k)（有候选元路径时在派生图上）；
    giam3 为每条候选元路径各算一个 S^(k)，共享同一派生节点集合。
    """
    if variant in ("gcn", "giam1"):
        return ModelInputs(features=features, aug=augment(graph))
    if variant == "giam3":
        if not candidates:
            raise HinError("giam3 需要候选元路径")
        types = {p.source_type for p in candidates} | {p.target_type for p in candidates}
        states = tuple(candidate_metapath_state(graph, [p], k, constrained, node_types=types)
                       for p in candidates)
        nodes = states[0].nodes
        return ModelInputs(features=restrict_features(features, graph, nodes), metapath_states=states,
                           metapath_labels=tuple(p.label for p in candidates), nodes=nodes)
    if variant in ("giam2", "giam"):
        if candidates:
            state = candidate_metapath_state(graph, candidates, k, constrained)
            return ModelInputs(features=restrict_features(features, graph, state.nodes), state=state,
                               nodes=state.nodes)
        return ModelInputs(features=features, state=build_state(augment(graph), k, constrained))
    raise HinError(f"未知的模型变体: {variant}")
