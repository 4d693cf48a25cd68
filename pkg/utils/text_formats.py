"""
文本格式读写 - 节点/边/特征/标签表、嵌入、稀疏矩阵、谱、训练历史、参数检查点和评估报告

所有格式都是UTF-8纯文本，由本模块写出的文件都能被本模块读回。
"""

import csv
import hashlib
import json
import math
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from config import ZERO_EIGEN_TOL
from .errors import IngestError
from .evaluation import EvalReport, REPORT_COLUMNS
from .hin_graph import HinGraph
from .hin_models import ModelParams
from .propagation import MixingWindow, SpectrumResult, mixing_window
from .training import TrainHistory

FLOAT_FORMAT = "%.17g"
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "val_acc"]


def _read_tsv(path: str, names: Sequence[str], required: int) -> List[Tuple[str, ...]]:
    if not os.path.exists(path):
        raise IngestError(f"文件不存在: {path}")
    frame = pd.read_csv(path, sep="\t", header=None, names=list(names), dtype=str, keep_default_na=False,
                        quoting=csv.QUOTE_NONE, engine="python", skip_blank_lines=True).fillna("")
    records = []
    for lineno, row in enumerate(frame.itertuples(index=False), start=1):
        fields = tuple(v for v in row)
        if any(not f for f in fields[:required]):
            raise IngestError(f"{path} 第{lineno}行缺少必需字段")
        records.append(fields)
    return records


def read_node_table(path: str) -> List[Tuple[str, ...]]:
    """id<TAB>type[<TAB>label]"""
    return _read_tsv(path, ["id", "type", "label"], 2)


def read_edge_table(path: str) -> List[Tuple[str, ...]]:
    """src_id<TAB>dst_id[<TAB>edge_type]"""
    return _read_tsv(path, ["src", "dst", "edge_type"], 2)


def read_feature_table(path: str) -> Dict[str, Dict[int, float]]:
    """id<TAB>index:value<SPACE>index:value…"""
    if not os.path.exists(path):
        raise IngestError(f"文件不存在: {path}")
    records: Dict[str, Dict[int, float]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            node_id, _, rest = line.partition("\t")
            entries = {}
            for token in rest.split():
                index, sep, value = token.partition(":")
                if not sep:
                    raise IngestError(f"{path} 第{lineno}行特征项格式错误: {token}")
                try:
                    entries[int(index)] = float(value)
                except ValueError as exc:
                    raise IngestError(f"{path} 第{lineno}行特征项无法解析: {token}") from exc
            records[node_id.strip()] = entries
    return records


def read_labels(path: str) -> Dict[str, str]:
    """id<TAB>label"""
    return {rec[0]: rec[1] for rec in _read_tsv(path, ["id", "label"], 2)}


def write_graph(graph: HinGraph, node_path: str, edge_path: str):
    with open(node_path, "w", encoding="utf-8") as f:
        for node_id, node_type, label in zip(graph.node_ids, graph.node_types,
                                             graph.node_labels or [""] * graph.node_count):
            f.write(f"{node_id}\t{node_type}" + (f"\t{label}" if label else "") + "\n")
    with open(edge_path, "w", encoding="utf-8") as f:
        for (u, v), etype in zip(graph.edges, graph.edge_types):
            f.write(f"{graph.node_ids[u]}\t{graph.node_ids[v]}\t{etype}\n")


def write_labels(path: str, ids: Sequence[str], labels: Sequence):
    with open(path, "w", encoding="utf-8") as f:
        for node_id, label in zip(ids, labels):
            f.write(f"{node_id}\t{label}\n")


# ==================== 嵌入 ====================

def write_embeddings(path: str, ids: Sequence[str], embeddings: np.ndarray, variant: str, k: int):
    """首行 `# variant=<v>\tk=<k>`，之后每行 id<TAB>v1<TAB>v2…"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# variant={variant}\tk={k}\n")
        for node_id, row in zip(ids, embeddings):
            f.write(node_id + "\t" + "\t".join(FLOAT_FORMAT % v for v in row) + "\n")


def read_embeddings(path: str) -> Tuple[Dict[str, str], List[str], np.ndarray]:
    """返回 (头部字段, ID列表, 嵌入矩阵)"""
    header: Dict[str, str] = {}
    ids, rows = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if line.startswith("#"):
                for part in line[1:].strip().split("\t"):
                    key, _, value = part.partition("=")
                    header[key.strip()] = value.strip()
                continue
            if not line:
                continue
            fields = line.split("\t")
            ids.append(fields[0])
            rows.append([float(v) for v in fields[1:]])
    return header, ids, np.array(rows, dtype=np.float64).reshape(len(ids), -1)


# ==================== 稀疏矩阵 ====================

def write_coo(path: str, matrix: sp.spmatrix):
    """`# rows cols` 头，然后 row<TAB>col<TAB>value"""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# {coo.shape[0]} {coo.shape[1]}\n")
        for i in order:
            f.write(f"{coo.row[i]}\t{coo.col[i]}\t{FLOAT_FORMAT % coo.data[i]}\n")


def read_coo(path: str) -> sp.csr_matrix:
    with open(path, "r", encoding="utf-8") as f:
        rows, cols = (int(x) for x in f.readline()[1:].split())
        try:
            frame = pd.read_csv(f, sep="\t", header=None, names=["row", "col", "value"],
                                float_precision="round_trip")
        except pd.errors.EmptyDataError:
            return sp.csr_matrix((rows, cols), dtype=np.float64)
    return sp.csr_matrix((frame["value"].to_numpy(dtype=np.float64),
                          (frame["row"].to_numpy(), frame["col"].to_numpy())), shape=(rows, cols))


def write_dense_grid(path: str, matrix):
    """热力图用的稠密CSV（无表头）"""
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    pd.DataFrame(dense).to_csv(path, header=False, index=False, float_format=FLOAT_FORMAT)


def read_dense_grid(path: str) -> np.ndarray:
    return pd.read_csv(path, header=None, float_precision="round_trip").to_numpy(dtype=np.float64)


# ==================== 谱 ====================

def write_spectrum(path: str, spectrum: SpectrumResult):
    """c<TAB>lambda<TAB>t_enter<TAB>t_exit，最后一个c没有下一特征值，t_enter 留空"""
    lam = spectrum.eigenvalues
    with open(path, "w", encoding="utf-8") as f:
        f.write("c\tlambda\tt_enter\tt_exit\n")
        for c in range(1, len(lam) + 1):
            if 2 <= c < len(lam):
                window = mixing_window(spectrum, c)
                enter, exit_ = window.t_enter, window.t_exit
            else:
                enter = math.nan if c == len(lam) else (math.inf if lam[c] < ZERO_EIGEN_TOL else 1.0 / lam[c])
                exit_ = math.inf if lam[c - 1] < ZERO_EIGEN_TOL else 1.0 / lam[c - 1]
            enter_text = "" if math.isnan(enter) else MixingWindow.format_time(enter)
            f.write(f"{c}\t{FLOAT_FORMAT % lam[c - 1]}\t{enter_text}\t{MixingWindow.format_time(exit_)}\n")


def read_spectrum(path: str) -> pd.DataFrame:
    return pd.read_csv(path, sep="\t", keep_default_na=False, dtype={"t_enter": str, "t_exit": str})


# ==================== 训练历史与检查点 ====================

def write_history(path: str, history: TrainHistory):
    frame = pd.DataFrame({"epoch": np.arange(history.epochs), "train_loss": history.train_loss,
                          "val_loss": history.val_loss, "val_acc": history.val_acc}, columns=HISTORY_COLUMNS)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_history(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def write_checkpoint(path: str, params: ModelParams):
    """
    参数检查点：首行记录变体信息，每个块以 `# name rows cols` 开头，向量块写作 `# name length`
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#! variant={params.variant} heads={params.heads} activation={params.activation}\n")
        for name, value in params.blocks.items():
            if value.ndim == 1:
                f.write(f"# {name} {value.shape[0]}\n")
                f.write("\t".join(FLOAT_FORMAT % v for v in value) + "\n")
                continue
            f.write(f"# {name} {value.shape[0]} {value.shape[1]}\n")
            for row in value:
                f.write("\t".join(FLOAT_FORMAT % v for v in row) + "\n")


def load_checkpoint(path: str) -> ModelParams:
    """读回 write_checkpoint 写出的参数"""
    meta: Dict[str, str] = {}
    blocks: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("#!"):
            for part in line[2:].split():
                key, _, value = part.partition("=")
                meta[key] = value
            i += 1
        elif line.startswith("# "):
            fields = line[2:].split()
            name = fields[0]
            if len(fields) == 2:
                blocks[name] = np.array([float(v) for v in lines[i + 1].split("\t") if v], dtype=np.float64)
                i += 2
            else:
                rows, cols = int(fields[1]), int(fields[2])
                data = [[float(v) for v in lines[i + 1 + r].split("\t") if v] for r in range(rows)]
                blocks[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
                i += 1 + rows
        else:
            i += 1
    if not blocks:
        raise IngestError(f"检查点中没有参数块: {path}")
    return ModelParams(meta.get("variant", ""), blocks, heads=int(meta.get("heads", 1)),
                       activation=meta.get("activation", "identity"))


# ==================== 评估报告与清单 ====================

def write_report(path: str, report):
    """metric,ratio,mean,stddev；接受 EvalReport 或已构造的 DataFrame"""
    frame = report.to_frame() if isinstance(report, EvalReport) else report
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_report(path: str) -> pd.DataFrame:
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"评估报告缺少列: {missing}")
    return frame


def write_table(path: str, frame: pd.DataFrame):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def file_checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def text_checksum(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_manifest(path: str, manifest: Dict):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, ensure_ascii=False, sort_keys=True)


def read_manifest(path: str) -> Dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
