"""Co-tagging network: projection of the bipartite graph onto its tags."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np
import scipy.sparse as sp

from .errors import NumericError
from .ingest import BipartiteTagGraph

logger = logging.getLogger(__name__)

_ROW_CHUNK = 512


class CotagGraph:
    """Weighted undirected tag graph; ``weights[s, t]`` counts shared questions.

    ``weights`` is a symmetric CSR matrix with an empty diagonal and sorted
    column indices.
    """

    def __init__(self, tag_names, weights: sp.csr_matrix):
        self.tag_names = tuple(tag_names)
        w = sp.csr_matrix(weights, dtype=np.int64)
        w.setdiag(0)
        w.eliminate_zeros()
        w.sort_indices()
        if w.shape != (len(self.tag_names),) * 2:
            raise ValueError("weight matrix shape does not match tag count")
        if (w != w.T).nnz:
            raise ValueError("weight matrix is not symmetric")
        self.weights = w

    @property
    def n_tags(self) -> int:
        return len(self.tag_names)

    @property
    def n_edges(self) -> int:
        return self.weights.nnz // 2

    @property
    def edges(self) -> dict[tuple[int, int], int]:
        upper = sp.triu(self.weights, k=1).tocoo()
        return {(int(s), int(t)): int(w) for s, t, w in zip(upper.row, upper.col, upper.data)}

    def weighted_degrees(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel().astype(np.int64)

    def unweighted_degrees(self) -> np.ndarray:
        return np.diff(self.weights.indptr)

    def _check_tag(self, t):
        if not 0 <= t < self.n_tags:
            raise KeyError(f"unknown tag id {t}")

    def __repr__(self):
        return f"CotagGraph(n_tags={self.n_tags}, n_edges={self.n_edges})"


def project(bipartite: BipartiteTagGraph) -> CotagGraph:
    """Tag-tag weights from shared questions (B @ B.T minus the diagonal)."""
    b = bipartite.to_sparse()
    return CotagGraph(bipartite.tag_names, (b @ b.T).tocsr())


def weighted_degree(g: CotagGraph, t: int) -> int:
    g._check_tag(t)
    w = g.weights
    return int(w.data[w.indptr[t] : w.indptr[t + 1]].sum())


def unweighted_degree(g: CotagGraph, t: int) -> int:
    g._check_tag(t)
    return int(g.weights.indptr[t + 1] - g.weights.indptr[t])


def _cycle_sums(m: sp.csr_matrix) -> np.ndarray:
    """Diagonal of m @ m @ m for symmetric m, computed in row blocks."""
    n = m.shape[0]
    out = np.zeros(n)
    for start in range(0, n, _ROW_CHUNK):
        block = m[start : start + _ROW_CHUNK]
        out[start : start + block.shape[0]] = np.asarray((block @ m).multiply(block).sum(axis=1)).ravel()
    return out


def _average(numerator: np.ndarray, degrees: np.ndarray) -> float:
    pairs = degrees * (degrees - 1.0)
    per_node = np.divide(numerator, pairs, out=np.zeros(len(degrees)), where=pairs > 0)
    return float(per_node.sum() / len(degrees))


def triangles(g: CotagGraph) -> np.ndarray:
    """Number of triangles at each node."""
    a = g.weights.copy()
    a.data = np.ones_like(a.data, dtype=float)
    return np.rint(_cycle_sums(a) / 2).astype(np.int64)


def clustering_unweighted(g: CotagGraph) -> float:
    if g.n_tags == 0:
        logger.warning("clustering of an empty graph is 0 by convention")
        return 0.0
    return _average(2.0 * triangles(g), g.unweighted_degrees().astype(float))


def _geometric_clustering(g: CotagGraph, transform) -> float:
    if g.n_edges == 0:
        raise NumericError("no maximum weight: graph has no edges")
    m = g.weights.astype(float)
    m.data = transform(m.data)
    m.data = np.cbrt(m.data / m.data.max())
    return _average(_cycle_sums(m), g.unweighted_degrees().astype(float))


def clustering_weighted(g: CotagGraph) -> float:
    """Geometric-mean weighted clustering with weights scaled by the global max."""
    return _geometric_clustering(g, lambda w: w)


def clustering_logweighted(g: CotagGraph) -> float:
    """As :func:`clustering_weighted` but on ``log(w + 1)`` weights."""
    return _geometric_clustering(g, np.log1p)


@dataclass(frozen=True)
class ClusteringReport:
    c_unweighted: float
    c_weighted: float
    c_logweighted: float
    n_nodes_deg_lt2: int

    @property
    def log_c_weighted(self) -> float:
        return math.log(self.c_weighted) if self.c_weighted > 0 else -math.inf

    def to_dict(self) -> dict:
        log_cw = self.log_c_weighted
        return {
            "C": self.c_unweighted,
            "Cw": self.c_weighted,
            "logCw": log_cw if math.isfinite(log_cw) else None,
            "Clw": self.c_logweighted,
            "n_nodes_deg_lt2": self.n_nodes_deg_lt2,
        }


def clustering_report(g: CotagGraph) -> ClusteringReport:
    return ClusteringReport(
        clustering_unweighted(g),
        clustering_weighted(g),
        clustering_logweighted(g),
        int(np.count_nonzero(g.unweighted_degrees() < 2)),
    )


def write_edge_csv(g: CotagGraph, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["tag_s", "tag_t", "weight"])
    for (s, t), w in sorted(g.edges.items()):
        writer.writerow([g.tag_names[s], g.tag_names[t], w])
