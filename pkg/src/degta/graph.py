"""Graph storage plus the self-loop-augmented matrices used by every encoder."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

UNREACHED = -1
SPLIT_NAMES = ("train", "val", "test")


class GraphError(ValueError):
    """Raised when a graph or one of its attachments violates an invariant."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph in CSR form with dense node attributes.

    ``indptr``/``indices`` hold both directions of every edge, sorted by
    column within each row, with no self-loops.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    splits: dict[str, np.ndarray] | None = None
    dropped_self_loops: int = field(default=0, compare=False)

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return len(self.indices) // 2

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as (src, dst), grouped by src."""
        src = np.repeat(np.arange(self.num_nodes), self.degree)
        return src, self.indices.copy()

    def edge_list(self) -> list[tuple[int, int]]:
        src, dst = self.directed_edges()
        keep = src < dst
        return list(zip(src[keep].tolist(), dst[keep].tolist()))

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency().toarray()

    def with_attachments(self, labels=None, splits=None) -> Graph:
        """Copy of the graph with labels and/or splits attached and validated."""
        labels = self.labels if labels is None else np.asarray(labels)
        splits = self.splits if splits is None else splits
        if labels is not None and labels.ndim == 1 and len(labels) != self.num_nodes:
            raise GraphError(f"labels length {len(labels)} != num_nodes {self.num_nodes}")
        if splits is not None:
            splits = _check_splits(splits, self.num_nodes)
        return Graph(self.num_nodes, self.indptr, self.indices, self.features,
                     labels, splits, self.dropped_self_loops)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if self.num_nodes != other.num_nodes:
            return False
        if not (np.array_equal(self.indptr, other.indptr) and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.features, other.features)):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        if (self.splits is None) != (other.splits is None):
            return False
        if self.splits is not None:
            if self.splits.keys() != other.splits.keys():
                return False
            return all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits)
        return True

    __hash__ = None


def _check_splits(splits, n):
    out = {}
    seen = np.zeros(n, dtype=bool)
    for name, idx in splits.items():
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise GraphError(f"split '{name}' has index out of range [0,{n})")
        if len(np.unique(idx)) != len(idx):
            raise GraphError(f"split '{name}' has duplicate indices")
        if seen[idx].any():
            raise GraphError(f"split '{name}' overlaps another split")
        seen[idx] = True
        out[name] = idx
    return out


def build_graph(edge_list, features, labels=None, splits=None, *, num_nodes=None,
                self_loops="drop") -> Graph:
    """Build a symmetric CSR graph.

    Duplicate and reversed edges collapse to one undirected edge. Self-loops
    are dropped (and counted in ``dropped_self_loops``) unless
    ``self_loops="error"``.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.ndim != 2:
        raise GraphError(f"features must be an N x d matrix, got shape {features.shape}")
    n = features.shape[0] if num_nodes is None else int(num_nodes)
    if n < 1:
        raise GraphError("graph needs at least one node")
    if features.shape[0] != n:
        raise GraphError(f"features have {features.shape[0]} rows, expected {n}")

    pairs = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(1) | (pairs >= n).any(1)][0]
        raise GraphError(f"edge ({bad[0]}, {bad[1]}) has node index out of range [0,{n})")
    loops = pairs[:, 0] == pairs[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        if self_loops == "error":
            raise GraphError(f"{n_loops} self-loop(s) in edge list")
        logger.warning("dropped %d self-loop(s)", n_loops)
        pairs = pairs[~loops]

    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    g = Graph(n, adj.indptr.astype(np.int64), adj.indices.astype(np.int64), features,
              dropped_self_loops=n_loops)
    if labels is not None or splits is not None:
        g = g.with_attachments(labels, splits)
    return g


@dataclass(frozen=True)
class DerivedMatrices:
    degree: np.ndarray
    rw_normalized: np.ndarray
    sym_laplacian: np.ndarray


def derive_matrices(g: Graph) -> DerivedMatrices:
    """Random-walk adjacency and symmetric Laplacian of A + I (dense)."""
    a_tilde = g.dense_adjacency() + np.eye(g.num_nodes)
    d_tilde = a_tilde.sum(axis=1)
    rw = a_tilde / d_tilde[:, None]
    inv_sqrt = 1.0 / np.sqrt(d_tilde)
    lap = (np.diag(d_tilde) - a_tilde) * inv_sqrt[:, None] * inv_sqrt[None, :]
    lap = 0.5 * (lap + lap.T)
    return DerivedMatrices(g.degree.copy(), rw, lap)


def bfs_distances(g: Graph, source: int, cap: int) -> np.ndarray:
    """Hop distances from ``source``; anything at distance >= cap is UNREACHED."""
    if not 0 <= source < g.num_nodes:
        raise GraphError(f"source {source} out of range")
    dist = np.full(g.num_nodes, UNREACHED, dtype=np.int64)
    if cap < 1:
        return dist
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if dist[u] + 1 >= cap:
            continue
        for v in g.neighbors(u):
            if dist[v] == UNREACHED:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def distance_matrix(g: Graph, cap: int) -> np.ndarray:
    return np.stack([bfs_distances(g, s, cap) for s in range(g.num_nodes)])


def check_permutation(pi, n: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (n,) or not np.array_equal(np.sort(pi), np.arange(n)):
        raise GraphError("pi is not a permutation of [0, N)")
    return pi


def permute_rows(x: np.ndarray, pi) -> np.ndarray:
    """Move row u to position pi[u]."""
    out = np.empty_like(x)
    out[pi] = x
    return out


def permute(g: Graph, pi) -> Graph:
    """Relabel node u as pi[u]; rows of features/labels and split indices follow."""
    pi = check_permutation(pi, g.num_nodes)
    src, dst = g.directed_edges()
    keep = src < dst
    edges = np.stack([pi[src[keep]], pi[dst[keep]]], axis=1)
    labels = None
    if g.labels is not None:
        labels = permute_rows(g.labels, pi) if g.labels.ndim == 1 and len(g.labels) == g.num_nodes else g.labels
    splits = None if g.splits is None else {k: pi[v] for k, v in g.splits.items()}
    return build_graph(edges, permute_rows(g.features, pi), labels, splits)


def inverse_permutation(pi) -> np.ndarray:
    pi = np.asarray(pi)
    inv = np.empty_like(pi)
    inv[pi] = np.arange(len(pi))
    return inv


def neighborhoods(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """(src, dst) pairs of A + I, grouped by src, self-loop included."""
    n = g.num_nodes
    src, dst = g.directed_edges()
    src = np.concatenate([src, np.arange(n)])
    dst = np.concatenate([dst, np.arange(n)])
    order = np.lexsort((dst, src))
    return src[order], dst[order]


def candidate_mask(g: Graph) -> np.ndarray:
    """Boolean N x N mask of non-neighbors excluding self (1 - A - I)."""
    mask = g.dense_adjacency() == 0
    np.fill_diagonal(mask, False)
    return mask
