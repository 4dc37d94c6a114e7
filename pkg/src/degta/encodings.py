"""Initial positional (P) and structural (S) node encodings, each N x K."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, derive_matrices

PE_KINDS = ("jaccard", "lappe", "rwpe")
SE_KINDS = ("rwse", "dse", "tcse")


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class JaccardConfig:
    K: int
    h: float = 1.0

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("bandwidth h must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass(frozen=True)
class EncodingSet:
    P: np.ndarray
    S: np.ndarray
    K: int
    pe_kind: str
    se_kind: str
    pairwise_jaccard: np.ndarray | None = None
    h: float = 1.0


def _walk_powers(g: Graph, K: int):
    """Yield A^0 .. A^(K-1) for the random-walk matrix of A + I.

    Each entry sums its terms in sorted order, so relabelling the nodes
    permutes the result exactly (no summation-order rounding drift).
    """
    n = g.num_nodes
    src, dst = g.directed_edges()
    src = np.concatenate([src, np.arange(n)])
    dst = np.concatenate([dst, np.arange(n)])
    deg = np.bincount(dst, minlength=n)
    inv_deg = 1.0 / deg
    order = np.lexsort((src, dst))
    nbrs = np.split(src[order], np.cumsum(deg)[:-1])  # N~(j) for each column j
    groups = []
    for d in np.unique(deg):
        cols = np.flatnonzero(deg == d)
        groups.append((cols, np.stack([nbrs[j] for j in cols])))
    power = np.eye(n)
    for step in range(K):
        yield power
        if step == K - 1:
            break
        nxt = np.empty_like(power)
        for cols, idx in groups:
            terms = power[:, idx] * inv_deg[idx]  # N x cols x d
            terms.sort(axis=-1)
            acc = terms[..., 0].copy()
            for m in range(1, terms.shape[-1]):
                acc += terms[..., m]
            nxt[:, cols] = acc
        power = nxt


def rwse(g: Graph, K: int) -> np.ndarray:
    """Self-return probabilities of the lazy random walk for 0..K-1 steps."""
    return np.stack([np.diag(p).copy() for p in _walk_powers(g, K)], axis=1)


def rwpe(g: Graph, K: int) -> np.ndarray:
    """L2 norm of each node's k-step transition distribution, k = 0..K-1."""
    return np.stack([np.sqrt(np.sort(p * p, axis=1).sum(axis=1)) for p in _walk_powers(g, K)], axis=1)


def dse(g: Graph, K: int) -> np.ndarray:
    """Scaled degree followed by a log2-binned degree one-hot."""
    if K < 2:
        raise ValueError("dse needs K >= 2")
    deg = g.degree.astype(np.float64)
    out = np.zeros((g.num_nodes, K))
    top = deg.max()
    out[:, 0] = deg / top if top > 0 else 0.0
    bins = np.minimum(np.floor(np.log2(1 + deg)).astype(np.int64), K - 2)
    out[np.arange(g.num_nodes), 1 + bins] = 1.0
    return out


def cycle_counts(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Per-node (triangle, 4-cycle) counts from closed-walk counts."""
    a = g.dense_adjacency()
    deg = a.sum(axis=1)
    a2 = a @ a
    a3 = a2 @ a
    triangles = np.diag(a3) / 2
    closed4 = (a2 * a2).sum(axis=1)  # diag(A^4) since A is symmetric
    # closed 4-walks that are not 4-cycles: i-j-i-k-i and i-j-k-j-i (k != i)
    backtrack = deg ** 2 + a @ (deg - 1)
    quads = (closed4 - backtrack) / 2
    return np.rint(triangles), np.rint(quads)


def tcse(g: Graph, K: int) -> np.ndarray:
    if K < 2:
        raise ValueError("tcse needs K >= 2")
    tri, quad = cycle_counts(g)
    out = np.zeros((g.num_nodes, K))
    out[:, 0] = tri / g.num_nodes
    out[:, 1] = quad / g.num_nodes
    return out


def _fix_sign(v: np.ndarray, tol=1e-12) -> np.ndarray:
    mags = np.abs(v)
    pivot = np.flatnonzero(mags >= mags.max() - tol)[0]
    return v if v[pivot] > 0 else -v


def lap_pe(g: Graph, K: int, tol=1e-8) -> np.ndarray:
    """Eigenvectors of the normalized Laplacian for eigenvalue ranks 1..K.

    Each column is flipped so that its largest-magnitude entry is positive.
    """
    n = g.num_nodes
    if K > n - 1:
        raise ValueError(f"lap_pe needs K <= N-1 (K={K}, N={n})")
    lap = derive_matrices(g).sym_laplacian
    evals, evecs = np.linalg.eigh(lap)
    cols = []
    for m in range(1, K + 1):
        v = _fix_sign(evecs[:, m])
        if np.linalg.norm(lap @ v - evals[m] * v) > tol:
            raise ConvergenceError(f"eigenpair {m} residual above {tol}")
        cols.append(v)
    return np.stack(cols, axis=1) if cols else np.zeros((n, 0))


def walk_distances(g: Graph, cap: int) -> np.ndarray:
    """Hop distances found as the first power at which A~^k turns positive.

    Pairs not reached within ``cap - 1`` steps get -1.
    """
    dist = np.full((g.num_nodes, g.num_nodes), -1, dtype=np.int64)
    for k, walk in enumerate(_walk_powers(g, cap)):
        dist[(walk > 0) & (dist < 0)] = k
    return dist


def jaccard_pe(g: Graph, cfg: JaccardConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-decayed shortest-path encoding.

    Returns ``(pairwise, P)``: ``pairwise[i, j] = exp(-dist^2 / 2h^2)`` for
    dist < K (else 0), and a per-node N x K histogram where column k holds the
    decayed share of nodes at distance k + 1.
    """
    K, h = cfg.K, cfg.h
    # one extra step so distance K is available to the histogram's last column
    dist = walk_distances(g, K + 1)
    near = (dist >= 0) & (dist < K)
    pairwise = np.where(near, np.exp(-dist.astype(np.float64) ** 2 / (2 * h * h)), 0.0)

    reach = np.maximum(1, near.sum(axis=1) - 1)
    P = np.zeros((g.num_nodes, K))
    for k in range(K):
        count = (dist == k + 1).sum(axis=1)
        P[:, k] = np.exp(-(k + 1) ** 2 / (2 * h * h)) * count / reach
    return pairwise, P


def encode(g: Graph, pe_kind="jaccard", se_kind="rwse", K=8, h=1.0) -> EncodingSet:
    if K < 1:
        raise ValueError("K must be >= 1")
    pairwise = None
    if pe_kind == "jaccard":
        pairwise, P = jaccard_pe(g, JaccardConfig(K, h))
    elif pe_kind == "lappe":
        P = lap_pe(g, min(K, g.num_nodes - 1))
        if P.shape[1] < K:
            P = np.pad(P, ((0, 0), (0, K - P.shape[1])))
    elif pe_kind == "rwpe":
        P = rwpe(g, K)
    else:
        raise ValueError(f"unknown positional encoding '{pe_kind}' (choose from {PE_KINDS})")

    if se_kind == "rwse":
        S = rwse(g, K)
    elif se_kind == "dse":
        S = dse(g, K)
    elif se_kind == "tcse":
        S = tcse(g, K)
    else:
        raise ValueError(f"unknown structural encoding '{se_kind}' (choose from {SE_KINDS})")
    return EncodingSet(P, S, K, pe_kind, se_kind, pairwise, h)
