"""Global attention with straight-through hard sampling of long-range pairs.

Positional and structural views get full N x N attention; they pick, per node,
a small set of non-neighbors. Attribute attention and aggregation then run on
those sampled pairs only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention_local import glorot, view_weights, zeros
from .autograd import Tensor


@dataclass(frozen=True)
class Sampling:
    kind: str = "topk"
    k: int = 8
    tau: float | None = None  # None -> 2 / |candidates| per row

    def __post_init__(self):
        if self.kind not in ("topk", "threshold"):
            raise ValueError(f"unknown sampling strategy '{self.kind}'")
        if self.kind == "topk" and self.k < 1:
            raise ValueError("topk sampling needs k >= 1")
        if self.kind == "threshold" and self.tau is not None and not 0 < self.tau < 1:
            raise ValueError("threshold tau must lie in (0, 1)")


@dataclass
class GlobalAttentionParams:
    """Weights stored input-major; ``view_logits`` order is (structural, positional, attribute)."""

    W_sq: Tensor
    W_sk: Tensor
    W_pq: Tensor
    W_pk: Tensor
    W_aq: Tensor
    W_ak: Tensor
    view_logits: Tensor

    @classmethod
    def init(cls, rng, d_s, d_p, d, d1, d2):
        return cls(
            W_sq=glorot(rng, d_s, d1), W_sk=glorot(rng, d_s, d1),
            W_pq=glorot(rng, d_p, d1), W_pk=glorot(rng, d_p, d1),
            W_aq=glorot(rng, d, d2), W_ak=glorot(rng, d, d2),
            view_logits=zeros((1, 3)),
        )

    def named(self):
        return [(k, getattr(self, k)) for k in
                ("W_sq", "W_sk", "W_pq", "W_pk", "W_aq", "W_ak", "view_logits")]


@dataclass
class GlobalSample:
    mask: Tensor  # N x N, forward-binary
    rows: np.ndarray  # sampled pairs, grouped by row
    cols: np.ndarray
    scores: Tensor  # M


def scaled_attention(X: Tensor, Wq: Tensor, Wk: Tensor) -> Tensor:
    """row_softmax((X Wq)(X Wk)^T / sqrt(width of X))."""
    if X.shape[1] != Wq.shape[0]:
        raise ag.ShapeError(f"encoding width {X.shape[1]} != projection input {Wq.shape[0]}")
    logits = (X @ Wq) @ ag.transpose(X @ Wk)
    return ag.row_softmax(logits * (1.0 / np.sqrt(X.shape[1])))


def global_view_attention(S_l: Tensor, P_l: Tensor, params: GlobalAttentionParams):
    return (scaled_attention(S_l, params.W_sq, params.W_sk),
            scaled_attention(P_l, params.W_pq, params.W_pk))


def sample_scores(U_s: Tensor, U_p: Tensor, candidates, view_logits: Tensor, literal=False) -> Tensor:
    """Sampling distribution M over each node's non-neighbors.

    Rows without candidates come back all-zero and flagged in ``M.empty``.
    With ``literal`` the softmax runs over every entry of the
    (1 - A)-multiplied logits instead of over candidates only.
    """
    w = view_weights(view_logits)
    mixed = U_s * w[:, 0:1] + U_p * w[:, 1:2]
    candidates = np.asarray(candidates, dtype=bool)
    if literal:
        keep = candidates.copy()
        np.fill_diagonal(keep, True)
        M = ag.row_softmax(ag.mul(mixed, keep.astype(np.float64)))
        M.empty = ~candidates.any(axis=1)
        return M
    return ag.masked_row_softmax(mixed, candidates, allow_empty=True)


def sample(M: Tensor, strategy: Sampling, candidates) -> GlobalSample:
    candidates = np.asarray(candidates, dtype=bool)
    if strategy.kind == "topk":
        hard = ag.topk_indicator(M.values, strategy.k, candidates)
    else:
        if strategy.tau is None:
            n_cand = candidates.sum(axis=1, keepdims=True)
            tau = np.where(n_cand > 0, 2.0 / np.maximum(n_cand, 1), np.inf)
        else:
            tau = strategy.tau
        hard = ((M.values > tau) & candidates).astype(np.float64)
    mask = ag.straight_through(M, hard)
    rows, cols = np.nonzero(hard)
    return GlobalSample(mask, rows, cols, M)


def sampled_attribute_attention(H_l: Tensor, rows, cols, params: GlobalAttentionParams, n: int) -> Tensor:
    """Attribute attention softmaxed over each node's sampled set only.

    Returns one value per sampled pair (column vector aligned with rows/cols).
    """
    if len(rows) == 0:
        return Tensor(np.zeros((0, 1)))
    Q = ag.gather_rows(H_l @ params.W_aq, rows)
    Kt = ag.gather_rows(H_l @ params.W_ak, cols)
    logits = ag.sum(Q * Kt, axis=1) * (1.0 / np.sqrt(H_l.shape[1]))
    return ag.segment_softmax(logits, rows, n)


def global_aggregate(U_s: Tensor, U_p: Tensor, U_a: Tensor, sampled: GlobalSample, H_l: Tensor,
                     view_logits: Tensor, n: int):
    """Aggregate H over sampled partners; nodes with none get a zero row.

    Returns ``(H_global, z_hat)``. Messages are multiplied by the sampled mask
    entries (1 in the forward pass) so gradients reach the sampling scores.
    """
    rows, cols = sampled.rows, sampled.cols
    if len(rows) == 0:
        return Tensor(np.zeros((n, H_l.shape[1]))), Tensor(np.zeros((0, 1)))
    w = view_weights(view_logits)
    z = (ag.gather_elements(U_s, rows, cols) * w[:, 0:1]
         + ag.gather_elements(U_p, rows, cols) * w[:, 1:2]
         + U_a * w[:, 2:3])
    z_hat = ag.segment_softmax(z, rows, n)
    gate = z_hat * ag.gather_elements(sampled.mask, rows, cols)
    msgs = ag.gather_rows(H_l, cols) * gate
    return ag.scatter_add_rows(msgs, rows, n), z_hat


def dense_global_aggregate(U_s: Tensor, U_p: Tensor, H_l: Tensor, params: GlobalAttentionParams):
    """Ablation: attention over every non-self node, no sampling.

    Returns ``(H_global, z_hat)`` with ``z_hat`` N x N, zero on the diagonal.
    """
    n = H_l.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    if n == 1:
        return Tensor(np.zeros(H_l.shape)), Tensor(np.zeros((1, 1)))
    logits = (H_l @ params.W_aq) @ ag.transpose(H_l @ params.W_ak)
    U_a = ag.masked_row_softmax(logits * (1.0 / np.sqrt(H_l.shape[1])), off_diag)
    w = view_weights(params.view_logits)
    z = U_s * w[:, 0:1] + U_p * w[:, 1:2] + U_a * w[:, 2:3]
    z_hat = ag.masked_row_softmax(z, off_diag)
    return z_hat @ H_l, z_hat
