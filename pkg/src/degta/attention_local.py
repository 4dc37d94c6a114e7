"""Decoupled local attention: one score per view on every edge of A + I."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

LEAKY_SLOPE = 0.2


def glorot(rng, fan_in, fan_out, name=None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


def zeros(shape, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


@dataclass
class LocalAttentionParams:
    """Projections are stored input-major, i.e. applied as ``S @ W_str``."""

    W_str: Tensor  # d_s x d'
    W_pos: Tensor  # d_p x d'
    W_atr: Tensor  # d x d''
    q_s: Tensor  # 2d' x 1
    q_p: Tensor
    q_a: Tensor  # 2d'' x 1
    view_logits: Tensor  # 1 x 3, order (positional, structural, attribute)

    @classmethod
    def init(cls, rng, d_s, d_p, d, d1, d2):
        return cls(
            W_str=glorot(rng, d_s, d1), W_pos=glorot(rng, d_p, d1), W_atr=glorot(rng, d, d2),
            q_s=glorot(rng, 2 * d1, 1), q_p=glorot(rng, 2 * d1, 1), q_a=glorot(rng, 2 * d2, 1),
            view_logits=zeros((1, 3)),
        )

    def named(self):
        return [(k, getattr(self, k)) for k in
                ("W_str", "W_pos", "W_atr", "q_s", "q_p", "q_a", "view_logits")]


@dataclass
class LocalTriples:
    """Per-edge view scores, each split as ``source part + neighbor part``.

    The source part is constant within a node's neighborhood, so it cancels in
    the neighborhood softmax; aggregation uses the neighbor part only and the
    full scores are kept for reporting.
    """

    s_src: Tensor
    s_nbr: Tensor
    p_src: Tensor
    p_nbr: Tensor
    a_src: Tensor
    a_nbr: Tensor

    @property
    def s(self):
        return self.s_src + self.s_nbr

    @property
    def p(self):
        return self.p_src + self.p_nbr

    @property
    def a(self):
        return self.a_src + self.a_nbr


def pair_score_parts(X: Tensor, W: Tensor, q: Tensor, src, dst) -> tuple[Tensor, Tensor]:
    """q^T leaky_relu([X_i W || X_j W]) split into its i-part and j-part per edge.

    leaky_relu acts elementwise, so the concatenated form equals
    q[:d]^T leaky_relu(X_i W) + q[d:]^T leaky_relu(X_j W).
    """
    if X.shape[1] != W.shape[0]:
        raise ag.ShapeError(f"encoding width {X.shape[1]} != projection input {W.shape[0]}")
    if q.shape[0] != 2 * W.shape[1]:
        raise ag.ShapeError(f"score vector has length {q.shape[0]}, expected {2 * W.shape[1]}")
    width = W.shape[1]
    act = ag.leaky_relu(X @ W, LEAKY_SLOPE)
    left = act @ q[:width]
    right = act @ q[width:]
    return ag.gather_rows(left, src), ag.gather_rows(right, dst)


def pair_score(X: Tensor, W: Tensor, q: Tensor, src, dst) -> Tensor:
    """q^T leaky_relu([X_i W || X_j W]) for every (i, j) = (src[e], dst[e])."""
    i_part, j_part = pair_score_parts(X, W, q, src, dst)
    return i_part + j_part


def local_scores(S_l: Tensor, P_l: Tensor, H_l: Tensor, nbr, params: LocalAttentionParams) -> LocalTriples:
    src, dst = nbr
    s = pair_score_parts(S_l, params.W_str, params.q_s, src, dst)
    p = pair_score_parts(P_l, params.W_pos, params.q_p, src, dst)
    a = pair_score_parts(H_l, params.W_atr, params.q_a, src, dst)
    return LocalTriples(s[0], s[1], p[0], p[1], a[0], a[1])


def view_weights(view_logits: Tensor) -> Tensor:
    return ag.row_softmax(view_logits)


def combine_views(p, s, a, view_logits: Tensor, bias=None) -> Tensor:
    """z = alpha * p + beta * s + gamma * a with softmaxed view weights."""
    w = view_weights(view_logits)
    if bias is not None:
        p = p + bias
    return p * w[:, 0:1] + s * w[:, 1:2] + a * w[:, 2:3]


def local_integrate(triples: LocalTriples, view_logits: Tensor, bias=None, neighbor_only=False) -> Tensor:
    """Per-edge local logits z.

    ``bias`` (per edge) is added to the positional score; it carries the
    optional fixed pairwise Jaccard logits. With ``neighbor_only`` the source
    parts are left out, which changes z by a per-node constant and leaves the
    neighborhood softmax unchanged.
    """
    if neighbor_only:
        return combine_views(triples.p_nbr, triples.s_nbr, triples.a_nbr, view_logits, bias)
    return combine_views(triples.p, triples.s, triples.a, view_logits, bias)


def local_aggregate(z: Tensor, H_l: Tensor, nbr, n: int) -> tuple[Tensor, Tensor]:
    """Softmax z within each neighborhood and average H with it.

    Returns ``(H_local, z_hat)``.
    """
    src, dst = nbr
    z_hat = ag.segment_softmax(z, src, n)
    msgs = ag.gather_rows(H_l, dst) * z_hat
    return ag.scatter_add_rows(msgs, src, n), z_hat
