"""Wall-clock timing of the local and global attention modules against N.

Graphs are G(N, p) with p chosen for a fixed expected degree, so the edge
count doubles with N. Each timing is forward plus backward, min over repeats.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention_global import (GlobalAttentionParams, Sampling, global_aggregate, global_view_attention, sample,
                               sample_scores, sampled_attribute_attention)
from .attention_local import LocalAttentionParams, local_aggregate, local_integrate, local_scores
from .autograd import Tape, Tensor
from .data import random_graph
from .graph import candidate_mask, neighborhoods


@dataclass
class BenchRow:
    n: int
    edges: int
    local_s: float
    global_s: float


def _timed(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _backprop(build):
    with Tape() as tape:
        out = build()
        tape.backward(ag.sum(out))


def bench_sizes(min_n=64, max_n=512):
    sizes = []
    n = min_n
    while n <= max_n:
        sizes.append(n)
        n *= 2
    return sizes


def run_bench(min_n=64, max_n=512, degree=6.0, K=8, d=32, d1=16, d2=32, repeats=5, seed=0):
    if min_n < 2 or max_n < min_n:
        raise ValueError("need 2 <= min_n <= max_n")
    rows = []
    for n in bench_sizes(min_n, max_n):
        rng = np.random.default_rng(seed)
        g = random_graph(n, min(1.0, degree / (n - 1)), seed=seed, d=d)
        nbr = neighborhoods(g)
        cand = candidate_mask(g)
        S = Tensor(rng.standard_normal((n, K)), requires_grad=True)
        P = Tensor(rng.standard_normal((n, K)), requires_grad=True)
        H = Tensor(rng.standard_normal((n, d)), requires_grad=True)
        lp = LocalAttentionParams.init(rng, K, K, d, d1, d2)
        gp = GlobalAttentionParams.init(rng, K, K, d, d1, d2)
        strategy = Sampling("topk", K)

        def local():
            z = local_integrate(local_scores(S, P, H, nbr, lp), lp.view_logits, neighbor_only=True)
            return local_aggregate(z, H, nbr, n)[0]

        def glob():
            U_s, U_p = global_view_attention(S, P, gp)
            sampled = sample(sample_scores(U_s, U_p, cand, gp.view_logits), strategy, cand)
            U_a = sampled_attribute_attention(H, sampled.rows, sampled.cols, gp, n)
            return global_aggregate(U_s, U_p, U_a, sampled, H, gp.view_logits, n)[0]

        rows.append(BenchRow(n, g.num_edges, _timed(lambda: _backprop(local), repeats),
                             _timed(lambda: _backprop(glob), repeats)))
    return rows


def growth(rows):
    """Per-doubling time ratios: (local ratio per edge-doubling, global ratio)."""
    out = []
    for a, b in zip(rows, rows[1:]):
        edge_ratio = b.edges / a.edges
        # normalise the local ratio to an exact doubling of E
        local = (b.local_s / a.local_s) ** (np.log(2) / np.log(edge_ratio))
        out.append((b.n, local, b.global_s / a.global_s))
    return out


def format_rows(rows) -> str:
    lines = ["n,edges,local_s,global_s"]
    lines += [f"{r.n},{r.edges},{r.local_s:.6g},{r.global_s:.6g}" for r in rows]
    return "\n".join(lines)
