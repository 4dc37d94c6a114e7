"""Finite-difference gradient suite shared by the CLI and the tests."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .attention_global import (GlobalAttentionParams, Sampling, global_aggregate, global_view_attention, sample,
                               sample_scores, sampled_attribute_attention)
from .attention_local import LocalAttentionParams, local_aggregate, local_integrate, local_scores
from .autograd import Tensor, grad_check
from .data import random_graph
from .encodings import encode
from .model import MLP, DeGTAConfig, DeGTAModel, loss, prepare

TOLERANCE = 1e-4


def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted(t: Tensor, w: np.ndarray) -> Tensor:
    """Scalar sum(t * w): a projection that keeps every output entry live."""
    return ag.sum(ag.mul(t, Tensor(w.reshape(t.shape))))


def primitive_cases(rng):
    """(name, f, params) triples exercising each differentiable primitive."""
    cases = []
    n, m, k = rng.integers(2, 6, size=3)
    a, b = _param(rng, n, m), _param(rng, m, k)
    c, row, col = _param(rng, n, m), _param(rng, 1, m), _param(rng, n, 1)
    w_nk, w_nm = rng.standard_normal((n, k)), rng.standard_normal((n, m))
    w_cat = rng.standard_normal((n, 2 * m))
    cases += [
        ("matmul", lambda: _weighted(a @ b, w_nk), [a, b]),
        ("add", lambda: _weighted(a + c, w_nm), [a, c]),
        ("add_row_broadcast", lambda: _weighted(a + row, w_nm), [a, row]),
        ("add_col_broadcast", lambda: _weighted(a + col, w_nm), [a, col]),
        ("scale", lambda: _weighted(a * 1.7, w_nm), [a]),
        ("mul", lambda: _weighted(a * c, w_nm), [a, c]),
        ("mul_col_broadcast", lambda: _weighted(a * col, w_nm), [a, col]),
        ("concat_rows", lambda: _weighted(ag.concat([a, c]), w_cat), [a, c]),
        ("transpose", lambda: _weighted(ag.transpose(a), w_nm.T.copy()), [a]),
        ("exp", lambda: _weighted(ag.exp(a), w_nm), [a]),
        ("row_softmax", lambda: _weighted(ag.row_softmax(a), w_nm), [a]),
        ("sum", lambda: ag.sum(a) * ag.sum(a), [a]),
        ("mean_rows", lambda: _weighted(ag.mean_rows(a), w_nm[:1]), [a]),
    ]
    # leaky_relu kinks at 0: keep inputs away from it
    lr_in = Tensor(np.sign(rng.standard_normal((n, m))) * rng.uniform(0.1, 2.0, (n, m)), requires_grad=True)
    cases.append(("leaky_relu", lambda: _weighted(ag.leaky_relu(lr_in, 0.2), w_nm), [lr_in]))

    mask = rng.random((n, m)) < 0.6
    mask[:, 0] = True
    cases.append(("masked_row_softmax", lambda: _weighted(ag.masked_row_softmax(a, mask), w_nm), [a]))

    idx = rng.integers(0, n, size=n + 2)
    w_g = rng.standard_normal((len(idx), m))
    cases.append(("gather_rows", lambda: _weighted(ag.gather_rows(a, idx), w_g), [a]))
    cols = rng.integers(0, m, size=len(idx))
    w_e = rng.standard_normal((len(idx), 1))
    cases.append(("gather_elements", lambda: _weighted(ag.gather_elements(a, idx, cols), w_e), [a]))
    seg = np.sort(rng.integers(0, n, size=len(idx)))
    e = _param(rng, len(idx), 1)
    e2 = _param(rng, len(idx), m)
    cases.append(("segment_softmax", lambda: _weighted(ag.segment_softmax(e, seg, n), w_e), [e]))
    cases.append(("scatter_add_rows", lambda: _weighted(ag.scatter_add_rows(e2, seg, n), w_nm), [e2]))
    cases.append(("index", lambda: _weighted(a[1:, :1], w_nm[1:, :1].copy()), [a]))

    labels = rng.integers(0, m, size=n)
    cases.append(("cross_entropy", lambda: ag.cross_entropy(a, labels), [a]))
    target = a.values + np.sign(rng.standard_normal((n, m))) * rng.uniform(0.1, 1.0, (n, m))
    cases.append(("l1_loss", lambda: ag.l1_loss(a, target), [a]))

    probs = _param(rng, n, m)
    cases.append(("straight_through_threshold",
                  lambda: _weighted(ag.straight_through_threshold(probs, 0.0) * ag.exp(probs), w_nm), [probs]))
    cases.append(("straight_through_topk",
                  lambda: _weighted(ag.straight_through_topk(probs, 2) * probs, w_nm), [probs]))
    return cases


def small_config(**kw) -> DeGTAConfig:
    base = dict(K=4, hidden=5, d_att=3, d_attr_att=4, layers=2, k_g=3, seed=0)
    base.update(kw)
    return DeGTAConfig(**base)


def _test_graph(seed, n=12):
    g = random_graph(n, 0.3, seed=seed, d=5)
    labels = np.random.default_rng(seed).integers(0, 3, size=n)
    return g.with_attachments(labels=labels)


def distinct_encoding_graph(n=12, p=0.3, seed=0, d=5, K=8, pe_kind="jaccard", se_kind="rwse"):
    """First G(n, p) from ``seed`` upward whose nodes have pairwise distinct (S, P) rows.

    Top-k sampling breaks ties by column index, so nodes that no encoding can
    tell apart make the sampled set depend on labelling; equivariance checks
    need graphs without such twins.
    """
    for s in range(seed, seed + 1000):
        g = random_graph(n, p, seed=s, d=d)
        enc = encode(g, pe_kind, se_kind, K)
        if len(np.unique(np.hstack([enc.S, enc.P]), axis=0)) == n:
            return g
    raise RuntimeError("no twin-free graph found")


def subpath_cases(seed=0):
    """Each encoding view alone routed through attention to a CE loss."""
    rng = np.random.default_rng(seed)
    g = _test_graph(seed)
    c = small_config()
    x = prepare(g, c)
    n, d = g.num_nodes, c.hidden
    H = Tensor(rng.standard_normal((n, d)))
    head = _param(rng, d, 3)
    labels = g.labels
    enc_s, enc_p, enc_a = (MLP.init(rng, c.K, c.d_s), MLP.init(rng, c.K, c.d_p), MLP.init(rng, d, d))
    local = LocalAttentionParams.init(rng, c.d_s, c.d_p, d, c.d_att, c.d_attr_att)
    glob = GlobalAttentionParams.init(rng, c.d_s, c.d_p, d, c.d_att, c.d_attr_att)
    local.view_logits.values = rng.standard_normal((1, 3))
    glob.view_logits.values = rng.standard_normal((1, 3))
    S, P = Tensor(x.enc.S), Tensor(x.enc.P)

    def local_path(use):
        def f():
            S_l = enc_s(S) if use == "s" else Tensor(np.zeros((n, c.d_s)))
            P_l = enc_p(P) if use == "p" else Tensor(np.zeros((n, c.d_p)))
            H_l = enc_a(H) if use == "a" else H
            tr = local_scores(S_l, P_l, H_l, x.nbr, local)
            z = local_integrate(tr, local.view_logits, neighbor_only=True)
            out, _ = local_aggregate(z, H_l, x.nbr, n)
            return loss(out @ head, labels)
        return f

    def global_path():
        S_l, P_l, H_l = enc_s(S), enc_p(P), enc_a(H)
        U_s, U_p = global_view_attention(S_l, P_l, glob)
        M = sample_scores(U_s, U_p, x.candidates, glob.view_logits)
        sampled = sample(M, Sampling("topk", 3), x.candidates)
        U_a = sampled_attribute_attention(H_l, sampled.rows, sampled.cols, glob, n)
        out, _ = global_aggregate(U_s, U_p, U_a, sampled, H_l, glob.view_logits, n)
        return loss(out @ head, labels)

    def mlp_params(m):
        return [t for _, t in m.named()]

    lp = [t for _, t in local.named()]
    return [
        ("structural_local", local_path("s"), mlp_params(enc_s) + [local.W_str, local.q_s, local.view_logits, head]),
        ("positional_local", local_path("p"), mlp_params(enc_p) + [local.W_pos, local.q_p, local.view_logits, head]),
        ("attribute_local", local_path("a"), mlp_params(enc_a) + [local.W_atr, local.q_a, local.view_logits, head]),
        ("local_all", local_path("a"), lp + [head]),
        ("global_sampled", global_path,
         mlp_params(enc_s) + mlp_params(enc_p) + mlp_params(enc_a) + [t for _, t in glob.named()] + [head]),
    ]


def model_cases(seed=0, ablations=("full",)):
    out = []
    g = _test_graph(seed)
    for ablation in ablations:
        c = small_config(ablation=ablation, seed=seed)
        model = DeGTAModel(c, g.features.shape[1], 3)
        for layer in model.layers:
            layer.local.view_logits.values = np.random.default_rng(seed).standard_normal((1, 3))
            layer.glob.view_logits.values = np.random.default_rng(seed + 1).standard_normal((1, 3))
        x = prepare(g, c)
        out.append((f"model_{ablation}", lambda m=model, x=x: loss(m.forward(x).output, g.labels),
                    model.parameters()))
    return out


def gradcheck_suite(eps=1e-5, seed=0, include_ablations=False):
    """Max relative error per named component."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, f, params in primitive_cases(rng):
        results[f"primitive.{name}"] = grad_check(f, params, eps)
    for name, f, params in subpath_cases(seed):
        results[f"path.{name}"] = grad_check(f, params, eps)
    ablations = ("full", "coupled_attention", "summed_integration", "dense_global") if include_ablations else ("full",)
    for name, f, params in model_cases(seed, ablations):
        results[name] = grad_check(f, params, eps)
    return results
