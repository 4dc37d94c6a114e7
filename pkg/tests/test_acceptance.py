"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even under output capture) or ``python tests/test_acceptance.py``.
"""
import json
import sys
import time

import jsonschema
import numpy as np
import pytest

from degta import autograd as ag
from degta.attention_global import (GlobalAttentionParams, Sampling, global_aggregate, global_view_attention, sample,
                                    sample_scores, sampled_attribute_attention)
from degta.attention_local import LocalAttentionParams, local_aggregate, local_integrate, local_scores
from degta.autograd import Tensor
from degta.bench import format_rows, growth, run_bench
from degta.checkpoint import load_checkpoint, save_checkpoint
from degta.checks import TOLERANCE, distinct_encoding_graph, gradcheck_suite
from degta.data import csl, cycle, disjoint_cycles, random_graph, sbm
from degta.encodings import JaccardConfig, cycle_counts, encode, jaccard_pe, lap_pe, rwpe, rwse
from degta.graph import candidate_mask, derive_matrices, neighborhoods, permute, permute_rows
from degta.model import REPORT_SCHEMA, DeGTAConfig, DeGTAModel, export_report, model_forward, prepare, train

from oracles import bfs_oracle, rwpe_oracle, rwse_oracle, simple_cycles_through

SEEDS = range(5)


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _random_graphs(count=20, max_n=16, seed=2024):
    rng = np.random.default_rng(seed)
    for s in range(count):
        yield random_graph(int(rng.integers(4, max_n + 1)), float(rng.uniform(0.15, 0.5)), seed=s, d=4)


# 1 ---------------------------------------------------------------------------

def test_criterion_01_gradient_correctness(capsys):
    t0 = time.perf_counter()
    results = gradcheck_suite(eps=1e-5, seed=0)
    elapsed = time.perf_counter() - t0
    name, worst = max(results.items(), key=lambda kv: kv[1])
    failing = sorted(k for k, v in results.items() if v >= TOLERANCE)
    ok = worst < TOLERANCE and elapsed < 60
    report(capsys, 1, ok, f"max rel err {worst:.3g} at {name} (tol {TOLERANCE:g}); "
                          f"over tol: {failing or 'none'}; {len(results)} checks in {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------

def test_criterion_02_encoding_oracles(capsys):
    t0 = time.perf_counter()
    K = 6
    worst_rw, worst_lap, worst_orth = 0.0, 0.0, 0.0
    jaccard_exact, tcse_exact = True, True
    for g in _random_graphs():
        n = g.num_nodes
        worst_rw = max(worst_rw, np.abs(rwse(g, K) - rwse_oracle(g, K)).max(),
                       np.abs(rwpe(g, K) - rwpe_oracle(g, K)).max())

        adj = g.dense_adjacency()
        dist = np.stack([bfs_oracle(adj, s) for s in range(n)])
        expect = np.where((dist >= 0) & (dist < K), np.exp(-dist.astype(float) ** 2 / 2), 0.0)
        pw, _ = jaccard_pe(g, JaccardConfig(K))
        jaccard_exact &= bool(np.array_equal(pw, expect))

        tri, quad = cycle_counts(g)
        tcse_exact &= all(tri[v] == simple_cycles_through(adj, v, 3) and quad[v] == simple_cycles_through(adj, v, 4)
                          for v in range(n))

        k = min(K, n - 1)
        lap = derive_matrices(g).sym_laplacian
        V = lap_pe(g, k)
        lam = np.einsum("ik,ij,jk->k", V, lap, V)
        worst_lap = max(worst_lap, np.linalg.norm(lap @ V - V * lam, axis=0).max())
        worst_orth = max(worst_orth, np.abs(V.T @ V - np.eye(k)).max())
    elapsed = time.perf_counter() - t0
    ok = (worst_rw <= 1e-12 and jaccard_exact and tcse_exact and worst_lap <= 1e-8 and worst_orth <= 1e-10
          and elapsed < 30)
    report(capsys, 2, ok, f"rw err {worst_rw:.2g}, jaccard exact {jaccard_exact}, tcse exact {tcse_exact}, "
                          f"lap residual {worst_lap:.2g}, orthonormality {worst_orth:.2g}, {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------

def test_criterion_03_beyond_1wl(capsys):
    a, b = rwse(cycle(6), 4), rwse(disjoint_cycles(3, 2), 4)
    values_ok = np.allclose(a[:, 3], 7 / 27, atol=1e-12) and np.allclose(b[:, 3], 1 / 3, atol=1e-12)
    e2, e3 = encode(csl(11, 2), K=6), encode(csl(11, 3), K=6)
    csl_gap = max(np.abs(np.sort(e2.S, axis=0) - np.sort(e3.S, axis=0)).max(),
                  np.abs(np.sort(e2.P, axis=0) - np.sort(e3.P, axis=0)).max())
    ok = values_ok and not np.allclose(a, b) and csl_gap > 1e-6
    report(capsys, 3, ok, f"C6 step-3 return {a[0, 3]:.6f} vs C3+C3 {b[0, 3]:.6f}; csl(11,2) vs csl(11,3) "
                          f"encoding gap {csl_gap:.3g}")


# 4 ---------------------------------------------------------------------------

def test_criterion_04_attention_normalization(capsys):
    worst_local, worst_global, masks_ok, topk_ok = 0.0, 0.0, True, True
    K, d = 4, 6
    for i, g in enumerate(_random_graphs(max_n=14, seed=7)):
        rng = np.random.default_rng(i)
        n = g.num_nodes
        nbr, cand = neighborhoods(g), candidate_mask(g)
        S, P, H = (Tensor(rng.standard_normal((n, w))) for w in (K, K, d))
        lp = LocalAttentionParams.init(rng, K, K, d, 3, 5)
        gp = GlobalAttentionParams.init(rng, K, K, d, 3, 5)
        lp.view_logits.values = rng.standard_normal((1, 3))
        gp.view_logits.values = rng.standard_normal((1, 3))

        _, z_hat = local_aggregate(local_integrate(local_scores(S, P, H, nbr, lp), lp.view_logits), H, nbr, n)
        worst_local = max(worst_local, np.abs(np.bincount(nbr[0], z_hat.values[:, 0], n) - 1).max())

        U_s, U_p = global_view_attention(S, P, gp)
        M = sample_scores(U_s, U_p, cand, gp.view_logits)
        has = cand.any(axis=1)
        worst_global = max(worst_global, np.abs(M.values[has].sum(axis=1) - 1).max(initial=0.0))
        for strategy in (Sampling("topk", 3), Sampling("threshold")):
            s = sample(M, strategy, cand)
            mask = s.mask.values
            masks_ok &= bool(np.isin(mask, (0.0, 1.0)).all() and not mask[~cand].any())
            if strategy.kind == "topk":
                topk_ok &= bool(np.array_equal(mask.sum(axis=1), np.minimum(3, cand.sum(axis=1))))
            U_a = sampled_attribute_attention(H, s.rows, s.cols, gp, n)
            _, zg = global_aggregate(U_s, U_p, U_a, s, H, gp.view_logits, n)
            sums = np.bincount(s.rows, zg.values[:, 0], n)
            nonempty = np.bincount(s.rows, minlength=n) > 0
            worst_global = max(worst_global, np.abs(sums[nonempty] - 1).max(initial=0.0))
    ok = worst_local <= 1e-9 and worst_global <= 1e-9 and masks_ok and topk_ok
    report(capsys, 4, ok, f"local row err {worst_local:.2g}, global row err {worst_global:.2g}, "
                          f"mask binary and off edges {masks_ok}, topk counts {topk_ok}")


# 5 ---------------------------------------------------------------------------

def test_criterion_05_permutation_equivariance(capsys):
    g = distinct_encoding_graph()
    c = DeGTAConfig(pe_kind="jaccard", se_kind="rwse")
    model = DeGTAModel(c, g.features.shape[1], 3)
    rng = np.random.default_rng(0)
    for layer in model.layers:
        layer.local.view_logits.values = rng.standard_normal((1, 3))
        layer.glob.view_logits.values = rng.standard_normal((1, 3))
    base = model_forward(model, prepare(g, c)).output.values
    worst = 0.0
    for _ in range(10):
        pi = rng.permutation(g.num_nodes)
        out = model_forward(model, prepare(permute(g, pi), c)).output.values
        worst = max(worst, np.abs(out - permute_rows(base, pi)).max())
    report(capsys, 5, worst <= 1e-9, f"max deviation {worst:.2g} over 10 permutations, N={g.num_nodes}")


# 6, 7 -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sbm_runs():
    runs = {}
    t0 = time.perf_counter()
    for ablation in ("full", "coupled_attention", "summed_integration"):
        runs[ablation] = [train(sbm(seed=s), DeGTAConfig(seed=s, ablation=ablation)).metrics for s in SEEDS]
        if ablation == "full":
            runs["full_seconds"] = time.perf_counter() - t0
    return runs


def test_criterion_06_learning(capsys, sbm_runs):
    runs = sbm_runs["full"]
    tr = float(np.median([m["train"] for m in runs]))
    te = float(np.median([m["test"] for m in runs]))
    elapsed = sbm_runs["full_seconds"]
    ok = tr >= 0.95 and te >= 0.90 and elapsed < 120
    report(capsys, 6, ok, f"median train {tr:.3f}, median test {te:.3f} over {len(runs)} seeds, {elapsed:.1f}s")


def test_criterion_07_ablation_direction(capsys, sbm_runs):
    med = {k: float(np.median([m["test"] for m in sbm_runs[k]]))
           for k in ("full", "coupled_attention", "summed_integration")}
    ok = med["coupled_attention"] <= med["full"] and med["summed_integration"] <= med["full"]
    report(capsys, 7, ok, "median test " + ", ".join(f"{k} {v:.3f}" for k, v in med.items()))


# 8 ---------------------------------------------------------------------------

def test_criterion_08_scaling(capsys):
    rows = run_bench(64, 512)
    ratios = growth(rows)
    worst_local = max(r[1] for r in ratios)
    worst_global = max(r[2] for r in ratios)
    ok = worst_global <= 4.5 and worst_local <= 2.5
    with capsys.disabled():
        print("\n" + format_rows(rows))
    report(capsys, 8, ok, f"worst local growth per E doubling {worst_local:.2f} (<= 2.5), "
                          f"worst global growth per N doubling {worst_global:.2f} (<= 4.5)")


# 9 ---------------------------------------------------------------------------

def test_criterion_09_benchmark_tables(capsys):
    with capsys.disabled():
        print("\nACCEPTANCE  9 SKIP  published benchmark scores need the full public datasets and tuned "
              "long runs; non-gating by definition")
    pytest.skip("non-gating: benchmark datasets are not part of the desk-scale suite")


# 10 --------------------------------------------------------------------------

def test_criterion_10_serialization(capsys, tmp_path):
    ds = sbm(seed=0)
    result = train(ds, DeGTAConfig(epochs=20, seed=0))
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.model, path)
    back = load_checkpoint(path)
    bit_exact = all(p.values.tobytes() == q.values.tobytes()
                    for p, q in zip(result.model.parameters(), back.parameters()))
    bit_exact &= back.config == result.model.config

    rep = json.loads(json.dumps(export_report(back, prepare(ds.graph, back.config))))
    try:
        jsonschema.validate(rep, REPORT_SCHEMA)
        valid = True
    except jsonschema.ValidationError:
        valid = False
    triples = [l["local_weights"] for l in rep["layers"]] + [l["global_weights"] for l in rep["layers"]]
    triples.append(list(rep["summary"].values()))
    worst = max(abs(sum(t) - 1) for t in triples)
    ok = bit_exact and valid and worst <= 1e-9
    report(capsys, 10, ok, f"bit-exact {bit_exact}, schema valid {valid}, worst triple sum err {worst:.2g}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
