"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numeric failure.
Every error goes to stderr as a single line starting with ``ERROR <code>:``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import autograd as ag
from .bench import format_rows, growth, run_bench
from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .checks import TOLERANCE, gradcheck_suite
from .data import (GENERATORS, DatasetError, GraphDataset, NodeDataset, generate, load_graph_dataset,
                   load_graph_dir, load_node_dataset, save_graph_dataset, save_graph_dir, save_node_dataset,
                   write_matrix)
from .encodings import PE_KINDS, SE_KINDS, ConvergenceError, encode
from .graph import GraphError
from .model import ABLATIONS, DeGTAConfig, evaluate, export_report, prepare, train

USAGE, VALIDATION, NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that reports usage problems with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fail(code, message):
    print(f"ERROR {code}: {message}", file=sys.stderr)
    return code


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _load_dataset(path, task):
    return load_node_dataset(path) if task == "node" else load_graph_dataset(path)


# -- subcommands ---------------------------------------------------------------

def cmd_encode(args):
    g = load_graph_dir(args.data)
    enc = encode(g, args.pe, args.se, args.k, args.h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(out / "P.csv", enc.P)
    write_matrix(out / "S.csv", enc.S)
    meta = {"strategy": {"pe": args.pe, "se": args.se}, "K": args.k, "h": args.h}
    (out / "meta.json").write_text(_dump(meta) + "\n", encoding="utf-8")
    return 0


def _config(args) -> DeGTAConfig:
    if args.kg is not None and args.tau is not None:
        raise ValueError("--kg and --tau are mutually exclusive")
    if args.sample == "topk" and args.tau is not None:
        raise ValueError("--tau needs --sample threshold")
    if args.sample == "threshold" and args.kg is not None:
        raise ValueError("--kg needs --sample topk")
    return DeGTAConfig(K=args.k, hidden=args.hidden, layers=args.layers, pe_kind=args.pe, se_kind=args.se,
                       h=args.h, sampling=args.sample, k_g=args.kg, tau=args.tau, learning_rate=args.lr,
                       weight_decay=args.weight_decay, epochs=args.epochs, seed=args.seed, dropout=args.dropout,
                       residual=args.residual, ablation=args.ablation)


def cmd_train(args):
    config = _config(args)
    ds = _load_dataset(args.data, args.task)
    result = train(ds, config)
    ckpt = Path(args.ckpt)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, ckpt, extra={"best_epoch": result.best_epoch})
    metrics = Path(args.metrics) if args.metrics else ckpt.parent / "metrics.csv"
    with open(metrics, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_metric"])
        for row in result.history:
            w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_metric"])])
    print(_dump({"best_epoch": result.best_epoch, **result.metrics}))
    return 0


def _checkpoint_dataset(args):
    header, _ = read_header(args.ckpt)
    model = load_checkpoint(args.ckpt)
    ds = _load_dataset(args.data, header["model"]["task"])
    width = ds.graph.features.shape[1] if isinstance(ds, NodeDataset) else ds.num_features
    if width != model.in_dim:
        raise DatasetError(f"{args.data}: feature width {width} != checkpoint input width {model.in_dim}")
    return model, ds


def cmd_eval(args):
    model, ds = _checkpoint_dataset(args)
    print(_dump(evaluate(model, ds)))
    return 0


def cmd_export(args):
    model, ds = _checkpoint_dataset(args)
    if isinstance(ds, NodeDataset):
        g = ds.graph
    else:
        if not 0 <= args.graph < len(ds.graphs):
            raise ValueError(f"--graph {args.graph} out of range [0,{len(ds.graphs)})")
        g = ds.graphs[args.graph]
    report = export_report(model, prepare(g, model.config))
    Path(args.out).write_text(_dump(report) + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args):
    t0 = time.perf_counter()
    results = gradcheck_suite(args.eps, args.seed, include_ablations=args.ablations)
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        print(f"{name}\t{err:.3e}\t{status}")
    worst = max(results.values())
    print(f"max\t{worst:.3e}\t({time.perf_counter() - t0:.1f}s)")
    if worst >= TOLERANCE:
        failed = sorted(k for k, v in results.items() if v >= TOLERANCE)
        return _fail(NUMERIC, f"max relative error {worst:.3e} >= {TOLERANCE:g} in {', '.join(failed)}")
    return 0


def cmd_gen(args):
    params = {
        "sbm": dict(n=args.n, blocks=args.blocks, p_in=args.p_in, p_out=args.p_out, noise=args.noise),
        "cycle": dict(n=args.n),
        "disjoint_cycles": dict(n=args.n, count=args.count),
        "csl": dict(n=args.n, skip=args.skip),
        "random": dict(n=args.n, p=args.p, d=args.d),
        "sbm_graphs": dict(count=args.count, n=args.n, p_in=args.p_in, p_out=args.p_out),
    }[args.kind]
    obj = generate(args.kind, seed=args.seed, **params)
    if isinstance(obj, NodeDataset):
        save_node_dataset(obj, args.out)
    elif isinstance(obj, GraphDataset):
        save_graph_dataset(obj, args.out)
    else:
        save_graph_dir(obj, args.out)
    return 0


def cmd_bench(args):
    rows = run_bench(args.min_n, args.max_n, degree=args.degree, repeats=args.repeats, seed=args.seed)
    print(format_rows(rows))
    for n, local, glob in growth(rows):
        print(f"growth@{n}: local_per_E_doubling={local:.2f} global_per_N_doubling={glob:.2f}")
    return 0


# -- parser --------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--pe", choices=PE_KINDS, default="jaccard", help="positional encoding (default: %(default)s)")
    p.add_argument("--se", choices=SE_KINDS, default="rwse", help="structural encoding (default: %(default)s)")
    p.add_argument("--k", type=int, default=8, help="encoding steps K (default: %(default)s)")
    p.add_argument("--h", type=float, default=1.0, help="Jaccard bandwidth (default: %(default)s)")


class DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append defaults unless the help already states one or there is none."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is None or "default" in text or action.required:
            return text
        return super()._get_help_string(action)


def build_parser() -> Parser:
    fmt = DefaultsFormatter
    parser = Parser(prog="degta", description="Decoupled graph transformer: encodings, training, inspection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("encode", help="write positional/structural encodings", formatter_class=fmt)
    p.add_argument("--data", required=True, help="graph directory (edges.tsv, features.csv)")
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="output directory for P.csv, S.csv, meta.json")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a model and write a checkpoint", formatter_class=fmt)
    p.add_argument("--data", required=True, help="node or graph dataset directory")
    p.add_argument("--task", choices=("node", "graph"), default="node", help="prediction task")
    p.add_argument("--layers", type=int, default=2, help="number of layers")
    _add_model_flags(p)
    p.add_argument("--hidden", type=int, default=64, help="hidden width d")
    p.add_argument("--sample", choices=("topk", "threshold"), default="topk", help="global sampling strategy")
    p.add_argument("--kg", type=int, default=None, help="top-k partners per node (default: K)")
    p.add_argument("--tau", type=float, default=None,
                   help="threshold (default: 2 / number of candidates, per node)")
    p.add_argument("--lr", type=float, default=0.01, help="Adam learning rate")
    p.add_argument("--weight-decay", type=float, default=5e-4, help="decoupled weight decay")
    p.add_argument("--dropout", type=float, default=0.0, help="dropout on attribute encodings")
    p.add_argument("--residual", action="store_true", help="add a residual connection per layer")
    p.add_argument("--epochs", type=int, default=200, help="training epochs")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--ablation", choices=ABLATIONS, default="full", help="model variant")
    p.add_argument("--ckpt", required=True, help="checkpoint file to write")
    p.add_argument("--metrics", default=None, help="metrics CSV path (default: metrics.csv next to --ckpt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print split metrics of a checkpoint as JSON", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-attention", help="write the attention report JSON", formatter_class=fmt)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--graph", type=int, default=0, help="graph index for graph datasets")
    p.add_argument("--out", required=True, help="output JSON file")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite", formatter_class=fmt)
    p.add_argument("--eps", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--ablations", action="store_true", help="also check every ablation variant")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen", help="generate a synthetic graph or dataset", formatter_class=fmt)
    p.add_argument("--kind", choices=GENERATORS, required=True, help="generator")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--n", type=int, default=60, help="nodes (per graph)")
    p.add_argument("--blocks", type=int, default=2, help="sbm: number of blocks")
    p.add_argument("--p-in", type=float, default=0.3, help="sbm: within-block edge probability")
    p.add_argument("--p-out", type=float, default=0.02, help="sbm: between-block edge probability")
    p.add_argument("--noise", type=float, default=0.5, help="sbm: feature noise standard deviation")
    p.add_argument("--count", type=int, default=2, help="disjoint_cycles: copies; sbm_graphs: graphs")
    p.add_argument("--skip", type=int, default=2, help="csl: skip length")
    p.add_argument("--p", type=float, default=0.1, help="random: edge probability")
    p.add_argument("--d", type=int, default=4, help="random: feature width")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="time the local and global modules against N", formatter_class=fmt)
    p.add_argument("--min-n", type=int, default=64, help="smallest N")
    p.add_argument("--max-n", type=int, default=512, help="largest N (doubling from --min-n)")
    p.add_argument("--degree", type=float, default=6.0, help="expected average degree")
    p.add_argument("--repeats", type=int, default=5, help="timings per size (minimum is kept)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.set_defaults(func=cmd_bench)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail(USAGE, str(e))
    try:
        return args.func(args)
    except (ag.NumericError, ConvergenceError, FloatingPointError, OverflowError) as e:
        return _fail(NUMERIC, str(e))
    except (DatasetError, GraphError, CheckpointError, ag.ShapeError, ValueError, OSError) as e:
        return _fail(VALIDATION, str(e))


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
