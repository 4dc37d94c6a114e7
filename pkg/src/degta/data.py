"""Dataset directories (TSV/CSV text) and seeded synthetic graph generators.

Node dataset directory::

    edges.tsv      u<TAB>v per line, 0-based
    features.csv   headerless, row i = node i
    labels.csv     one integer per line, row i = node i
    train.idx val.idx test.idx   one node index per line

Graph dataset directory: one subdirectory per graph holding ``edges.tsv`` and
``features.csv``, plus ``targets.csv`` (``name,target``) and ``splits.csv``
(``name,train|val|test``).
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import SPLIT_NAMES, Graph, GraphError, build_graph


class DatasetError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodeDataset:
    graph: Graph

    @property
    def num_classes(self) -> int:
        return int(self.graph.labels.max()) + 1

    def __eq__(self, other):
        return isinstance(other, NodeDataset) and self.graph == other.graph

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GraphDataset:
    graphs: list
    targets: np.ndarray
    splits: np.ndarray  # split name per graph
    names: list
    regression: bool = False

    @property
    def num_features(self) -> int:
        return self.graphs[0].features.shape[1]

    @property
    def num_classes(self) -> int:
        return 1 if self.regression else int(self.targets.max()) + 1

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def __eq__(self, other):
        return (isinstance(other, GraphDataset) and self.names == other.names
                and self.regression == other.regression
                and np.array_equal(self.targets, other.targets)
                and np.array_equal(self.splits, other.splits)
                and all(a == b for a, b in zip(self.graphs, other.graphs)))

    __hash__ = None


# -- reading -------------------------------------------------------------------

def _lines(path: Path):
    if not path.is_file():
        raise DatasetError(f"{path}: missing file")
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _parse_number(tok, path, lineno, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise DatasetError(f"{path}:{lineno}: cannot parse {tok!r} as {kind.__name__}") from None


def read_edges(path: Path):
    edges = []
    for lineno, line in enumerate(_lines(path), 1):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'u<TAB>v'")
        edges.append((_parse_number(parts[0], path, lineno, int), _parse_number(parts[1], path, lineno, int)))
    return edges


def read_matrix(path: Path) -> np.ndarray:
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(_lines(path)), 1):
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DatasetError(f"{path}:{lineno}: ragged row ({len(row)} columns, expected {width})")
        rows.append([_parse_number(tok, path, lineno) for tok in row])
    if not rows:
        raise DatasetError(f"{path}: empty file")
    return np.asarray(rows, dtype=np.float64)


def read_ints(path: Path) -> np.ndarray:
    return np.asarray([_parse_number(line.strip(), path, i, int) for i, line in enumerate(_lines(path), 1)],
                      dtype=np.int64)


def _check_edges(edges, n, path):
    for lineno, (u, v) in enumerate(edges, 1):
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"{path}:{lineno}: node index out of range [0,{n})")


def load_graph_dir(path) -> Graph:
    """Edges and features only (labels and splits are not required)."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    features = read_matrix(path / "features.csv")
    edges = read_edges(path / "edges.tsv")
    _check_edges(edges, len(features), path / "edges.tsv")
    return build_graph(edges, features)


def load_node_dataset(path) -> NodeDataset:
    path = Path(path)
    g = load_graph_dir(path)
    labels = read_ints(path / "labels.csv")
    if len(labels) != g.num_nodes:
        raise DatasetError(f"{path / 'labels.csv'}: {len(labels)} rows, expected {g.num_nodes}")
    if labels.min() < 0:
        raise DatasetError(f"{path / 'labels.csv'}: negative label")
    splits = {}
    for name in SPLIT_NAMES:
        fname = path / f"{name}.idx"
        idx = read_ints(fname)
        bad = np.flatnonzero((idx < 0) | (idx >= g.num_nodes))
        if bad.size:
            raise DatasetError(f"{fname}:{bad[0] + 1}: node index out of range [0,{g.num_nodes})")
        splits[name] = idx
    try:
        g = g.with_attachments(labels, splits)
    except GraphError as e:
        raise DatasetError(f"{path}: {e}") from None
    return NodeDataset(g)


def _read_named(path: Path):
    out = {}
    for lineno, row in enumerate(csv.reader(_lines(path)), 1):
        if len(row) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 'name,value'")
        out[row[0]] = (row[1].strip(), lineno)
    return out


_INT_RE = re.compile(r"^[+-]?\d+$")


def load_graph_dataset(path) -> GraphDataset:
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    names = sorted(p.name for p in path.iterdir() if p.is_dir())
    if not names:
        raise DatasetError(f"{path}: no graph subdirectories")
    targets_raw = _read_named(path / "targets.csv")
    splits_raw = _read_named(path / "splits.csv")
    graphs = []
    for name in names:
        g = load_graph_dir(path / name)
        if graphs and g.features.shape[1] != graphs[0].features.shape[1]:
            raise DatasetError(f"{path / name}: feature width {g.features.shape[1]} != "
                               f"{graphs[0].features.shape[1]} of {names[0]}")
        graphs.append(g)
    targets, splits = [], []
    for name in names:
        if name not in targets_raw:
            raise DatasetError(f"{path / 'targets.csv'}: no target for graph {name!r}")
        if name not in splits_raw:
            raise DatasetError(f"{path / 'splits.csv'}: no split for graph {name!r}")
        split, lineno = splits_raw[name]
        if split not in SPLIT_NAMES:
            raise DatasetError(f"{path / 'splits.csv'}:{lineno}: unknown split {split!r}")
        targets.append(targets_raw[name])
        splits.append(split)
    regression = not all(_INT_RE.match(tok) for tok, _ in targets)
    values = [_parse_number(tok, path / "targets.csv", ln, float if regression else int) for tok, ln in targets]
    return GraphDataset(graphs, np.asarray(values, dtype=np.float64 if regression else np.int64),
                        np.asarray(splits), names, regression)


# -- writing -------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_matrix(path: Path, m: np.ndarray):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in m:
            f.write(",".join(_fmt(x) for x in row) + "\n")


def write_ints(path: Path, values):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(f"{int(v)}\n" for v in values)


def save_graph_dir(g: Graph, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "edges.tsv", "w", encoding="utf-8", newline="\n") as f:
        f.writelines(f"{u}\t{v}\n" for u, v in g.edge_list())
    write_matrix(path / "features.csv", g.features)


def save_node_dataset(ds: NodeDataset, path):
    path = Path(path)
    g = ds.graph
    save_graph_dir(g, path)
    write_ints(path / "labels.csv", g.labels)
    for name in SPLIT_NAMES:
        write_ints(path / f"{name}.idx", g.splits[name])


def save_graph_dataset(ds: GraphDataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, g in zip(ds.names, ds.graphs):
        save_graph_dir(g, path / name)
    with open(path / "targets.csv", "w", encoding="utf-8", newline="\n") as f:
        for name, t in zip(ds.names, ds.targets):
            f.write(f"{name},{_fmt(t) if ds.regression else int(t)}\n")
    with open(path / "splits.csv", "w", encoding="utf-8", newline="\n") as f:
        for name, s in zip(ds.names, ds.splits):
            f.write(f"{name},{s}\n")


# -- generators ----------------------------------------------------------------

def _check_p(**probs):
    for name, p in probs.items():
        if not 0 <= p <= 1:
            raise ValueError(f"{name}={p} is not a probability")


def split_indices(n, rng, fractions=(0.6, 0.2, 0.2)):
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:])}


def sbm(n=60, blocks=2, p_in=0.3, p_out=0.02, noise=0.5, seed=0) -> NodeDataset:
    """Stochastic block model; features are the one-hot block plus N(0, noise^2)."""
    _check_p(p_in=p_in, p_out=p_out)
    if blocks < 1 or n < blocks:
        raise ValueError("need 1 <= blocks <= n")
    rng = np.random.default_rng(seed)
    block = np.arange(n) * blocks // n
    same = block[:, None] == block[None, :]
    probs = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    edges = np.argwhere(upper)
    features = np.eye(blocks)[block] + noise * rng.standard_normal((n, blocks))
    return NodeDataset(build_graph(edges, features, block, split_indices(n, rng)))


def cycle(n) -> Graph:
    if n < 3:
        raise ValueError("cycles need n >= 3")
    return build_graph([(i, (i + 1) % n) for i in range(n)], np.ones((n, 1)))


def disjoint_cycles(n, count) -> Graph:
    if n < 3:
        raise ValueError("cycles need n >= 3")
    edges = [(c * n + i, c * n + (i + 1) % n) for c in range(count) for i in range(n)]
    return build_graph(edges, np.ones((n * count, 1)))


def csl(n, skip) -> Graph:
    """Circular skip-link graph: an n-cycle plus chords i -- i+skip."""
    if n < 3:
        raise ValueError("cycles need n >= 3")
    edges = [(i, (i + 1) % n) for i in range(n)] + [(i, (i + skip) % n) for i in range(n)]
    return build_graph(edges, np.ones((n, 1)))


def random_graph(n, p, seed=0, d=4) -> Graph:
    """G(n, p) with standard-normal features of width d."""
    _check_p(p=p)
    rng = np.random.default_rng(seed)
    edges = np.argwhere(np.triu(rng.random((n, n)) < p, k=1))
    return build_graph(edges, rng.standard_normal((n, d)))


def sbm_graphs(count=40, n=16, p_in=0.5, p_out=0.05, seed=0) -> GraphDataset:
    """Graph classification: label 1 for a 2-block SBM, 0 for a 1-block one.

    Features are ``[1, degree / n]``. Encodings only steer attention, so
    constant features would leave every graph with the same readout.
    """
    _check_p(p_in=p_in, p_out=p_out)
    rng = np.random.default_rng(seed)
    graphs, targets = [], []
    for c in range(count):
        label = c % 2
        block = np.arange(n) * (label + 1) // n
        probs = np.where(block[:, None] == block[None, :], p_in, p_out)
        edges = np.argwhere(np.triu(rng.random((n, n)) < probs, k=1))
        deg = np.bincount(edges.reshape(-1), minlength=n) / n
        graphs.append(build_graph(edges, np.column_stack([np.ones(n), deg])))
        targets.append(label)
    split_of = split_indices(count, rng)
    splits = np.empty(count, dtype=object)
    for name, idx in split_of.items():
        splits[idx] = name
    names = [f"g{c:04d}" for c in range(count)]
    return GraphDataset(graphs, np.asarray(targets, dtype=np.int64), splits.astype(str), names)


GENERATORS = ("sbm", "cycle", "disjoint_cycles", "csl", "random", "sbm_graphs")


def generate(kind, seed=0, **params):
    if kind == "sbm":
        return sbm(seed=seed, **params)
    if kind == "cycle":
        return cycle(**params)
    if kind == "disjoint_cycles":
        return disjoint_cycles(**params)
    if kind == "csl":
        return csl(**params)
    if kind == "random":
        return random_graph(seed=seed, **params)
    if kind == "sbm_graphs":
        return sbm_graphs(seed=seed, **params)
    raise ValueError(f"unknown generator '{kind}'")
