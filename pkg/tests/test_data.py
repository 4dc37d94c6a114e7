import numpy as np
import pytest

from degta.data import (DatasetError, NodeDataset, csl, cycle, disjoint_cycles, generate, load_graph_dataset,
                        load_node_dataset, random_graph, save_graph_dataset, save_node_dataset, sbm, sbm_graphs,
                        split_indices)
from degta.graph import build_graph


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _two_node(tmp_path):
    d = tmp_path / "ds"
    _write(d / "edges.tsv", "0\t1\n")
    _write(d / "features.csv", "1.0,2.0,3.0\n4.0,5.0,6.0\n")
    _write(d / "labels.csv", "0\n1\n")
    _write(d / "train.idx", "0\n")
    _write(d / "val.idx", "1\n")
    _write(d / "test.idx", "")
    return d


def test_minimal_fixture(tmp_path):
    ds = load_node_dataset(_two_node(tmp_path))
    g = ds.graph
    assert g.num_nodes == 2 and g.features.shape == (2, 3)
    assert g.edge_list() == [(0, 1)] and ds.num_classes == 2
    assert g.splits["test"].size == 0


def test_label_count_mismatch_names_file(tmp_path):
    d = _two_node(tmp_path)
    _write(d / "labels.csv", "0\n")
    with pytest.raises(DatasetError, match="labels.csv"):
        load_node_dataset(d)


def test_overlapping_splits(tmp_path):
    d = _two_node(tmp_path)
    _write(d / "val.idx", "0\n")
    with pytest.raises(DatasetError, match="overlap"):
        load_node_dataset(d)


@pytest.mark.parametrize("fname,text,match", [
    ("edges.tsv", "0 1\n", "edges.tsv:1"),
    ("edges.tsv", "0\t7\n", "out of range"),
    ("features.csv", "1.0,2.0\n3.0\n", "features.csv:2"),
    ("features.csv", "1.0,x,3\n4,5,6\n", "features.csv:1"),
    ("labels.csv", "0\n-1\n", "negative"),
    ("train.idx", "5\n", "train.idx:1"),
])
def test_malformed_files(tmp_path, fname, text, match):
    d = _two_node(tmp_path)
    _write(d / fname, text)
    with pytest.raises(DatasetError, match=match):
        load_node_dataset(d)


def test_missing_file(tmp_path):
    d = _two_node(tmp_path)
    (d / "labels.csv").unlink()
    with pytest.raises(DatasetError, match="missing"):
        load_node_dataset(d)


def test_node_round_trip(tmp_path):
    ds = sbm(n=20, seed=3)
    save_node_dataset(ds, tmp_path / "x")
    assert load_node_dataset(tmp_path / "x") == ds


def _two_graphs(tmp_path, targets="a,1\nb,0\n"):
    d = tmp_path / "gs"
    for name in ("a", "b"):
        _write(d / name / "edges.tsv", "0\t1\n1\t2\n")
        _write(d / name / "features.csv", "1\n1\n1\n")
    _write(d / "targets.csv", targets)
    _write(d / "splits.csv", "a,train\nb,test\n")
    return d


def test_two_graph_fixture(tmp_path):
    ds = load_graph_dataset(_two_graphs(tmp_path))
    assert len(ds.graphs) == 2 and ds.names == ["a", "b"]
    assert not ds.regression and ds.targets.tolist() == [1, 0]
    assert ds.indices("train").tolist() == [0]


def test_regression_targets(tmp_path):
    ds = load_graph_dataset(_two_graphs(tmp_path, "a,0.25\nb,3\n"))
    assert ds.regression and ds.targets.dtype == np.float64
    assert ds.targets.tolist() == [0.25, 3.0] and ds.num_classes == 1


def test_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        load_graph_dataset(tmp_path / "empty")


def test_graph_dataset_errors(tmp_path):
    d = _two_graphs(tmp_path, "a,1\n")
    with pytest.raises(DatasetError, match="no target for graph 'b'"):
        load_graph_dataset(d)
    d = _two_graphs(tmp_path)
    _write(d / "splits.csv", "a,train\nb,holdout\n")
    with pytest.raises(DatasetError, match="splits.csv:2"):
        load_graph_dataset(d)


def test_graph_round_trip(tmp_path):
    ds = sbm_graphs(count=6, n=8, seed=1)
    save_graph_dataset(ds, tmp_path / "g")
    assert load_graph_dataset(tmp_path / "g") == ds
    reg = type(ds)(ds.graphs, ds.targets * 0.1 + 1e-17, ds.splits, ds.names, regression=True)
    save_graph_dataset(reg, tmp_path / "r")
    back = load_graph_dataset(tmp_path / "r")
    assert back == reg and back.regression


def test_round_trip_preserves_float_bits(tmp_path):
    base = sbm(n=10, seed=0).graph
    feats = np.random.default_rng(0).standard_normal((10, 2)) / 3
    ds = NodeDataset(build_graph(base.edge_list(), feats, base.labels, base.splits))
    save_node_dataset(ds, tmp_path / "f")
    assert np.array_equal(load_node_dataset(tmp_path / "f").graph.features, feats)


def test_cycle_generator():
    g = cycle(6)
    assert g.num_nodes == 6 and g.num_edges == 6 and set(g.degree) == {2}


def test_other_generators():
    assert disjoint_cycles(3, 2).num_edges == 6
    c = csl(11, 3)
    assert c.num_edges == 22 and set(c.degree) == {4}
    with pytest.raises(ValueError):
        cycle(2)
    with pytest.raises(ValueError):
        generate("nope")


def test_sbm_deterministic():
    a, b = sbm(seed=5), sbm(seed=5)
    assert a.graph.edge_list() == b.graph.edge_list() and a == b
    assert sbm(seed=6).graph.edge_list() != a.graph.edge_list()


def test_sbm_structure():
    ds = sbm(n=60, blocks=2, p_in=0.3, p_out=0.0, noise=0.0, seed=0)
    g = ds.graph
    for u, v in g.edge_list():
        assert g.labels[u] == g.labels[v]
    np.testing.assert_array_equal(g.features, np.eye(2)[g.labels])
    sizes = [len(g.splits[k]) for k in ("train", "val", "test")]
    assert sizes == [36, 12, 12]


def test_generate_dispatch():
    assert generate("random", seed=1, n=9, p=0.4) == random_graph(9, 0.4, seed=1)
    assert generate("sbm", seed=2, n=20) == sbm(n=20, seed=2)


def test_split_indices_partition():
    s = split_indices(17, np.random.default_rng(0))
    allidx = np.concatenate(list(s.values()))
    assert sorted(allidx.tolist()) == list(range(17))


def test_bad_probability():
    with pytest.raises(ValueError):
        sbm(p_in=1.5)
