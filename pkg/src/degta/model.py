"""DeGTA layers, task heads, loss, Adam training and the attention report."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .attention_global import (GlobalAttentionParams, Sampling, dense_global_aggregate, global_aggregate,
                               global_view_attention, sample, sample_scores, sampled_attribute_attention,
                               scaled_attention)
from .attention_local import (LocalAttentionParams, glorot, local_aggregate, local_integrate, local_scores,
                              pair_score_parts, view_weights, zeros)
from .autograd import Tape, Tensor
from .data import GraphDataset, NodeDataset
from .encodings import EncodingSet, encode
from .graph import Graph, candidate_mask, neighborhoods

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "coupled_attention", "summed_integration", "no_global", "dense_global")


@dataclass
class DeGTAConfig:
    K: int = 8
    hidden: int = 64  # d
    d_s: int | None = None  # defaults to K
    d_p: int | None = None
    d_att: int = 16  # d'
    d_attr_att: int = 64  # d''
    layers: int = 2
    pe_kind: str = "jaccard"
    se_kind: str = "rwse"
    h: float = 1.0
    sampling: str = "topk"
    k_g: int | None = None  # defaults to K
    tau: float | None = None
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.0
    residual: bool = False
    ablation: str = "full"
    jaccard_logits: bool = False
    literal_sampling_softmax: bool = False

    def __post_init__(self):
        if self.d_s is None:
            self.d_s = self.K
        if self.d_p is None:
            self.d_p = self.K
        if self.k_g is None:
            self.k_g = self.K
        self.validate()

    def validate(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        for name in ("hidden", "d_s", "d_p", "d_att", "d_attr_att", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation '{self.ablation}' (choose from {ABLATIONS})")
        self.sampling_strategy()

    def sampling_strategy(self) -> Sampling:
        return Sampling(self.sampling, self.k_g, self.tau)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class GraphInputs:
    """A graph with everything the forward pass precomputes once."""

    graph: Graph
    enc: EncodingSet
    nbr: tuple
    candidates: np.ndarray
    jaccard_bias: np.ndarray | None = None

    @property
    def n(self):
        return self.graph.num_nodes


def prepare(g: Graph, config: DeGTAConfig) -> GraphInputs:
    enc = encode(g, config.pe_kind, config.se_kind, config.K, config.h)
    nbr = neighborhoods(g)
    bias = None
    if config.jaccard_logits and enc.pairwise_jaccard is not None:
        bias = enc.pairwise_jaccard[nbr[0], nbr[1]][:, None]
    return GraphInputs(g, enc, nbr, candidate_mask(g), bias)


# -- parameters ----------------------------------------------------------------

@dataclass
class MLP:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d_in, d_out):
        return cls(glorot(rng, d_in, d_out), zeros((1, d_out)), glorot(rng, d_out, d_out), zeros((1, d_out)))

    def __call__(self, x):
        return ag.leaky_relu(x @ self.W1 + self.b1) @ self.W2 + self.b2

    def named(self):
        return [("W1", self.W1), ("b1", self.b1), ("W2", self.W2), ("b2", self.b2)]


@dataclass
class CoupledParams:
    """Single shared attention over [S || P || H] used by the coupled ablation."""

    W_c: Tensor
    q_c: Tensor
    W_cq: Tensor
    W_ck: Tensor

    @classmethod
    def init(cls, rng, width, d1):
        return cls(glorot(rng, width, d1), glorot(rng, 2 * d1, 1), glorot(rng, width, d1), glorot(rng, width, d1))

    def named(self):
        return [("W_c", self.W_c), ("q_c", self.q_c), ("W_cq", self.W_cq), ("W_ck", self.W_ck)]


@dataclass
class DeGTALayer:
    enc_s: MLP
    enc_p: MLP
    enc_a: MLP
    local: LocalAttentionParams
    glob: GlobalAttentionParams
    W_l: Tensor
    W_g: Tensor
    coupled: CoupledParams | None = None

    @classmethod
    def init(cls, rng, c: DeGTAConfig):
        d = c.hidden
        layer = cls(
            enc_s=MLP.init(rng, c.K, c.d_s),
            enc_p=MLP.init(rng, c.K, c.d_p),
            enc_a=MLP.init(rng, d, d),
            local=LocalAttentionParams.init(rng, c.d_s, c.d_p, d, c.d_att, c.d_attr_att),
            glob=GlobalAttentionParams.init(rng, c.d_s, c.d_p, d, c.d_att, c.d_attr_att),
            W_l=glorot(rng, d, d),
            W_g=glorot(rng, d, d),
        )
        if c.ablation == "coupled_attention":
            layer.coupled = CoupledParams.init(rng, c.d_s + c.d_p + d, c.d_att)
        return layer

    def named(self):
        out = []
        for prefix, part in (("enc_s", self.enc_s), ("enc_p", self.enc_p), ("enc_a", self.enc_a),
                             ("local", self.local), ("global", self.glob)):
            out += [(f"{prefix}.{k}", v) for k, v in part.named()]
        out += [("W_l", self.W_l), ("W_g", self.W_g)]
        if self.coupled is not None:
            out += [(f"coupled.{k}", v) for k, v in self.coupled.named()]
        return out


@dataclass
class LayerTrace:
    local_weights: np.ndarray
    global_weights: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    s: np.ndarray
    p: np.ndarray
    a: np.ndarray
    z_local: np.ndarray
    rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    us: np.ndarray = field(default_factory=lambda: np.zeros(0))
    up: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ua: np.ndarray = field(default_factory=lambda: np.zeros(0))
    z_global: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class ForwardResult:
    H: Tensor
    output: Tensor
    traces: list


def _col(t):
    return np.asarray(t.values).reshape(-1).copy()


def layer_forward(layer: DeGTALayer, x: GraphInputs, H_prev: Tensor, config: DeGTAConfig,
                  rng=None, training=False, trace=None) -> Tensor:
    n = x.n
    S_l = layer.enc_s(Tensor(x.enc.S))
    P_l = layer.enc_p(Tensor(x.enc.P))
    H_l = layer.enc_a(H_prev)
    if training and config.dropout > 0:
        H_l = ag.dropout(H_l, config.dropout, rng)
    ablation = config.ablation

    if ablation == "coupled_attention":
        H_local, H_global = _coupled_forward(layer, x, S_l, P_l, H_l, config, trace)
    else:
        triples = local_scores(S_l, P_l, H_l, x.nbr, layer.local)
        z = local_integrate(triples, layer.local.view_logits, x.jaccard_bias, neighbor_only=True)
        H_local, z_hat = local_aggregate(z, H_l, x.nbr, n)
        if trace is not None:
            with ag.no_tape():
                trace.update(s=_col(triples.s), p=_col(triples.p), a=_col(triples.a), z_local=_col(z_hat))
        H_global = None
        if ablation == "dense_global":
            U_s, U_p = global_view_attention(S_l, P_l, layer.glob)
            H_global, zg = dense_global_aggregate(U_s, U_p, H_l, layer.glob)
            if trace is not None:
                rows, cols = np.nonzero(~np.eye(n, dtype=bool))
                trace.update(rows=rows, cols=cols, us=U_s.values[rows, cols], up=U_p.values[rows, cols],
                             ua=np.full(len(rows), np.nan), z_global=zg.values[rows, cols])
        elif ablation != "no_global":
            U_s, U_p = global_view_attention(S_l, P_l, layer.glob)
            M = sample_scores(U_s, U_p, x.candidates, layer.glob.view_logits, config.literal_sampling_softmax)
            sampled = sample(M, config.sampling_strategy(), x.candidates)
            U_a = sampled_attribute_attention(H_l, sampled.rows, sampled.cols, layer.glob, n)
            H_global, zg = global_aggregate(U_s, U_p, U_a, sampled, H_l, layer.glob.view_logits, n)
            if trace is not None:
                r, c = sampled.rows, sampled.cols
                trace.update(rows=r, cols=c, us=U_s.values[r, c], up=U_p.values[r, c], ua=_col(U_a),
                             z_global=_col(zg))

    if H_global is None:
        out = H_local @ layer.W_l
    elif ablation == "summed_integration":
        out = H_local + H_global
    else:
        out = H_local @ layer.W_l + H_global @ layer.W_g
    if config.residual:
        out = out + H_prev
    return out


def _coupled_forward(layer, x, S_l, P_l, H_l, config, trace):
    n = x.n
    cp = layer.coupled
    X = ag.concat([S_l, P_l, H_l])
    src, dst = x.nbr
    z_src, z_nbr = pair_score_parts(X, cp.W_c, cp.q_c, src, dst)
    H_local, z_hat = local_aggregate(z_nbr, H_l, x.nbr, n)
    U = scaled_attention(X, cp.W_cq, cp.W_ck)
    M = ag.masked_row_softmax(U, x.candidates, allow_empty=True)
    sampled = sample(M, config.sampling_strategy(), x.candidates)
    if len(sampled.rows):
        zg = ag.segment_softmax(ag.gather_elements(U, sampled.rows, sampled.cols), sampled.rows, n)
        gate = zg * ag.gather_elements(sampled.mask, sampled.rows, sampled.cols)
        H_global = ag.scatter_add_rows(ag.gather_rows(H_l, sampled.cols) * gate, sampled.rows, n)
    else:
        zg = Tensor(np.zeros((0, 1)))
        H_global = Tensor(np.zeros(H_l.shape))
    if trace is not None:
        zl = _col(z_src) + _col(z_nbr)
        r, c = sampled.rows, sampled.cols
        trace.update(s=zl, p=zl, a=zl, z_local=_col(z_hat), rows=r, cols=c,
                     us=U.values[r, c], up=U.values[r, c], ua=U.values[r, c], z_global=_col(zg))
    return H_local, H_global


class DeGTAModel:
    def __init__(self, config: DeGTAConfig, in_dim: int, num_outputs: int, task="node", regression=False):
        if task not in ("node", "graph"):
            raise ValueError(f"unknown task '{task}'")
        self.config = config
        self.in_dim = in_dim
        self.num_outputs = num_outputs
        self.task = task
        self.regression = regression
        rng = np.random.default_rng(config.seed)
        d = config.hidden
        self.W_in = glorot(rng, in_dim, d) if in_dim != d else None
        self.b_in = zeros((1, d)) if in_dim != d else None
        self.layers = [DeGTALayer.init(rng, config) for _ in range(config.layers)]
        self.W_out = glorot(rng, d, num_outputs)
        self.b_out = zeros((1, num_outputs))

    def named_parameters(self):
        out = []
        if self.W_in is not None:
            out += [("input.W", self.W_in), ("input.b", self.b_in)]
        for i, layer in enumerate(self.layers):
            out += [(f"layers.{i}.{k}", v) for k, v in layer.named()]
        out += [("head.W", self.W_out), ("head.b", self.b_out)]
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.values.size for p in self.parameters()))

    def embed(self, x: GraphInputs, rng=None, training=False, traces=None) -> Tensor:
        feats = x.graph.features
        if feats.shape[1] != self.in_dim:
            raise ag.ShapeError(f"graph has {feats.shape[1]} features, model expects {self.in_dim}")
        H = Tensor(feats)
        if self.W_in is not None:
            H = H @ self.W_in + self.b_in
        for layer in self.layers:
            tr = None
            if traces is not None:
                src, dst = x.nbr
                tr = {"local_weights": view_weights(layer.local.view_logits).values[0].copy(),
                      "global_weights": view_weights(layer.glob.view_logits).values[0].copy(),
                      "src": src, "dst": dst}
            H = layer_forward(layer, x, H, self.config, rng, training, tr)
            if tr is not None:
                traces.append(LayerTrace(**tr))
        return H

    def forward(self, x: GraphInputs, rng=None, training=False, trace=False) -> ForwardResult:
        traces = [] if trace else None
        H = self.embed(x, rng, training, traces)
        pooled = ag.mean_rows(H) if self.task == "graph" else H
        return ForwardResult(H, pooled @ self.W_out + self.b_out, traces or [])

    def state(self):
        return [p.values.copy() for p in self.parameters()]

    def load_state(self, state):
        for p, v in zip(self.parameters(), state):
            p.values = v.copy()


def model_forward(model: DeGTAModel, x: GraphInputs) -> ForwardResult:
    return model.forward(x)


def mean_pool(H: Tensor) -> Tensor:
    return ag.mean_rows(H)


def loss(output: Tensor, labels, regression=False) -> Tensor:
    """Cross-entropy for class labels, mean absolute error for real targets."""
    if regression:
        return ag.l1_loss(output, labels)
    labels = np.asarray(labels)
    if labels.size and labels.max() >= output.shape[1]:
        raise ValueError(f"label {labels.max()} needs more than {output.shape[1]} classes")
    return ag.cross_entropy(output, labels)


# -- optimizer -----------------------------------------------------------------

class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.b1
            m += (1 - self.b1) * p.grad
            v *= self.b2
            v += (1 - self.b2) * p.grad ** 2
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.values = p.values - self.lr * (update + self.weight_decay * p.values)


# -- training ------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DeGTAModel
    history: list
    best_epoch: int
    metrics: dict


def metric_name(regression):
    return "mae" if regression else "accuracy"


def _score(output, labels, regression):
    if regression:
        return float(np.abs(output.reshape(-1) - np.asarray(labels, dtype=np.float64)).mean())
    return float((output.argmax(axis=1) == np.asarray(labels)).mean())


def _better(a, b, regression):
    return a < b if regression else a > b


def evaluate(model: DeGTAModel, dataset, inputs=None) -> dict:
    """Metric and loss on each split, with no tape and no dropout."""
    regression = model.regression
    out = {"metric": metric_name(regression)}
    if isinstance(dataset, NodeDataset):
        x = inputs if inputs is not None else prepare(dataset.graph, model.config)
        logits = model.forward(x).output
        g = dataset.graph
        for split, idx in g.splits.items():
            if len(idx) == 0:
                continue
            out[split] = _score(logits.values[idx], g.labels[idx], regression)
            out[f"{split}_loss"] = loss(Tensor(logits.values[idx]), g.labels[idx], regression).item()
        return out
    xs = inputs if inputs is not None else [prepare(g, model.config) for g in dataset.graphs]
    preds = np.concatenate([model.forward(x).output.values for x in xs], axis=0)
    for split in ("train", "val", "test"):
        idx = dataset.indices(split)
        if len(idx) == 0:
            continue
        out[split] = _score(preds[idx], dataset.targets[idx], regression)
        out[f"{split}_loss"] = loss(Tensor(preds[idx]), dataset.targets[idx], regression).item()
    return out


def build_model(dataset, config: DeGTAConfig) -> DeGTAModel:
    if isinstance(dataset, NodeDataset):
        return DeGTAModel(config, dataset.graph.features.shape[1], dataset.num_classes, "node")
    return DeGTAModel(config, dataset.num_features, dataset.num_classes, "graph", dataset.regression)


def train(dataset, config: DeGTAConfig, model: DeGTAModel | None = None, log_every=0) -> TrainResult:
    """Full-batch Adam training; returns the best-validation checkpoint."""
    model = model or build_model(dataset, config)
    rng = np.random.default_rng(config.seed + 1)
    opt = Adam(model.parameters(), config.learning_rate, weight_decay=config.weight_decay)
    regression = model.regression
    node_task = isinstance(dataset, NodeDataset)
    if node_task:
        inputs = prepare(dataset.graph, config)
        train_idx = dataset.graph.splits["train"]
        labels = dataset.graph.labels
    else:
        inputs = [prepare(g, config) for g in dataset.graphs]
        train_idx = dataset.indices("train")

    history = []
    best = None
    for epoch in range(1, config.epochs + 1):
        opt.zero_grad()
        with Tape() as tape:
            if node_task:
                out = model.forward(inputs, rng, training=True).output
                train_loss = loss(out[train_idx], labels[train_idx], regression)
            else:
                outs = [model.forward(inputs[i], rng, training=True).output for i in train_idx]
                stacked = ag.concat(outs, axis=0)
                train_loss = loss(stacked, dataset.targets[train_idx], regression)
            if not np.isfinite(train_loss.item()):
                raise ag.NumericError(f"non-finite training loss at epoch {epoch}")
            tape.backward(train_loss)
        opt.step()

        ev = evaluate(model, dataset, inputs)
        val = ev.get("val", ev.get("train"))
        row = {"epoch": epoch, "train_loss": train_loss.item(), "val_metric": val,
               "train_metric": ev.get("train"), "val_loss": ev.get("val_loss", ev.get("train_loss"))}
        history.append(row)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.4f val %.4f", epoch, row["train_loss"], val)
        if (best is None or _better(val, best[1], regression)
                or (val == best[1] and row["val_loss"] < best[2])):
            best = (epoch, val, row["val_loss"], model.state())

    model.load_state(best[3])
    return TrainResult(model, history, best[0], evaluate(model, dataset, inputs))


# -- attention report ----------------------------------------------------------

_TRIPLE = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number"}

# JSON Schema (draft 2020-12) of the export_report output
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["layers", "summary", "local_edges", "global_pairs"],
    "additionalProperties": False,
    "properties": {
        "layers": {"type": "array", "items": {
            "type": "object", "required": ["local_weights", "global_weights"], "additionalProperties": False,
            "properties": {"local_weights": _TRIPLE, "global_weights": _TRIPLE}}},
        "summary": {"type": "object", "required": ["positional", "structural", "attribute"],
                    "additionalProperties": False,
                    "properties": {"positional": _NUM, "structural": _NUM, "attribute": _NUM}},
        "local_edges": {"type": "array", "items": {
            "type": "object", "required": ["layer", "i", "j", "s", "p", "a", "z"], "additionalProperties": False,
            "properties": {"layer": _INT, "i": _INT, "j": _INT, "s": _NUM, "p": _NUM, "a": _NUM, "z": _NUM}}},
        "global_pairs": {"type": "array", "items": {
            "type": "object", "required": ["layer", "i", "j", "us", "up", "ua", "z"], "additionalProperties": False,
            "properties": {"layer": _INT, "i": _INT, "j": _INT, "us": _NUM, "up": _NUM,
                           "ua": {"type": ["number", "null"]}, "z": _NUM}}},
    },
}


def summary_triple(traces) -> dict:
    """Mean over layers of the averaged local and global weights, keyed by view.

    Local weights are ordered (positional, structural, attribute); global
    weights are ordered (structural, positional, attribute).
    """
    pos = struct = attr = 0.0
    for t in traces:
        lw, gw = t.local_weights, t.global_weights
        pos += (lw[0] + gw[1]) / 2
        struct += (lw[1] + gw[0]) / 2
        attr += (lw[2] + gw[2]) / 2
    n = len(traces)
    return {"positional": pos / n, "structural": struct / n, "attribute": attr / n}


def export_report(model: DeGTAModel, x: GraphInputs) -> dict:
    """JSON-ready dict of view weights and per-edge / per-pair attention."""
    traces = model.forward(x, trace=True).traces
    report = {
        "layers": [{"local_weights": t.local_weights.tolist(), "global_weights": t.global_weights.tolist()}
                   for t in traces],
        "summary": summary_triple(traces),
        "local_edges": [],
        "global_pairs": [],
    }
    for li, t in enumerate(traces):
        report["local_edges"] += [
            {"layer": li, "i": int(i), "j": int(j), "s": float(s), "p": float(p), "a": float(a), "z": float(z)}
            for i, j, s, p, a, z in zip(t.src, t.dst, t.s, t.p, t.a, t.z_local)]
        report["global_pairs"] += [
            {"layer": li, "i": int(i), "j": int(j), "us": float(us), "up": float(up),
             "ua": None if np.isnan(ua) else float(ua), "z": float(z)}
            for i, j, us, up, ua, z in zip(t.rows, t.cols, t.us, t.up, t.ua, t.z_global)]
    return report


def clone(model: DeGTAModel) -> DeGTAModel:
    return copy.deepcopy(model)
