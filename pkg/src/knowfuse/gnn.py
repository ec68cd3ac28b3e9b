"""Working-graph encoders: relational graph convolution and single-head
graph attention, followed by mean pooling.

Message passing is expressed as dense matrix products against constant
per-relation adjacency matrices, so gradients flow through the same
audited primitives as the rest of the engine. Edge direction follows
storage order: an edge (u, r, v) delivers u's features to v.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .errors import ConfigError, DimensionError
from .graphbuild import WorkingGraph

RGCN = "rgcn"
GAT = "gat"
_MASK = -1e30

ACTIVATIONS = {
    "relu": dm.relu,
    "leaky_relu": dm.leaky_relu,
    "tanh": dm.tanh,
    "sigmoid": dm.sigmoid,
    "identity": lambda x: x,
}


@dataclass(frozen=True)
class GnnConfig:
    arch: str = RGCN
    layers: int = 2
    hidden_dim: int = 64
    out_dim: int = 64
    activation: str = "relu"
    relation_norm: str = "mean"
    num_bases: int = 0  # 0 = one full matrix per relation

    def validate(self) -> None:
        if self.arch not in (RGCN, GAT):
            raise ConfigError(f"unknown gnn arch {self.arch!r}")
        if self.layers < 1:
            raise ConfigError("gnn layers must be >= 1")
        if self.hidden_dim < 1 or self.out_dim < 1:
            raise ConfigError("gnn dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.relation_norm not in ("none", "mean"):
            raise ConfigError(f"unknown relation norm {self.relation_norm!r}")
        if self.num_bases < 0:
            raise ConfigError("num_bases must be >= 0")

    def dims(self, in_dim: int) -> list[int]:
        return [in_dim] + [self.hidden_dim] * (self.layers - 1) + [self.out_dim]


class GraphStructure:
    """Constant matrices derived from one working graph.

    ``adjacency[r]`` is |V| x |V| with entry (v, u) set for each edge
    (u, r, v); with mean normalization each row is divided by the
    neighborhood size |N_r(v)|. ``gat_mask``/``gat_edges`` encode the
    relation-agnostic neighborhood used by attention.
    """

    def __init__(self, graph: WorkingGraph, relation_norm: str = "mean"):
        n = graph.num_nodes
        self.num_nodes = n
        self.num_relations = len(graph.relations)
        per_rel: dict[int, np.ndarray] = {}
        any_edge = np.zeros((n, n))
        for src, rel, dst in graph.edges:
            mat = per_rel.setdefault(rel, np.zeros((n, n)))
            mat[dst, src] = 1.0
            any_edge[dst, src] = 1.0
        if relation_norm == "mean":
            for mat in per_rel.values():
                degree = mat.sum(axis=1, keepdims=True)
                np.divide(mat, degree, out=mat, where=degree > 0)
        self.adjacency = {rel: dm.constant(mat) for rel, mat in sorted(per_rel.items())}
        self.gat_edges = dm.constant(any_edge)
        self.gat_mask = dm.constant(np.where(any_edge > 0, 0.0, _MASK))
        self._ones_row = dm.constant(np.ones((1, n)))
        self._ones_col = dm.constant(np.ones((n, 1)))


def init_params(
    store: dm.ParameterStore,
    config: GnnConfig,
    in_dim: int,
    num_relations: int,
    rng: np.random.Generator,
    prefix: str = "gnn",
) -> None:
    """Register all encoder parameters in deterministic order."""
    config.validate()
    dims = config.dims(in_dim)
    for layer in range(config.layers):
        d_in, d_out = dims[layer], dims[layer + 1]
        if config.arch == RGCN:
            if config.num_bases > 0:
                for b in range(config.num_bases):
                    store.add(f"{prefix}.l{layer}.basis{b}", dm.glorot_uniform(rng, (d_in, d_out)))
                store.add(
                    f"{prefix}.l{layer}.comb",
                    dm.glorot_uniform(rng, (num_relations, config.num_bases)),
                )
            else:
                for rel in range(num_relations):
                    store.add(f"{prefix}.l{layer}.r{rel}", dm.glorot_uniform(rng, (d_in, d_out)))
        else:
            store.add(f"{prefix}.l{layer}.W", dm.glorot_uniform(rng, (d_in, d_out)))
            store.add(f"{prefix}.l{layer}.a", dm.glorot_uniform(rng, (2 * d_out,)))


def _relation_weight(
    store: dm.ParameterStore, config: GnnConfig, prefix: str, layer: int, rel: int
) -> dm.Node:
    if config.num_bases > 0:
        comb = store.get(f"{prefix}.l{layer}.comb")
        terms = None
        for b in range(config.num_bases):
            coeff = dm.pick(comb, rel * config.num_bases + b)
            part = dm.smul(coeff, store.get(f"{prefix}.l{layer}.basis{b}"))
            terms = part if terms is None else dm.add(terms, part)
        return terms
    return store.get(f"{prefix}.l{layer}.r{rel}")


def rgcn_layer(
    H: dm.Node,
    structure: GraphStructure,
    store: dm.ParameterStore,
    config: GnnConfig,
    layer: int,
    prefix: str = "gnn",
) -> dm.Node:
    """One relational convolution: sum over relations of normalized
    neighbor aggregates, each passed through a relation-specific map."""
    act = ACTIVATIONS[config.activation]
    pre = None
    for rel, adjacency in structure.adjacency.items():
        W = _relation_weight(store, config, prefix, layer, rel)
        if W.value.shape[0] != H.value.shape[1]:
            raise DimensionError(
                f"layer {layer} relation {rel}: weight expects dim {W.value.shape[0]}, "
                f"features have {H.value.shape[1]}"
            )
        msg = dm.matmul(adjacency, dm.matmul(H, W))
        pre = msg if pre is None else dm.add(pre, msg)
    if pre is None:  # graph with no edges at all
        out_dim = config.out_dim if layer == config.layers - 1 else config.hidden_dim
        pre = dm.constant(np.zeros((structure.num_nodes, out_dim)))
    return act(pre)


def gat_layer(
    H: dm.Node,
    structure: GraphStructure,
    store: dm.ParameterStore,
    config: GnnConfig,
    layer: int,
    prefix: str = "gnn",
) -> dm.Node:
    """Single-head attention layer.

    Pairwise logits decompose as a_dst . Wh_v + a_src . Wh_u, which is
    the concatenation form of the scoring vector evaluated without
    materializing per-edge concatenations. Non-edges are masked to a
    large negative constant before the row softmax; isolated rows are
    zeroed afterwards so they produce sigma(0) like the convolution.
    """
    act = ACTIVATIONS[config.activation]
    W = store.get(f"{prefix}.l{layer}.W")
    a = store.get(f"{prefix}.l{layer}.a")
    d_out = W.value.shape[1]
    n = structure.num_nodes
    Wh = dm.matmul(H, W)
    s_dst = dm.matmul(Wh, dm.reshape(dm.slice1d(a, 0, d_out), (d_out,)))
    s_src = dm.matmul(Wh, dm.reshape(dm.slice1d(a, d_out, 2 * d_out), (d_out,)))
    logits = dm.add(
        dm.matmul(dm.reshape(s_dst, (n, 1)), structure._ones_row),
        dm.matmul(structure._ones_col, dm.reshape(s_src, (1, n))),
    )
    masked = dm.add(dm.leaky_relu(logits), structure.gat_mask)
    attention = dm.mul(dm.softmax(masked), structure.gat_edges)
    return act(dm.matmul(attention, Wh))


def attention_matrix(
    H: dm.Node,
    structure: GraphStructure,
    store: dm.ParameterStore,
    layer: int,
    prefix: str = "gnn",
) -> np.ndarray:
    """Attention coefficients of one GAT layer, for tests and reports."""
    W = store.get(f"{prefix}.l{layer}.W")
    a = store.get(f"{prefix}.l{layer}.a")
    d_out = W.value.shape[1]
    n = structure.num_nodes
    Wh = H.value @ W.value
    s_dst = Wh @ a.value[:d_out]
    s_src = Wh @ a.value[d_out:]
    logits = s_dst[:, None] + s_src[None, :]
    slope_applied = np.where(logits > 0, logits, 0.01 * logits)
    masked = slope_applied + structure.gat_mask.value
    shifted = np.exp(masked - masked.max(axis=1, keepdims=True))
    att = shifted / shifted.sum(axis=1, keepdims=True)
    return att * structure.gat_edges.value


def mean_pool(H: dm.Node) -> dm.Node:
    """Average node representations into one graph vector."""
    if H.value.ndim != 2 or H.value.shape[0] == 0:
        raise DimensionError("mean_pool requires a nonempty node-feature matrix")
    return dm.mean_rows(H)


def encode(
    features: dm.Node,
    structure: GraphStructure,
    store: dm.ParameterStore,
    config: GnnConfig,
    prefix: str = "gnn",
) -> dm.Node:
    """Run all layers and pool: the graph-side representation."""
    layer_fn = rgcn_layer if config.arch == RGCN else gat_layer
    H = features
    for layer in range(config.layers):
        H = layer_fn(H, structure, store, config, layer, prefix=prefix)
    return mean_pool(H)
