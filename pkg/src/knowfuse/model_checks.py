"""Finite-difference registrations for every model-level operation.

Each case builds a small random instance (graph encoder, fusion op,
loss) whose scalar output is checked against central differences by
the shared harness. Together with the primitive checks this covers
every gradient-bearing path in the package.
"""

from __future__ import annotations

import numpy as np

from . import diffmath as dm
from . import fusion, gnn, objective
from .gradcheck import DEFAULT_TOLERANCE, CheckResult, check_gradients
from .graphbuild import WorkingGraph


def toy_graph(
    rng: np.random.Generator, n: int = 5, dim: int = 3, record_id: str = "toy"
) -> WorkingGraph:
    """Ring-plus-context fixture with three relation types."""
    relations = ("self", "context_link", "context_link_rev", "related_to")
    edges = [(i, 0, i) for i in range(n)]
    edges.append((0, 1, 1))
    edges.append((1, 2, 0))
    for i in range(1, n):
        j = 1 + (i % (n - 1))
        edges.append((i, 3, j))
    return WorkingGraph(
        record_id=record_id,
        concepts=tuple([-1] + list(range(n - 1))),
        labels=tuple(["<context>"] + [f"c{i}" for i in range(n - 1)]),
        hops=tuple([-1, 0] + [1] * (n - 2)),
        edges=tuple(sorted(edges, key=lambda e: (e[1], e[0], e[2]))),
        relations=relations,
        features=rng.normal(size=(n, dim)),
    )


def _gnn_case(arch: str, relation_norm: str = "mean"):
    def make(rng: np.random.Generator):
        graph = toy_graph(rng)
        config = gnn.GnnConfig(
            arch=arch, layers=2, hidden_dim=4, out_dim=3,
            activation="tanh", relation_norm=relation_norm,
        )
        structure = gnn.GraphStructure(graph, relation_norm=config.relation_norm)
        store = dm.ParameterStore()
        gnn.init_params(store, config, in_dim=3, num_relations=4, rng=rng)
        probe = rng.normal(size=3)

        def build(s):
            pooled = gnn.encode(dm.constant(graph.features), structure, s, config)
            return dm.matmul(pooled, dm.constant(probe))

        return store, build

    return make


def _gnn_basis_case(rng: np.random.Generator):
    graph = toy_graph(rng)
    config = gnn.GnnConfig(
        arch=gnn.RGCN, layers=1, hidden_dim=4, out_dim=3, activation="tanh", num_bases=2
    )
    structure = gnn.GraphStructure(graph)
    store = dm.ParameterStore()
    gnn.init_params(store, config, in_dim=3, num_relations=4, rng=rng)
    probe = rng.normal(size=3)

    def build(s):
        pooled = gnn.encode(dm.constant(graph.features), structure, s, config)
        return dm.matmul(pooled, dm.constant(probe))

    return store, build


def _fusion_case(kind: str):
    def make(rng: np.random.Generator):
        config = fusion.FusionConfig(kind=kind, dim=3, han_levels=2, bilinear_out_dim=2)
        store = dm.ParameterStore()
        fusion.init_fusion_params(store, config, graph_dim=4, student_dim=3, rng=rng)
        h_g = rng.normal(size=4)
        h_m = rng.normal(size=3)
        probe = rng.normal(size=config.out_dim)

        def build(s):
            fused = fusion.fuse(dm.constant(h_g), dm.constant(h_m), s, config)
            return dm.matmul(fused, dm.constant(probe))

        return store, build

    return make


def _align_case(rng: np.random.Generator):
    config = fusion.AlignConfig(fused_dim=3, mapping_layers=2)
    store = dm.ParameterStore()
    fusion.init_align_params(store, config, img_dim=4, txt_dim=5, rng=rng)
    e_img = rng.normal(size=4)
    e_txt = rng.normal(size=5)
    probe = rng.normal(size=3)

    def build(s):
        out = fusion.align_fuse(dm.constant(e_img), dm.constant(e_txt), s, config)
        return dm.matmul(out, dm.constant(probe))

    return store, build


def _kd_case(rng: np.random.Generator):
    store = dm.ParameterStore()
    objective.init_kd_projection(store, caption_dim=5, student_dim=3, rng=rng)
    store.add("student", rng.normal(size=3))
    caption = rng.normal(size=5)

    def build(s):
        return objective.kd_loss(s.get("student"), dm.constant(caption), s)

    return store, build


def _bce_case(rng: np.random.Generator):
    store = dm.ParameterStore()
    store.add("logit", rng.normal() * 3.0)
    y = int(rng.integers(0, 2))
    return store, lambda s: objective.bce_loss(s.get("logit"), y)


def _ce_case(rng: np.random.Generator):
    store = dm.ParameterStore()
    store.add("logits", rng.normal(size=4))
    y = int(rng.integers(0, 4))
    return store, lambda s: objective.cross_entropy_loss(s.get("logits"), y)


def _total_case(rng: np.random.Generator):
    config = objective.LossConfig(lambda_bce=0.7, lambda_kd=0.3)
    store = dm.ParameterStore()
    objective.init_kd_projection(store, caption_dim=4, student_dim=3, rng=rng)
    store.add("student", rng.normal(size=3))
    store.add("logit", rng.normal())
    caption = rng.normal(size=4)
    y = int(rng.integers(0, 2))

    def build(s):
        cls = objective.bce_loss(s.get("logit"), y)
        kd = objective.kd_loss(s.get("student"), dm.constant(caption), s)
        return objective.total_loss(cls, kd, config)

    return store, build


CASES = {
    "gnn/rgcn": _gnn_case(gnn.RGCN),
    "gnn/rgcn_unnormalized": _gnn_case(gnn.RGCN, relation_norm="none"),
    "gnn/rgcn_basis": _gnn_basis_case,
    "gnn/gat": _gnn_case(gnn.GAT),
    "fusion/gated": _fusion_case(fusion.GATED),
    "fusion/bilinear": _fusion_case(fusion.BILINEAR),
    "fusion/han": _fusion_case(fusion.HAN),
    "fusion/multiplicative": _fusion_case(fusion.MULTIPLICATIVE),
    "fusion/align": _align_case,
    "loss/kd": _kd_case,
    "loss/bce": _bce_case,
    "loss/cross_entropy": _ce_case,
    "loss/total": _total_case,
}


def run_all(instances: int = 20, seed: int = 31) -> list[CheckResult]:
    results = []
    for offset, (name, make) in enumerate(CASES.items()):
        rng = np.random.default_rng(seed + offset)
        worst = 0.0
        for _ in range(instances):
            store, build = make(rng)
            worst = max(worst, check_gradients(build, store))
        results.append(CheckResult(name, worst, DEFAULT_TOLERANCE, instances))
    return results
