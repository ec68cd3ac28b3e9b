"""Full classifier assembly.

Two representation paths meet here: the student path (projected image
and text embeddings, elementwise-aligned and mapped) and, when
knowledge is enabled, the graph path (working-graph encoder plus mean
pooling). A fusion mechanism combines them and a small feed-forward
head produces the classification logits. The distillation projection
is only instantiated when the distillation weight is positive, so
checkpoints carry exactly the parameters the configuration implies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from . import fusion as fusion_mod
from . import gnn as gnn_mod
from . import objective
from .errors import ConfigError, DataError
from .gnn import GnnConfig, GraphStructure
from .fusion import AlignConfig, FusionConfig
from .graphbuild import WorkingGraph
from .objective import LossConfig


@dataclass(frozen=True)
class ClassifierConfig:
    pre_output_layers: int = 1
    hidden_dim: int = 32

    def validate(self) -> None:
        if self.pre_output_layers < 0:
            raise ConfigError("pre_output_layers must be >= 0")
        if self.hidden_dim < 1:
            raise ConfigError("classifier hidden_dim must be >= 1")


@dataclass(frozen=True)
class ModelConfig:
    knowledge: bool = True
    gnn: GnnConfig = field(default_factory=GnnConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def validate(self) -> None:
        self.gnn.validate()
        self.align.validate()
        self.fusion.validate()
        self.classifier.validate()


@dataclass(frozen=True)
class DataDims:
    img: int
    txt: int
    caption: int | None = None
    node_feature: int | None = None
    num_relations: int | None = None

    def to_dict(self) -> dict:
        return {
            "img": self.img,
            "txt": self.txt,
            "caption": self.caption,
            "node_feature": self.node_feature,
            "num_relations": self.num_relations,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DataDims":
        return cls(
            img=obj["img"],
            txt=obj["txt"],
            caption=obj.get("caption"),
            node_feature=obj.get("node_feature"),
            num_relations=obj.get("num_relations"),
        )


@dataclass
class Example:
    """One resolved data point ready for the forward pass."""

    record_id: str
    label: int
    e_img: np.ndarray
    e_txt: np.ndarray
    w_caption: np.ndarray | None = None
    graph: WorkingGraph | None = None


@dataclass
class ForwardOut:
    student: dm.Node
    fused: dm.Node
    logits: dm.Node


class Model:
    """Parameter container plus the forward/loss graph builders."""

    def __init__(
        self,
        config: ModelConfig,
        loss: LossConfig,
        dims: DataDims,
        rng: np.random.Generator,
    ):
        config.validate()
        loss.validate()
        self.config = config
        self.loss = loss
        self.dims = dims
        self.store = dm.ParameterStore()
        # keyed by graph object identity; the stored reference keeps the
        # id stable for the cache's lifetime
        self._structures: dict[int, tuple[WorkingGraph, GraphStructure]] = {}

        fusion_mod.init_align_params(self.store, config.align, dims.img, dims.txt, rng)
        if config.knowledge:
            if dims.node_feature is None or dims.num_relations is None:
                raise ConfigError("knowledge path enabled but graph dims are unknown")
            gnn_mod.init_params(
                self.store, config.gnn, dims.node_feature, dims.num_relations, rng
            )
            fusion_mod.init_fusion_params(
                self.store, config.fusion, config.gnn.out_dim, config.align.fused_dim, rng
            )
            head_in = config.fusion.out_dim
        else:
            head_in = config.align.fused_dim

        clf = config.classifier
        out_dim = 1 if loss.num_classes == 2 else loss.num_classes
        d = head_in
        for i in range(clf.pre_output_layers):
            self.store.add(f"clf.pre{i}.W", dm.glorot_uniform(rng, (d, clf.hidden_dim)))
            self.store.add(f"clf.pre{i}.b", np.zeros(clf.hidden_dim))
            d = clf.hidden_dim
        self.store.add("clf.out.W", dm.glorot_uniform(rng, (d, out_dim)))
        self.store.add("clf.out.b", np.zeros(out_dim))

        if loss.kd_enabled:
            if dims.caption is None:
                raise ConfigError("distillation enabled but caption dim is unknown")
            objective.init_kd_projection(self.store, dims.caption, config.align.fused_dim, rng)

    # -- structure cache ------------------------------------------------

    def structure_for(self, graph: WorkingGraph) -> GraphStructure:
        cached = self._structures.get(id(graph))
        if cached is None:
            structure = GraphStructure(graph, relation_norm=self.config.gnn.relation_norm)
            self._structures[id(graph)] = (graph, structure)
            return structure
        return cached[1]

    # -- graph builders ---------------------------------------------------

    def forward(self, example: Example) -> ForwardOut:
        student = fusion_mod.align_fuse(
            dm.constant(example.e_img), dm.constant(example.e_txt), self.store, self.config.align
        )
        if self.config.knowledge:
            if example.graph is None:
                raise DataError(f"record {example.record_id!r}: knowledge on but no graph")
            structure = self.structure_for(example.graph)
            h_graph = gnn_mod.encode(
                dm.constant(example.graph.features), structure, self.store, self.config.gnn
            )
            fused = fusion_mod.fuse(h_graph, student, self.store, self.config.fusion)
        else:
            fused = student
        h = fused
        for i in range(self.config.classifier.pre_output_layers):
            h = dm.relu(
                dm.add(
                    dm.matmul(h, self.store.get(f"clf.pre{i}.W")),
                    self.store.get(f"clf.pre{i}.b"),
                )
            )
        logits = dm.add(dm.matmul(h, self.store.get("clf.out.W")), self.store.get("clf.out.b"))
        return ForwardOut(student=student, fused=fused, logits=logits)

    def loss_node(self, example: Example) -> tuple[dm.Node, dict[str, float]]:
        """Weighted per-record loss plus unweighted component values."""
        out = self.forward(example)
        if self.loss.num_classes == 2:
            cls = objective.bce_loss(dm.pick(out.logits, 0), example.label)
        else:
            cls = objective.cross_entropy_loss(out.logits, example.label)
        kd = None
        if self.loss.kd_enabled:
            if example.w_caption is None:
                raise DataError(
                    f"record {example.record_id!r}: distillation enabled but no caption embedding"
                )
            kd = objective.kd_loss(out.student, dm.constant(example.w_caption), self.store)
        total = objective.total_loss(cls, kd, self.loss)
        components = {
            "cls": float(cls.value),
            "kd": float(kd.value) if kd is not None else 0.0,
            "total": float(total.value),
        }
        return total, components

    def predict_score(self, example: Example) -> np.ndarray:
        """Sigmoid score (binary) or softmax vector (multi-class).

        Never touches caption embeddings; prediction is distillation-free.
        """
        out = self.forward(example)
        if self.loss.num_classes == 2:
            return np.asarray(dm.sigmoid(dm.pick(out.logits, 0)).value)
        return np.asarray(dm.softmax(out.logits).value)

    # -- parameter access ---------------------------------------------

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: np.array(p.value) for p in self.store}

    def load_param_arrays(self, params: dict[str, np.ndarray]) -> None:
        mine = set(self.store.names())
        theirs = set(params)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ConfigError(
                "checkpoint/config parameter mismatch: "
                f"missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        for name in self.store.names():
            self.store.get(name).assign(params[name])
