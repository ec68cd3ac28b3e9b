"""Run configuration: one YAML tree governs a whole pipeline run.

Parsing is strict: unknown keys are rejected at every level so typos
fail loudly instead of silently falling back to defaults. Command-line
overrides use dot paths (``--override train.lr=0.01``) applied to the
raw tree before validation.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .fusion import AlignConfig, FusionConfig
from .gnn import GnnConfig
from .model import ClassifierConfig, ModelConfig
from .objective import LossConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class PathsConfig:
    manifest: str | None = None
    kg_edges: str | None = None
    kg_store: str | None = None
    node_embeddings: str | None = None
    external_scores: str | None = None
    workdir: str = "runs/default"


@dataclass(frozen=True)
class KnowledgeConfig:
    enabled: bool = True
    hops: int = 1
    top_k: int = 750
    scorer: str = "cosine"
    max_nodes_per_hop: int = 2000
    allow_empty_graphs: bool = True

    def validate(self) -> None:
        if self.hops not in (1, 2):
            raise ConfigError("knowledge.hops must be 1 or 2")
        if not 1 <= self.top_k <= 5000:
            raise ConfigError("knowledge.top_k must be within [1, 5000]")
        if self.scorer not in ("cosine", "external"):
            raise ConfigError(f"unknown relevance scorer {self.scorer!r}")
        if self.max_nodes_per_hop < 1:
            raise ConfigError("knowledge.max_nodes_per_hop must be >= 1")


@dataclass(frozen=True)
class ModelSection:
    gnn: GnnConfig = field(default_factory=GnnConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    split: str = "test"

    def validate(self) -> None:
        if not 0 <= self.threshold <= 1:
            raise ConfigError("eval.threshold must be within [0, 1]")


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    paths: PathsConfig = field(default_factory=PathsConfig)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.knowledge.validate()
        self.model.gnn.validate()
        self.model.align.validate()
        self.model.fusion.validate()
        self.model.classifier.validate()
        self.loss.validate()
        self.train.validate()
        self.eval.validate()

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("config must set an explicit seed for training runs")
        return self.seed

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            knowledge=self.knowledge.enabled,
            gnn=self.model.gnn,
            align=self.model.align,
            fusion=self.model.fusion,
            classifier=self.model.classifier,
        )

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.require_seed())

    def workdir(self) -> Path:
        return Path(self.paths.workdir)


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(args[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _from_tree(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported config field type {tp!r}")


def _from_tree(cls, data, where: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {
        name: _coerce(hints[name], data[name], f"{where}.{name}")
        for name in names
        if name in data
    }
    return cls(**kwargs)


def parse_override(raw: str) -> tuple[list[str], object]:
    """``a.b.c=value`` with the value parsed as JSON when possible."""
    if "=" not in raw:
        raise ConfigError(f"override {raw!r} must look like key.path=value")
    key, _, rendered = raw.partition("=")
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError(f"override {raw!r} has an empty key path")
    try:
        value = json.loads(rendered)
    except json.JSONDecodeError:
        value = rendered
    return path, value


def apply_override(tree: dict, path: list[str], value) -> None:
    node = tree
    for part in path[:-1]:
        child = node.get(part)
        if child is None:
            child = {}
            node[part] = child
        if not isinstance(child, dict):
            raise ConfigError(f"override path {'.'.join(path)!r} crosses a non-mapping node")
        node = child
    node[path[-1]] = value


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        tree = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    for raw_override in overrides or []:
        key_path, value = parse_override(raw_override)
        apply_override(tree, key_path, value)
    config = _from_tree(RunConfig, tree, "config")
    config.validate()
    return config
