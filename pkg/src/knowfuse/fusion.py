"""Multimodal fusion: the student representation and the four
mechanisms for combining it with the pooled graph vector.

The student representation comes from projecting image and text
embeddings to a shared dimension, taking their elementwise product,
and passing it through a small feed-forward mapping stack. Graph and
student vectors are always linearly projected to one common dimension
before fusing, since every mechanism below assumes equal dims.

Vector convention is row-times-matrix throughout: weights are stored
(in_dim, out_dim).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .errors import ConfigError, DimensionError

GATED = "gated"
BILINEAR = "bilinear"
HAN = "han"
MULTIPLICATIVE = "multiplicative"
FUSION_KINDS = (GATED, BILINEAR, HAN, MULTIPLICATIVE)


@dataclass(frozen=True)
class FusionConfig:
    kind: str = GATED
    dim: int = 64
    han_levels: int = 2
    bilinear_out_dim: int = 0  # 0 = same as dim

    def validate(self) -> None:
        if self.kind not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion kind {self.kind!r}")
        if self.dim < 1:
            raise ConfigError("fusion dim must be >= 1")
        if self.kind == HAN and self.han_levels < 1:
            raise ConfigError("han fusion needs at least one level")
        if self.bilinear_out_dim < 0:
            raise ConfigError("bilinear_out_dim must be >= 0")

    @property
    def out_dim(self) -> int:
        if self.kind == BILINEAR and self.bilinear_out_dim > 0:
            return self.bilinear_out_dim
        return self.dim


@dataclass(frozen=True)
class AlignConfig:
    fused_dim: int = 64
    mapping_layers: int = 1

    def validate(self) -> None:
        if self.fused_dim < 1:
            raise ConfigError("align fused_dim must be >= 1")
        if self.mapping_layers < 1:
            raise ConfigError("align mapping_layers must be >= 1")


def init_align_params(
    store: dm.ParameterStore,
    config: AlignConfig,
    img_dim: int,
    txt_dim: int,
    rng: np.random.Generator,
    prefix: str = "align",
) -> None:
    config.validate()
    d = config.fused_dim
    store.add(f"{prefix}.P_img", dm.glorot_uniform(rng, (img_dim, d)))
    store.add(f"{prefix}.P_txt", dm.glorot_uniform(rng, (txt_dim, d)))
    for i in range(config.mapping_layers):
        store.add(f"{prefix}.map{i}.W", dm.glorot_uniform(rng, (d, d)))
        store.add(f"{prefix}.map{i}.b", np.zeros(d))


def align_fuse(
    e_img: dm.Node,
    e_txt: dm.Node,
    store: dm.ParameterStore,
    config: AlignConfig,
    prefix: str = "align",
) -> dm.Node:
    """Student representation: FFN((P_img e_img) * (P_txt e_txt))."""
    p_img = store.get(f"{prefix}.P_img")
    p_txt = store.get(f"{prefix}.P_txt")
    if e_img.value.shape[0] != p_img.value.shape[0]:
        raise DimensionError(
            f"image embedding dim {e_img.value.shape[0]} != head dim {p_img.value.shape[0]}"
        )
    if e_txt.value.shape[0] != p_txt.value.shape[0]:
        raise DimensionError(
            f"text embedding dim {e_txt.value.shape[0]} != head dim {p_txt.value.shape[0]}"
        )
    s = dm.mul(dm.matmul(e_img, p_img), dm.matmul(e_txt, p_txt))
    for i in range(config.mapping_layers):
        s = dm.add(dm.matmul(s, store.get(f"{prefix}.map{i}.W")), store.get(f"{prefix}.map{i}.b"))
        if i < config.mapping_layers - 1:
            s = dm.relu(s)
    return s


def init_fusion_params(
    store: dm.ParameterStore,
    config: FusionConfig,
    graph_dim: int,
    student_dim: int,
    rng: np.random.Generator,
    prefix: str = "fusion",
) -> None:
    config.validate()
    d = config.dim
    store.add(f"{prefix}.proj_g", dm.glorot_uniform(rng, (graph_dim, d)))
    store.add(f"{prefix}.proj_m", dm.glorot_uniform(rng, (student_dim, d)))
    if config.kind == GATED:
        store.add(f"{prefix}.W_g", dm.glorot_uniform(rng, (2 * d, d)))
    elif config.kind == BILINEAR:
        store.add(f"{prefix}.U", dm.glorot_uniform(rng, (d, config.out_dim)))
        store.add(f"{prefix}.V", dm.glorot_uniform(rng, (d, config.out_dim)))
    elif config.kind == HAN:
        for level in range(config.han_levels):
            store.add(f"{prefix}.han{level}.W", dm.glorot_uniform(rng, (2 * d, d)))
        store.add(f"{prefix}.han.logits", np.zeros(config.han_levels))
    elif config.kind == MULTIPLICATIVE:
        store.add(f"{prefix}.W_m", dm.glorot_uniform(rng, (d, d)))


def _check_same_dim(e_g: dm.Node, e_m: dm.Node, d: int) -> None:
    if e_g.value.shape != (d,) or e_m.value.shape != (d,):
        raise DimensionError(
            f"fusion inputs must both have dim {d}, got {e_g.value.shape} and {e_m.value.shape}"
        )


def fuse_gated(
    e_g: dm.Node, e_m: dm.Node, store: dm.ParameterStore, config: FusionConfig,
    prefix: str = "fusion",
) -> dm.Node:
    """Convex, data-gated combination: G*e_g + (1-G)*e_m."""
    _check_same_dim(e_g, e_m, config.dim)
    gate = dm.sigmoid(dm.matmul(dm.concat(e_g, e_m), store.get(f"{prefix}.W_g")))
    ones = dm.constant(np.ones(config.dim))
    return dm.add(dm.mul(gate, e_g), dm.mul(dm.sub(ones, gate), e_m))


def fuse_bilinear(
    e_g: dm.Node, e_m: dm.Node, store: dm.ParameterStore, config: FusionConfig,
    prefix: str = "fusion",
) -> dm.Node:
    """Bank of bilinear forms with rank-1 factors: (U e_g) * (V e_m).

    Channel j equals e_g^T (u_j v_j^T) e_m, a rank-1 bilinear
    interaction; ``fuse_bilinear_dense`` evaluates the unfactorized
    single-form variant for oracle comparisons.
    """
    _check_same_dim(e_g, e_m, config.dim)
    return dm.mul(
        dm.matmul(e_g, store.get(f"{prefix}.U")), dm.matmul(e_m, store.get(f"{prefix}.V"))
    )


def fuse_bilinear_dense(e_g: dm.Node, e_m: dm.Node, W_b: dm.Node) -> dm.Node:
    """Literal single bilinear form e_g^T W_b e_m, as a scalar."""
    d_g = e_g.value.shape[0]
    d_m = e_m.value.shape[0]
    if W_b.value.shape != (d_g, d_m):
        raise DimensionError(f"bilinear matrix {W_b.value.shape} != ({d_g}, {d_m})")
    row = dm.matmul(dm.reshape(e_g, (1, d_g)), W_b)
    return dm.reshape(dm.matmul(row, dm.reshape(e_m, (d_m, 1))), ())


def fuse_han(
    e_g: dm.Node, e_m: dm.Node, store: dm.ParameterStore, config: FusionConfig,
    prefix: str = "fusion",
) -> dm.Node:
    """Attention-weighted sum of per-level projections of [e_g || e_m].

    Level weights are a softmax over learned scalar logits.
    """
    _check_same_dim(e_g, e_m, config.dim)
    cat = dm.concat(e_g, e_m)
    alpha = dm.softmax(store.get(f"{prefix}.han.logits"))
    fused = None
    for level in range(config.han_levels):
        term = dm.smul(dm.pick(alpha, level), dm.matmul(cat, store.get(f"{prefix}.han{level}.W")))
        fused = term if fused is None else dm.add(fused, term)
    return fused


def fuse_multiplicative(
    e_g: dm.Node, e_m: dm.Node, store: dm.ParameterStore, config: FusionConfig,
    prefix: str = "fusion",
) -> dm.Node:
    """tanh(W_m e_g) * tanh(W_m e_m) with one shared transform."""
    _check_same_dim(e_g, e_m, config.dim)
    w = store.get(f"{prefix}.W_m")
    return dm.mul(dm.tanh(dm.matmul(e_g, w)), dm.tanh(dm.matmul(e_m, w)))


_FUSERS = {
    GATED: fuse_gated,
    BILINEAR: fuse_bilinear,
    HAN: fuse_han,
    MULTIPLICATIVE: fuse_multiplicative,
}


def fuse(
    h_graph: dm.Node,
    h_distilled: dm.Node,
    store: dm.ParameterStore,
    config: FusionConfig,
    prefix: str = "fusion",
) -> dm.Node:
    """Project both representations to the shared dim and fuse."""
    e_g = dm.matmul(h_graph, store.get(f"{prefix}.proj_g"))
    e_m = dm.matmul(h_distilled, store.get(f"{prefix}.proj_m"))
    return _FUSERS[config.kind](e_g, e_m, store, config, prefix=prefix)
