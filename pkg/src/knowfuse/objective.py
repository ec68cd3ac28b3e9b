"""Training objectives: consistency distillation, classification, and
their weighted combination.

The distillation term is the squared Euclidean distance between the
student representation and a linearly projected teacher caption
embedding; the projection bridges mismatched dimensions and trains
jointly. Classification is binary cross-entropy on a single logit
(evaluated in log-space, never through an explicit probability), with
a softmax cross-entropy variant for multi-class label sets. The
distillation term exists only in the training path; prediction never
touches caption embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .errors import ConfigError, DimensionError

KD_PROJECTION_NAME = "kd.P"


@dataclass(frozen=True)
class LossConfig:
    lambda_bce: float = 0.5
    lambda_kd: float = 0.5
    num_classes: int = 2

    def validate(self) -> None:
        if self.lambda_bce < 0 or self.lambda_kd < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lambda_bce + self.lambda_kd <= 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")

    @property
    def kd_enabled(self) -> bool:
        return self.lambda_kd > 0


def init_kd_projection(
    store: dm.ParameterStore,
    caption_dim: int,
    student_dim: int,
    rng: np.random.Generator,
) -> None:
    store.add(KD_PROJECTION_NAME, dm.glorot_uniform(rng, (caption_dim, student_dim)))


def kd_loss(s: dm.Node, w_caption: dm.Node, store: dm.ParameterStore) -> dm.Node:
    """Squared distance between the student vector and the projected
    teacher caption embedding."""
    proj = store.get(KD_PROJECTION_NAME)
    if w_caption.value.shape[0] != proj.value.shape[0]:
        raise DimensionError(
            f"caption dim {w_caption.value.shape[0]} != projection input {proj.value.shape[0]}"
        )
    target = dm.matmul(w_caption, proj)
    if target.value.shape != s.value.shape:
        raise DimensionError(
            f"projected caption dim {target.value.shape} != student dim {s.value.shape}"
        )
    return dm.sq_l2_norm(dm.sub(s, target))


def bce_loss(logit: dm.Node, y: int) -> dm.Node:
    """-[y log p + (1-y) log(1-p)] for p = sigmoid(logit).

    Uses the identity softplus(logit) - y * logit, which stays finite
    for any representable logit.
    """
    if logit.value.shape != ():
        raise DimensionError(f"bce expects a scalar logit, got shape {logit.value.shape}")
    if y not in (0, 1):
        raise ConfigError(f"binary label must be 0 or 1, got {y!r}")
    loss = dm.softplus(logit)
    if y == 1:
        loss = dm.add(loss, dm.scale(logit, -1.0))
    return loss


def cross_entropy_loss(logits: dm.Node, y: int) -> dm.Node:
    """Softmax cross-entropy for multi-class labels: lse(z) - z_y."""
    if logits.value.ndim != 1:
        raise DimensionError(f"cross entropy expects a logit vector, got {logits.value.shape}")
    k = logits.value.shape[0]
    if not 0 <= y < k:
        raise ConfigError(f"class label {y} outside [0, {k})")
    return dm.sub(dm.logsumexp(logits), dm.pick(logits, y))


def total_loss(
    classification: dm.Node,
    distillation: dm.Node | None,
    config: LossConfig,
) -> dm.Node:
    """lambda_bce * L_cls + lambda_kd * L_kd.

    When distillation is disabled the term is skipped entirely, so no
    gradient ever reaches the projection.
    """
    total = dm.scale(classification, config.lambda_bce)
    if config.kd_enabled:
        if distillation is None:
            raise ConfigError("lambda_kd > 0 but no distillation loss was provided")
        total = dm.add(total, dm.scale(distillation, config.lambda_kd))
    return total
