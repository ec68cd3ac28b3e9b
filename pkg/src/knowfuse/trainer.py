"""Training loop: AdamW with warmup plus linear decay, mini-batches,
validation-AUC model selection, and binary checkpoints.

A batch is one computation graph: per-record losses are summed, one
backward pass accumulates gradients in record order, one optimizer
step applies them. Given identical data, configuration, and seed, two
runs produce identical logs and byte-identical checkpoints; the log
therefore carries no wall-clock fields.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .errors import ConfigError, DataError, NumericError
from .metrics import auc, multiclass_metrics
from .model import DataDims, Example, Model, ModelConfig
from .objective import LossConfig

CHECKPOINT_MAGIC = b"KFCKPT1\n"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    lr: float = 1e-3
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    seed: int = 0
    grad_clip: float = 0.0  # 0 disables clipping

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")  # 0 is a documented no-op sanity mode
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.grad_clip < 0:
            raise ConfigError("grad_clip must be >= 0")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    store: dm.ParameterStore,
    state: OptimizerState,
    lr: float,
    weight_decay: float,
) -> None:
    """One decoupled-weight-decay update with bias-corrected moments."""
    state.step += 1
    t = state.step
    for p in store:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}")
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros(p.value.shape)
            v = np.zeros(p.value.shape)
        else:
            v = state.v[p.name]
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        update = p.value - lr * weight_decay * p.value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        p.assign(update)


def lr_schedule(step: int, total_steps: int, warmup_fraction: float, base_lr: float) -> float:
    """Linear 0 -> base over the warmup span, then linear base -> 0."""
    if total_steps <= 0:
        raise ConfigError("lr schedule needs total_steps > 0")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(total_steps * warmup_fraction))
    if warmup > 0 and step < warmup:
        return base_lr * step / warmup
    span = max(total_steps - warmup, 1)
    return base_lr * (total_steps - step) / span


def clip_gradients(store: dm.ParameterStore, max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for p in store:
        total += float((p.grad * p.grad).sum())
    norm = total**0.5
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in store:
            p.grad = p.grad * factor
    return norm


@dataclass
class Checkpoint:
    format_version: int
    config: dict
    dims: dict
    best_val_auc: float
    epoch: int
    params: dict[str, np.ndarray]

    def save(self, path: str | Path) -> None:
        index = {}
        payload = io.BytesIO()
        # sorted layout keeps save(load(x)) byte-identical to x
        for name in sorted(self.params):
            arr = self.params[name]
            index[name] = {"offset": payload.tell(), "shape": list(arr.shape)}
            payload.write(np.asarray(arr, dtype="<f4").tobytes())
        header = json.dumps(
            {
                "format_version": self.format_version,
                "config": self.config,
                "dims": self.dims,
                "metric": {"val_auc": self.best_val_auc, "epoch": self.epoch},
                "params": index,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(payload.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        data = Path(path).read_bytes()
        if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack_from("<Q", data, len(CHECKPOINT_MAGIC))
        start = len(CHECKPOINT_MAGIC) + 8
        header = json.loads(data[start : start + header_len].decode("utf-8"))
        payload = data[start + header_len :]
        params = {}
        for name, entry in header["params"].items():
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            offset = entry["offset"]
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            params[name] = arr.astype(np.float64).reshape(shape)
        return cls(
            format_version=header["format_version"],
            config=header["config"],
            dims=header["dims"],
            best_val_auc=header["metric"]["val_auc"],
            epoch=header["metric"]["epoch"],
            params=params,
        )


@dataclass
class TrainResult:
    model: Model
    checkpoint: Checkpoint
    log: list[dict]


def _canonicalize_float32(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    # Checkpoints store 32-bit floats; rounding the selected parameters
    # through float32 up front makes the in-memory model and any future
    # reload evaluate bit-identically.
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


def _val_scores(model: Model, examples: list[Example]) -> np.ndarray:
    return np.array([model.predict_score(ex) for ex in examples])


def _val_metric(model: Model, examples: list[Example]) -> tuple[float, str]:
    """Selection metric: validation AUC, with two degenerate fallbacks.

    Single-class validation sets have no AUC and fall back to accuracy;
    multi-class runs select on weighted F1 since AUC is omitted there.
    """
    labels = np.array([ex.label for ex in examples])
    scores = _val_scores(model, examples)
    if model.loss.num_classes == 2:
        try:
            return auc(scores, labels), "auc"
        except DataError:
            return float(np.mean((scores >= 0.5).astype(int) == labels)), "accuracy"
    report = multiclass_metrics(scores, labels)
    return report.f1, "weighted_f1"


def fit(
    train_examples: list[Example],
    val_examples: list[Example],
    model_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
    dims: DataDims,
) -> TrainResult:
    """Train and return the epoch with the best validation AUC.

    Ties keep the earliest epoch. The returned model already carries
    the float32-canonicalized best parameters, so its outputs match a
    checkpoint reloaded from disk exactly.
    """
    train_config.validate()
    if not train_examples:
        raise DataError("empty training split")
    if not val_examples:
        raise DataError("empty validation split")

    rng = np.random.default_rng(train_config.seed)
    model = Model(model_config, loss_config, dims, rng)

    n = len(train_examples)
    batches_per_epoch = (n + train_config.batch_size - 1) // train_config.batch_size
    total_steps = batches_per_epoch * train_config.epochs
    state = OptimizerState()

    best_auc = float("-inf")
    best_epoch = -1
    best_params: dict[str, np.ndarray] | None = None
    log: list[dict] = []

    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        sums = {"cls": 0.0, "kd": 0.0, "total": 0.0}
        last_lr = 0.0
        for b in range(batches_per_epoch):
            batch = order[b * train_config.batch_size : (b + 1) * train_config.batch_size]
            model.store.zero_grads()
            batch_loss = None
            for idx in batch:
                loss, components = model.loss_node(train_examples[idx])
                for key in sums:
                    sums[key] += components[key]
                batch_loss = loss if batch_loss is None else dm.add(batch_loss, loss)
            if not np.isfinite(batch_loss.value):
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {b}")
            dm.backward(batch_loss)
            if train_config.grad_clip > 0:
                clip_gradients(model.store, train_config.grad_clip)
            last_lr = lr_schedule(
                state.step, total_steps, train_config.warmup_fraction, train_config.lr
            )
            adamw_step(model.store, state, last_lr, train_config.weight_decay)

        val_auc, metric_name = _val_metric(model, val_examples)
        row = {
            "epoch": epoch,
            "train_total": sums["total"] / n,
            "train_cls": sums["cls"] / n,
            "train_kd": sums["kd"] / n,
            "val_auc": val_auc,
            "val_metric": metric_name,
            "lr_last": last_lr,
        }
        log.append(row)
        if val_auc > best_auc:
            best_auc = val_auc
            best_epoch = epoch
            best_params = model.param_arrays()

    canonical = _canonicalize_float32(best_params)
    model.load_param_arrays(canonical)
    checkpoint = Checkpoint(
        format_version=1,
        config=_config_snapshot(model_config, loss_config, train_config),
        dims=dims.to_dict(),
        best_val_auc=best_auc,
        epoch=best_epoch,
        params=canonical,
    )
    return TrainResult(model=model, checkpoint=checkpoint, log=log)


def _config_snapshot(
    model_config: ModelConfig, loss_config: LossConfig, train_config: TrainConfig
) -> dict:
    return {
        "model": asdict(model_config),
        "loss": asdict(loss_config),
        "train": asdict(train_config),
    }


def model_from_checkpoint(checkpoint: Checkpoint) -> Model:
    """Rebuild the model described by a checkpoint and load its weights."""
    cfg = checkpoint.config["model"]
    from .fusion import AlignConfig, FusionConfig
    from .gnn import GnnConfig
    from .model import ClassifierConfig

    model_config = ModelConfig(
        knowledge=cfg["knowledge"],
        gnn=GnnConfig(**cfg["gnn"]),
        align=AlignConfig(**cfg["align"]),
        fusion=FusionConfig(**cfg["fusion"]),
        classifier=ClassifierConfig(**cfg["classifier"]),
    )
    loss_config = LossConfig(**checkpoint.config["loss"])
    dims = DataDims.from_dict(checkpoint.dims)
    model = Model(model_config, loss_config, dims, np.random.default_rng(0))
    model.load_param_arrays(checkpoint.params)
    return model
