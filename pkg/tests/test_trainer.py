import json

import numpy as np
import pytest

from knowfuse import diffmath as dm
from knowfuse import objective, trainer
from knowfuse.errors import ConfigError, DataError, NumericError
from knowfuse.fusion import AlignConfig, FusionConfig
from knowfuse.gnn import GnnConfig
from knowfuse.model import ClassifierConfig, DataDims, Example, Model, ModelConfig
from knowfuse.model_checks import toy_graph
from knowfuse.objective import LossConfig
from knowfuse.trainer import (
    Checkpoint,
    OptimizerState,
    TrainConfig,
    adamw_step,
    clip_gradients,
    fit,
    lr_schedule,
    model_from_checkpoint,
)


def small_model_config(knowledge=True):
    return ModelConfig(
        knowledge=knowledge,
        gnn=GnnConfig(arch="rgcn", layers=1, hidden_dim=4, out_dim=4, activation="tanh"),
        align=AlignConfig(fused_dim=4, mapping_layers=1),
        fusion=FusionConfig(kind="gated", dim=4),
        classifier=ClassifierConfig(pre_output_layers=1, hidden_dim=6),
    )


def small_dims(knowledge=True, caption=True):
    return DataDims(
        img=3,
        txt=3,
        caption=4 if caption else None,
        node_feature=3 if knowledge else None,
        num_relations=4 if knowledge else None,
    )


def make_examples(n, rng, knowledge=True, caption=True, separable=True):
    examples = []
    for i in range(n):
        label = i % 2
        shift = (2 * label - 1) * (1.0 if separable else 0.0)
        graph = None
        if knowledge:
            graph = toy_graph(rng, record_id=f"r{i}")
        examples.append(
            Example(
                record_id=f"r{i}",
                label=label,
                e_img=rng.normal(size=3) + shift,
                e_txt=rng.normal(size=3) + shift,
                w_caption=(rng.normal(size=4) + shift) if caption else None,
                graph=graph,
            )
        )
    return examples


def test_adamw_first_step_matches_hand_value():
    store = dm.ParameterStore()
    w = store.add("w", 1.0)
    w.grad = np.asarray(1.0)
    state = OptimizerState()
    adamw_step(store, state, lr=0.1, weight_decay=0.0)
    expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    assert abs(float(w.value) - expected) <= 1e-12


def test_adamw_zero_gradient_no_motion():
    store = dm.ParameterStore()
    w = store.add("w", [2.0, -3.0])
    state = OptimizerState()
    adamw_step(store, state, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(w.value, [2.0, -3.0])


def test_adamw_decoupled_decay_only():
    store = dm.ParameterStore()
    w = store.add("w", [2.0, -3.0])
    state = OptimizerState()
    adamw_step(store, state, lr=0.1, weight_decay=0.1)
    np.testing.assert_allclose(w.value, [2.0 * 0.99, -3.0 * 0.99], rtol=1e-15)


def test_adamw_rejects_nonfinite_grad():
    store = dm.ParameterStore()
    w = store.add("w", 1.0)
    w.grad = np.asarray(np.nan)
    with pytest.raises(NumericError):
        adamw_step(store, OptimizerState(), lr=0.1, weight_decay=0.0)


def test_lr_schedule_shape():
    total, frac, base = 100, 0.1, 0.5
    assert lr_schedule(0, total, frac, base) == 0.0
    assert lr_schedule(10, total, frac, base) == pytest.approx(base)
    assert lr_schedule(55, total, frac, base) == pytest.approx(base * 45 / 90)
    assert lr_schedule(100, total, frac, base) == 0.0


def test_lr_schedule_no_warmup_starts_at_base():
    assert lr_schedule(0, 50, 0.0, 0.3) == pytest.approx(0.3)


def test_lr_schedule_zero_total_steps():
    with pytest.raises(ConfigError):
        lr_schedule(0, 0, 0.1, 0.1)


def test_clip_gradients_scales_to_max_norm():
    store = dm.ParameterStore()
    a = store.add("a", [3.0, 0.0])
    b = store.add("b", [0.0, 4.0])
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([0.0, 4.0])
    pre = clip_gradients(store, max_norm=1.0)
    assert pre == pytest.approx(5.0)
    total = np.sqrt(sum(float((p.grad**2).sum()) for p in store))
    assert total == pytest.approx(1.0)


def run_fit(seed=3, knowledge=True, caption=True, lr=0.05, epochs=3, n=8, **kw):
    rng = np.random.default_rng(seed)
    examples = make_examples(n, rng, knowledge=knowledge, caption=caption)
    loss = LossConfig(lambda_bce=0.5, lambda_kd=0.5 if caption else 0.0)
    cfg = TrainConfig(
        epochs=epochs, batch_size=4, lr=lr, warmup_fraction=0.1,
        weight_decay=0.0, seed=seed, **kw,
    )
    return fit(
        examples[: n // 2 + 2],
        examples[n // 2 + 2 :],
        small_model_config(knowledge),
        loss,
        cfg,
        small_dims(knowledge, caption),
    )


def test_fit_zero_lr_is_noop():
    rng = np.random.default_rng(0)
    examples = make_examples(6, rng, knowledge=False, caption=False)
    loss = LossConfig(lambda_bce=1.0, lambda_kd=0.0)
    cfg = TrainConfig(epochs=2, batch_size=2, lr=0.0, weight_decay=0.0, seed=7)
    dims = small_dims(knowledge=False, caption=False)
    init_model = Model(
        small_model_config(False), loss, dims, np.random.default_rng(7)
    )
    initial = init_model.param_arrays()
    result = fit(examples[:4], examples[4:], small_model_config(False), loss, cfg, dims)
    final = result.model.param_arrays()
    for name, arr in initial.items():
        np.testing.assert_array_equal(
            final[name], arr.astype(np.float32).astype(np.float64)
        )


def test_fit_single_record_overfits():
    rng = np.random.default_rng(1)
    examples = make_examples(1, rng, knowledge=True, caption=False)
    loss = LossConfig(lambda_bce=1.0, lambda_kd=0.0)
    # 200 steps: 200 epochs x 1 batch
    cfg = TrainConfig(epochs=200, batch_size=1, lr=0.05, warmup_fraction=0.1,
                      weight_decay=0.0, seed=1)
    result = fit(examples, examples, small_model_config(True), loss, cfg,
                 small_dims(caption=False))
    assert result.log[-1]["train_total"] < 1e-3


def test_fit_determinism_checkpoints_and_logs():
    a = run_fit(seed=11)
    b = run_fit(seed=11)
    assert json.dumps(a.log, sort_keys=True) == json.dumps(b.log, sort_keys=True)
    assert set(a.checkpoint.params) == set(b.checkpoint.params)
    for name in a.checkpoint.params:
        np.testing.assert_array_equal(a.checkpoint.params[name], b.checkpoint.params[name])


def test_checkpoint_file_round_trip_bytes(tmp_path):
    result = run_fit(seed=5)
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    result.checkpoint.save(p1)
    Checkpoint.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_reload_reproduces_outputs(tmp_path):
    result = run_fit(seed=9)
    path = tmp_path / "model.ckpt"
    result.checkpoint.save(path)
    reloaded = model_from_checkpoint(Checkpoint.load(path))
    rng = np.random.default_rng(2)
    example = make_examples(1, rng)[0]
    before = result.model.predict_score(example)
    after = reloaded.predict_score(example)
    np.testing.assert_array_equal(before, after)


def test_best_epoch_is_max_val_auc():
    result = run_fit(seed=13, epochs=5)
    aucs = [row["val_auc"] for row in result.log]
    assert result.checkpoint.best_val_auc == max(aucs)
    assert result.checkpoint.epoch == int(np.argmax(aucs))  # earliest on ties


def test_kd_projection_gets_zero_gradient_when_weight_zero():
    rng = np.random.default_rng(4)
    dims = small_dims()
    model = Model(small_model_config(), LossConfig(0.5, 0.5), dims, rng)
    example = make_examples(1, rng)[0]
    out = model.forward(example)
    cls = objective.bce_loss(dm.pick(out.logits, 0), example.label)
    total = objective.total_loss(cls, None, LossConfig(lambda_bce=1.0, lambda_kd=0.0))
    model.store.zero_grads()
    dm.backward(total)
    np.testing.assert_array_equal(
        model.store.get(objective.KD_PROJECTION_NAME).grad, 0.0
    )


def test_kd_disabled_model_has_no_projection():
    rng = np.random.default_rng(4)
    model = Model(
        small_model_config(), LossConfig(lambda_bce=1.0, lambda_kd=0.0),
        small_dims(caption=False), rng,
    )
    assert objective.KD_PROJECTION_NAME not in model.store


def test_checkpoint_config_mismatch_is_config_error(tmp_path):
    result = run_fit(seed=3, caption=False)  # trained without distillation
    path = tmp_path / "model.ckpt"
    result.checkpoint.save(path)
    ckpt = Checkpoint.load(path)
    ckpt.config["loss"]["lambda_kd"] = 0.5  # predict-time config wants a projection
    ckpt.dims["caption"] = 4
    with pytest.raises(ConfigError, match="mismatch"):
        model_from_checkpoint(ckpt)


def test_fit_rejects_empty_splits():
    rng = np.random.default_rng(0)
    examples = make_examples(4, rng)
    loss = LossConfig(0.5, 0.5)
    cfg = TrainConfig(epochs=1, seed=0)
    with pytest.raises(DataError):
        fit([], examples, small_model_config(), loss, cfg, small_dims())
    with pytest.raises(DataError):
        fit(examples, [], small_model_config(), loss, cfg, small_dims())


def test_prediction_path_never_reads_captions():
    rng = np.random.default_rng(8)
    model = Model(
        small_model_config(), LossConfig(0.5, 0.5), small_dims(), rng
    )
    example = make_examples(1, rng, caption=False)[0]
    assert example.w_caption is None
    score = model.predict_score(example)  # must not raise
    assert 0.0 <= float(score) <= 1.0


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(warmup_fraction=1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=-0.1).validate()
