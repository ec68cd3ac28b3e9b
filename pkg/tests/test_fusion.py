import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from knowfuse import diffmath as dm
from knowfuse import fusion
from knowfuse.errors import ConfigError, DimensionError
from knowfuse.gradcheck import check_gradients


def align_store(config, img_dim, txt_dim, seed=0):
    store = dm.ParameterStore()
    fusion.init_align_params(store, config, img_dim, txt_dim, np.random.default_rng(seed))
    return store


def fusion_store(config, graph_dim=None, student_dim=None, seed=0):
    store = dm.ParameterStore()
    fusion.init_fusion_params(
        store, config, graph_dim or config.dim, student_dim or config.dim,
        np.random.default_rng(seed),
    )
    return store


def test_align_identity_head_is_elementwise_product():
    config = fusion.AlignConfig(fused_dim=2, mapping_layers=1)
    store = align_store(config, 2, 2)
    store.get("align.P_img").assign(np.eye(2))
    store.get("align.P_txt").assign(np.eye(2))
    store.get("align.map0.W").assign(np.eye(2))
    out = fusion.align_fuse(dm.constant([1.0, 2.0]), dm.constant([3.0, 0.0]), store, config)
    np.testing.assert_allclose(out.value, [3.0, 0.0])


def test_align_zero_text_annihilates():
    config = fusion.AlignConfig(fused_dim=2, mapping_layers=1)
    store = align_store(config, 2, 2)
    store.get("align.P_img").assign(np.eye(2))
    store.get("align.P_txt").assign(np.eye(2))
    store.get("align.map0.W").assign(np.eye(2))
    out = fusion.align_fuse(dm.constant([1.0, 2.0]), dm.constant([0.0, 0.0]), store, config)
    np.testing.assert_allclose(out.value, [0.0, 0.0])


def test_align_random_case_matches_hand_computation():
    config = fusion.AlignConfig(fused_dim=4, mapping_layers=1)
    rng = np.random.default_rng(8)
    store = align_store(config, 4, 4, seed=8)
    e_img = rng.normal(size=4)
    e_txt = rng.normal(size=4)
    out = fusion.align_fuse(dm.constant(e_img), dm.constant(e_txt), store, config)
    p_i = store.get("align.P_img").value
    p_t = store.get("align.P_txt").value
    w = store.get("align.map0.W").value
    b = store.get("align.map0.b").value
    expected = ((e_img @ p_i) * (e_txt @ p_t)) @ w + b
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_align_dim_mismatch():
    config = fusion.AlignConfig(fused_dim=2, mapping_layers=1)
    store = align_store(config, 3, 2)
    with pytest.raises(DimensionError):
        fusion.align_fuse(dm.constant([1.0, 2.0]), dm.constant([1.0, 0.0]), store, config)


def test_gated_zero_logits_average():
    config = fusion.FusionConfig(kind="gated", dim=2)
    store = fusion_store(config)
    store.get("fusion.W_g").assign(np.zeros((4, 2)))
    e_g = dm.constant([1.0, 3.0])
    e_m = dm.constant([3.0, 1.0])
    out = fusion.fuse_gated(e_g, e_m, store, config)
    np.testing.assert_allclose(out.value, [2.0, 2.0])


def test_gated_fixed_point_when_inputs_equal():
    config = fusion.FusionConfig(kind="gated", dim=3)
    store = fusion_store(config, seed=4)
    x = dm.constant([0.4, -1.2, 2.0])
    out = fusion.fuse_gated(x, x, store, config)
    np.testing.assert_allclose(out.value, x.value, atol=1e-12)


def test_gated_hand_computation():
    config = fusion.FusionConfig(kind="gated", dim=2)
    store = fusion_store(config, seed=2)
    w = np.array([[0.2, -0.3], [0.5, 0.1], [-0.4, 0.6], [0.3, 0.2]])
    store.get("fusion.W_g").assign(w)
    e_g = np.array([1.0, -0.5])
    e_m = np.array([0.3, 0.8])
    gate = 1.0 / (1.0 + np.exp(-(np.concatenate([e_g, e_m]) @ w)))
    expected = gate * e_g + (1.0 - gate) * e_m
    out = fusion.fuse_gated(dm.constant(e_g), dm.constant(e_m), store, config)
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gated_output_within_elementwise_bounds(seed):
    rng = np.random.default_rng(seed)
    config = fusion.FusionConfig(kind="gated", dim=3)
    store = fusion_store(config, seed=seed % 1000)
    e_g = rng.normal(size=3)
    e_m = rng.normal(size=3)
    out = fusion.fuse_gated(dm.constant(e_g), dm.constant(e_m), store, config).value
    lo = np.minimum(e_g, e_m)
    hi = np.maximum(e_g, e_m)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_gated_swap_with_negated_swapped_gate_matrix():
    # Swapping inputs while negating W_g and exchanging its row blocks
    # must reproduce the original output exactly.
    config = fusion.FusionConfig(kind="gated", dim=3)
    store = fusion_store(config, seed=11)
    rng = np.random.default_rng(11)
    e_g = rng.normal(size=3)
    e_m = rng.normal(size=3)
    base = fusion.fuse_gated(dm.constant(e_g), dm.constant(e_m), store, config).value

    w = store.get("fusion.W_g").value
    swapped = -np.vstack([w[3:], w[:3]])
    store.get("fusion.W_g").assign(swapped)
    flipped = fusion.fuse_gated(dm.constant(e_m), dm.constant(e_g), store, config).value
    np.testing.assert_allclose(flipped, base, atol=1e-12)


def test_bilinear_dense_orthogonal_and_parallel():
    W = dm.constant(np.eye(2))
    zero = fusion.fuse_bilinear_dense(dm.constant([1.0, 0.0]), dm.constant([0.0, 1.0]), W)
    assert float(zero.value) == pytest.approx(0.0)
    two = fusion.fuse_bilinear_dense(dm.constant([1.0, 1.0]), dm.constant([1.0, 1.0]), W)
    assert float(two.value) == pytest.approx(2.0)


def test_bilinear_factorized_matches_dense_oracle():
    config = fusion.FusionConfig(kind="bilinear", dim=3, bilinear_out_dim=4)
    store = fusion_store(config, seed=6)
    rng = np.random.default_rng(6)
    e_g = rng.normal(size=3)
    e_m = rng.normal(size=3)
    fused = fusion.fuse_bilinear(dm.constant(e_g), dm.constant(e_m), store, config).value
    U = store.get("fusion.U").value
    V = store.get("fusion.V").value
    for j in range(4):
        dense = fusion.fuse_bilinear_dense(
            dm.constant(e_g), dm.constant(e_m), dm.constant(np.outer(U[:, j], V[:, j]))
        )
        assert abs(float(dense.value) - fused[j]) <= 1e-10


def test_han_single_level_is_projection():
    config = fusion.FusionConfig(kind="han", dim=2, han_levels=1)
    store = fusion_store(config, seed=3)
    e_g = np.array([1.0, 2.0])
    e_m = np.array([-1.0, 0.5])
    out = fusion.fuse_han(dm.constant(e_g), dm.constant(e_m), store, config)
    expected = np.concatenate([e_g, e_m]) @ store.get("fusion.han0.W").value
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_han_equal_logits_equal_weights_collapse():
    config = fusion.FusionConfig(kind="han", dim=2, han_levels=2)
    store = fusion_store(config, seed=3)
    shared = np.array([[0.1, 0.4], [-0.2, 0.3], [0.6, -0.5], [0.2, 0.2]])
    store.get("fusion.han0.W").assign(shared)
    store.get("fusion.han1.W").assign(shared)
    e_g = np.array([1.0, -1.0])
    e_m = np.array([0.5, 2.0])
    out = fusion.fuse_han(dm.constant(e_g), dm.constant(e_m), store, config)
    np.testing.assert_allclose(out.value, np.concatenate([e_g, e_m]) @ shared, atol=1e-12)


def test_han_two_level_hand_computation():
    config = fusion.FusionConfig(kind="han", dim=2, han_levels=2)
    store = fusion_store(config, seed=9)
    store.get("fusion.han.logits").assign(np.array([0.3, -0.6]))
    e_g = np.array([0.7, -0.1])
    e_m = np.array([0.2, 0.9])
    cat = np.concatenate([e_g, e_m])
    z = np.exp([0.3, -0.6])
    alpha = z / z.sum()
    expected = alpha[0] * cat @ store.get("fusion.han0.W").value + (
        alpha[1] * cat @ store.get("fusion.han1.W").value
    )
    out = fusion.fuse_han(dm.constant(e_g), dm.constant(e_m), store, config)
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_han_zero_levels_rejected():
    with pytest.raises(ConfigError):
        fusion.FusionConfig(kind="han", han_levels=0).validate()


def test_multiplicative_zero_weights():
    config = fusion.FusionConfig(kind="multiplicative", dim=2)
    store = fusion_store(config, seed=1)
    store.get("fusion.W_m").assign(np.zeros((2, 2)))
    out = fusion.fuse_multiplicative(dm.constant([1.0, 2.0]), dm.constant([3.0, 4.0]), store, config)
    np.testing.assert_allclose(out.value, [0.0, 0.0])


def test_multiplicative_bounded_by_one():
    config = fusion.FusionConfig(kind="multiplicative", dim=3)
    store = fusion_store(config, seed=12)
    rng = np.random.default_rng(12)
    out = fusion.fuse_multiplicative(
        dm.constant(rng.normal(size=3) * 10), dm.constant(rng.normal(size=3) * 10), store, config
    )
    assert np.max(np.abs(out.value)) <= 1.0


def test_multiplicative_hand_computation():
    config = fusion.FusionConfig(kind="multiplicative", dim=2)
    store = fusion_store(config, seed=7)
    w = np.array([[0.4, -0.2], [0.1, 0.5]])
    store.get("fusion.W_m").assign(w)
    e_g = np.array([1.0, -1.0])
    e_m = np.array([0.5, 0.2])
    expected = np.tanh(e_g @ w) * np.tanh(e_m @ w)
    out = fusion.fuse_multiplicative(dm.constant(e_g), dm.constant(e_m), store, config)
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_fusion_dim_mismatch_errors():
    config = fusion.FusionConfig(kind="gated", dim=3)
    store = fusion_store(config)
    with pytest.raises(DimensionError):
        fusion.fuse_gated(dm.constant([1.0, 2.0]), dm.constant([1.0, 2.0, 3.0]), store, config)


@pytest.mark.parametrize("kind", fusion.FUSION_KINDS)
def test_fusion_parameter_gradients(kind):
    config = fusion.FusionConfig(kind=kind, dim=3, han_levels=2, bilinear_out_dim=2)
    store = fusion_store(config, graph_dim=4, student_dim=3, seed=5)
    rng = np.random.default_rng(5)
    h_g = rng.normal(size=4)
    h_m = rng.normal(size=3)
    probe = rng.normal(size=config.out_dim)

    def build(s):
        fused = fusion.fuse(dm.constant(h_g), dm.constant(h_m), s, config)
        return dm.matmul(fused, dm.constant(probe))

    assert check_gradients(build, store) < 1e-4


def test_projection_to_common_dim_before_fusion():
    config = fusion.FusionConfig(kind="gated", dim=2)
    store = fusion_store(config, graph_dim=5, student_dim=3, seed=10)
    rng = np.random.default_rng(10)
    out = fusion.fuse(dm.constant(rng.normal(size=5)), dm.constant(rng.normal(size=3)), store, config)
    assert out.value.shape == (2,)
