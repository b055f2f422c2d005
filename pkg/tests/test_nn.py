import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rafl import nn
from rafl.nn import Conv, Dense, Flatten, MaxPool, NetworkSpec, ReLU, SparseBegin, SparseEnd
from rafl.networks import desk_cnn, femnist_cnn

from conftest import every_layer_net, grad_rel_error


def naive_conv(x, w, b, stride, padding):
    """Direct 7-loop convolution used as the oracle for the im2col kernel."""
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    n, c, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(n):
        for o in range(co):
            for y in range(ho):
                for z in range(wo):
                    patch = x[i, :, y * stride:y * stride + kh, z * stride:z * stride + kw]
                    out[i, o, y, z] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


@pytest.mark.parametrize("stride,padding,bias", [(1, 0, True), (2, 1, False), (1, 2, True)])
def test_conv_kernel_matches_direct_loops(rng, stride, padding, bias):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, 3, 2))
    b = rng.normal(size=4) if bias else None
    out, _ = nn.conv_forward(x, w, b, stride, padding)
    assert np.allclose(out, naive_conv(x, w, b, stride, padding))


def test_maxpool_forward_backward(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    out, arg = nn.pool_forward(x, 2, 2)
    assert np.allclose(out, x.reshape(1, 2, 2, 2, 2, 2).max(axis=(3, 5)))
    dx = nn.pool_backward(np.ones_like(out), arg, x.shape, 2, 2)
    assert dx.sum() == out.size
    assert np.array_equal(np.sort(x[dx == 1]), np.sort(out.reshape(-1)))


def test_sample_masks_all_zero_is_full(rng):
    spec = every_layer_net()
    m = nn.sample_masks(np.zeros(3), spec, rng)
    for keep, i in zip(m.keep, spec.conv_indices):
        assert np.array_equal(keep, np.arange(spec.layers[i].c_out))
    assert m.scale == [1.0, 1.0, 1.0]


def test_sample_masks_mean_kept_count():
    spec = NetworkSpec((SparseBegin(), Conv(8), SparseEnd(), Flatten(), Dense(2)), (1, 4, 4))
    rng = np.random.default_rng(0)
    counts = [len(nn.sample_masks([0.5], spec, rng).keep[0]) for _ in range(10_000)]
    # resampling empty layers adds 8 * 0.5**8 / (1 - 0.5**8) ~ 0.016 to the mean
    assert abs(np.mean(counts) - 4.0) < 0.1


def test_sample_masks_single_filter_always_kept():
    spec = NetworkSpec((SparseBegin(), Conv(1), SparseEnd(), Flatten(), Dense(2)), (1, 4, 4))
    rng = np.random.default_rng(1)
    for _ in range(200):
        m = nn.sample_masks([0.5], spec, rng)
        assert list(m.keep[0]) == [0] and m.scale[0] == 2.0


@pytest.mark.parametrize("bad", [-0.1, 0.51, np.nan])
def test_sample_masks_rejects_bad_rates(rng, bad):
    with pytest.raises(ValueError):
        nn.sample_masks([0.1, bad, 0.2], every_layer_net(), rng)


def test_sample_masks_rejects_wrong_length(rng):
    with pytest.raises(ValueError):
        nn.sample_masks([0.1, 0.2], every_layer_net(), rng)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 0.5), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
def test_masks_sorted_unique_nonempty(d, seed):
    spec = every_layer_net()
    m = nn.sample_masks(d, spec, np.random.default_rng(seed))
    for keep, i in zip(m.keep, spec.conv_indices):
        assert len(keep) >= 1
        assert np.all(np.diff(keep) > 0)
        assert keep[-1] < spec.layers[i].c_out


def test_full_masks_bit_identical_to_dense(rng):
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    x = rng.random((3, 2, 8, 8))
    dense, _ = nn.forward(spec, w, x)
    masked, _ = nn.forward(spec, w, x, nn.full_masks(spec), training=True)
    assert np.array_equal(dense, masked)
    sampled, _ = nn.forward(spec, w, x, nn.sample_masks(np.zeros(3), spec, rng), training=True)
    assert np.array_equal(dense, sampled)


def test_sparse_forward_equals_zeroed_dense_forward(rng):
    """Computing only valid filters == dense compute with dropped maps zeroed and survivors scaled."""
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    for name in w.params:
        if name.endswith(".b"):
            w.params[name] = rng.normal(size=w.params[name].shape)
    x = rng.random((2, 2, 8, 8))
    d = np.array([0.5, 0.3, 0.4])
    masks = nn.sample_masks(d, spec, rng)
    sparse, _ = nn.forward(spec, w, x, masks, training=True)

    # oracle: dense layer-by-layer with a multiplicative channel mask
    h = x
    conv_no = 0
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv):
            W, b = nn.param_names(spec, i)
            h, _ = nn.conv_forward(h, w.params[W], w.params[b] if b else None, layer.stride, layer.padding)
            gate = np.zeros(layer.c_out)
            gate[masks.keep[conv_no]] = masks.scale[conv_no]
            h = h * gate[None, :, None, None]
            conv_no += 1
        elif isinstance(layer, ReLU):
            h = np.maximum(h, 0)
        elif isinstance(layer, MaxPool):
            h, _ = nn.pool_forward(h, layer.k, layer.stride)
        elif isinstance(layer, Flatten):
            h = h.reshape(len(h), -1)
        elif isinstance(layer, Dense):
            W, b = nn.param_names(spec, i)
            h = h @ w.params[W] + (w.params[b] if b else 0.0)
    assert np.allclose(sparse, h, rtol=1e-12, atol=1e-12)


def test_inference_rejects_masks_and_training_requires_them(rng):
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    x = rng.random((1, 2, 8, 8))
    with pytest.raises(ValueError):
        nn.forward(spec, w, x, nn.full_masks(spec), training=False)
    with pytest.raises(ValueError):
        nn.forward(spec, w, x, None, training=True)


def test_shape_mismatch_rejected(rng):
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    with pytest.raises(ValueError):
        nn.forward(spec, w, rng.random((1, 3, 8, 8)))


def test_backward_without_cache_fails(rng):
    spec = every_layer_net()
    with pytest.raises(RuntimeError):
        nn.backward(spec, nn.init_weights(spec, rng), None, np.zeros((1, 4)))


def test_spec_validation():
    with pytest.raises(ValueError):  # SparseEnd must come before the first Dense
        NetworkSpec((SparseBegin(), Conv(2), Flatten(), Dense(2), SparseEnd()), (1, 4, 4))
    with pytest.raises(ValueError):  # SparseBegin must precede the first Conv
        NetworkSpec((Conv(2), SparseBegin(), SparseEnd(), Flatten(), Dense(2)), (1, 4, 4))
    with pytest.raises(ValueError):  # kernel larger than input
        NetworkSpec((SparseBegin(), Conv(2, 5, 5), SparseEnd(), Flatten(), Dense(2)), (1, 4, 4))


def test_spec_round_trip_and_fingerprint():
    spec = femnist_cnn()
    assert nn.NetworkSpec.from_dict(spec.to_dict()) == spec
    assert len(spec.fingerprint()) == 8
    assert spec.fingerprint() != desk_cnn().fingerprint()


@pytest.mark.parametrize("with_masks", [False, True])
def test_gradients_match_finite_differences(with_masks):
    rng = np.random.default_rng(7)
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    for name in w.params:
        if name.endswith(".b"):
            w.params[name] = rng.normal(scale=0.1, size=w.params[name].shape)
    x = rng.random((3, 2, 8, 8))
    y = np.array([0, 3, 1])
    masks = nn.sample_masks([0.5, 0.4, 0.3], spec, rng) if with_masks else None
    assert grad_rel_error(spec, w, x, y, masks) <= 1e-4


def test_dropped_filters_get_zero_gradient(rng):
    spec = every_layer_net()
    w = nn.init_weights(spec, rng)
    masks = nn.MaskSet([np.array([0, 2]), np.array([1, 3, 4]), np.array([0])], [2.0, 1.5, 3.0])
    _, g = nn.loss_and_grads(spec, w, rng.random((2, 2, 8, 8)), np.array([1, 2]), masks)
    assert np.all(g["1.W"][[1, 3]] == 0) and np.all(g["1.b"][[1, 3]] == 0)
    assert np.all(g["4.W"][[0, 2]] == 0) and np.all(g["4.W"][:, [1, 3]] == 0)
    assert np.all(g["6.W"][1:] == 0)


def test_sgd_matches_scalar_recurrence():
    w = nn.Weights({"p": np.array([1.0])})
    lr, mom, wd = 0.1, 0.9, 0.01
    ref_w, ref_v = 1.0, 0.0
    for g in [0.5, -0.2, 0.3, 0.1]:
        nn.sgd_step(w, {"p": np.array([g])}, lr, mom, wd)
        ref_v = mom * ref_v + g + wd * ref_w
        ref_w = ref_w - lr * ref_v
        assert w.params["p"][0] == pytest.approx(ref_w, rel=1e-15)


def test_sgd_trainable_mask_freezes_other_entries():
    w = nn.Weights({"p": np.array([1.0, 2.0])})
    nn.sgd_step(w, {"p": np.array([1.0, 1.0])}, 0.1, trainable={"p": np.array([True, False])})
    assert w.params["p"][1] == 2.0 and w.params["p"][0] != 1.0


def test_sgd_rejects_non_finite():
    w = nn.Weights({"p": np.array([1.0])})
    with pytest.raises(FloatingPointError):
        nn.sgd_step(w, {"p": np.array([np.inf])}, 0.1)


def test_prefix_masks_counts():
    spec = NetworkSpec((SparseBegin(), Conv(100), SparseEnd(), Flatten(), Dense(2)), (1, 4, 4))
    assert len(nn.prefix_masks(spec, 0.7 ** 2).keep[0]) == 49
    assert len(nn.prefix_masks(spec, 1.0).keep[0]) == 100


def test_trainable_mask_covers_sub_network():
    spec = every_layer_net()
    masks = nn.prefix_masks(spec, 0.5)
    t = nn.trainable_mask(spec, masks)
    assert t["1.W"][:2, :].all() and not t["1.W"][2:].any()
    assert t["4.W"][:3][:, :2].all() and not t["4.W"][:, 2:].any()
    assert t["9.W"].sum() == 2 * 2 * 6  # 2 of 3 maps, each 1x2 after the last conv
    assert t["11.W"].all()


def test_evaluate_empty_dataset_fails(rng):
    from rafl.data import Dataset

    spec = every_layer_net()
    empty = Dataset(np.zeros((0, 2, 8, 8)), np.zeros(0, dtype=int), 4)
    with pytest.raises(ValueError):
        nn.evaluate(spec, nn.init_weights(spec, rng), empty)
