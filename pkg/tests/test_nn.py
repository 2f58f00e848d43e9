import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coocnet.errors import CheckpointVersionError, CorruptCheckpointError, DivergenceError, ShapeMismatchError
from coocnet.nn import (
    AdamState,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Model,
    ReLU,
    adam_step,
    checkpoint_bytes,
    conv_output_size,
    cross_entropy,
    forward,
    load_checkpoint,
    loss_and_gradients,
    model_from_bytes,
    predict_proba,
    reference_model,
    save_checkpoint,
    softmax,
)
from oracles import central_difference, max_relative_error, scalar_adam

H = 1e-5


def tiny_model(seed=0, in_shape=(4, 8, 8)):
    layers = [Conv2d(3, 3, stride=1, padding=1), ReLU(), Conv2d(5, 3, stride=2, padding=1), ReLU(),
              GlobalAvgPool(), Linear(2)]
    m = Model(layers, in_shape, seed=seed)
    # non-zero biases so their gradients are exercised too
    rng = np.random.default_rng(seed + 100)
    for p in m.params:
        if "bias" in p:
            p["bias"][:] = rng.normal(0, 0.1, size=p["bias"].shape)
    return m


# ---------------------------------------------------------------------------
# Cross-entropy
# ---------------------------------------------------------------------------


def test_cross_entropy_uniform():
    loss, grad = cross_entropy(np.zeros((1, 2)), [0])
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert np.allclose(grad, [[-0.5, 0.5]])


def test_cross_entropy_large_logits():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        loss, grad = cross_entropy(np.array([[1000.0, 0.0]]), [0])
    assert 0.0 <= loss < 1e-12 and np.isfinite(grad).all()
    loss, _ = cross_entropy(np.array([[1000.0, 0.0]]), [1])
    assert loss == pytest.approx(1000.0)


def test_cross_entropy_gradient_matches_finite_differences(rng):
    for _ in range(20):
        z = rng.normal(0, 2, size=(5, 2))
        y = rng.integers(0, 2, size=5)
        _, g = cross_entropy(z, y)
        num = central_difference(lambda: cross_entropy(z, y)[0], z, H)
        assert max_relative_error(g, num) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=2), st.integers(0, 1))
def test_cross_entropy_non_negative(z, y):
    assert cross_entropy(np.array([z]), [y])[0] >= 0


def test_cross_entropy_bad_labels():
    with pytest.raises(ShapeMismatchError):
        cross_entropy(np.zeros((2, 2)), [0])
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 2)), [2])


# ---------------------------------------------------------------------------
# Per-layer gradient checks: loss = sum(layer(x) * r) for a fixed random r
# ---------------------------------------------------------------------------


def layer_cases():
    return [
        (Conv2d(3, 3, stride=1, padding=0), (2, 2, 6, 6)),
        (Conv2d(4, 3, stride=2, padding=1), (2, 3, 7, 7)),
        (Conv2d(2, 1, stride=1, padding=0), (1, 2, 3, 3)),
        (ReLU(), (2, 3, 4, 4)),
        (MaxPool2d(2), (2, 2, 6, 6)),
        (MaxPool2d(3, 2), (1, 2, 7, 7)),
        (GlobalAvgPool(), (2, 3, 4, 5)),
        (Linear(3), (4, 6)),
    ]


@pytest.mark.parametrize("layer,shape", layer_cases(), ids=lambda v: repr(v) if not isinstance(v, tuple) else "")
def test_layer_gradients(rng, layer, shape):
    x = rng.normal(size=shape)
    if isinstance(layer, ReLU):
        x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    params = layer.init_params(shape[1:], rng, np.float64)
    for p in params.values():
        p += rng.normal(0, 0.1, size=p.shape)
    y, cache = layer.forward(x, params)
    r = rng.normal(size=y.shape)
    dx, grads = layer.backward(r, cache, params)

    def loss():
        return float(np.sum(layer.forward(x, params)[0] * r))

    assert dx.shape == x.shape
    assert max_relative_error(dx, central_difference(loss, x, H)) < 1e-4
    for k, p in params.items():
        assert grads[k].shape == p.shape
        assert max_relative_error(grads[k], central_difference(loss, p, H)) < 1e-4


def test_maxpool_ties_route_to_first_max():
    x = np.ones((1, 1, 2, 2))
    layer = MaxPool2d(2)
    _, cache = layer.forward(x, {})
    dx, _ = layer.backward(np.ones((1, 1, 1, 1)), cache, {})
    assert dx.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


# ---------------------------------------------------------------------------
# Whole-model gradients
# ---------------------------------------------------------------------------


def test_tiny_model_gradients(rng):
    m = tiny_model(1)
    x = rng.normal(size=(3, 4, 8, 8))
    y = np.array([0, 1, 1])
    _, grads = loss_and_gradients(m, x, y)
    for p, g in zip(m.params, grads):
        for k in p:
            num = central_difference(lambda: loss_and_gradients(m, x, y)[0], p[k], H)
            assert max_relative_error(g[k], num) < 1e-4, k


def test_reference_model_gradients(rng):
    m = reference_model(planes=2, bins=16, seed=4)
    x = rng.uniform(0, 1, size=(2, 2, 16, 16))
    y = np.array([1, 0])
    _, grads = loss_and_gradients(m, x, y)
    # a random sample of entries from every parameter array
    for p, g in zip(m.params, grads):
        for k, arr in p.items():
            flat, gflat = arr.reshape(-1), g[k].reshape(-1)
            for idx in rng.choice(flat.size, min(flat.size, 25), replace=False):
                orig = flat[idx]
                flat[idx] = orig + H
                up = loss_and_gradients(m, x, y)[0]
                flat[idx] = orig - H
                down = loss_and_gradients(m, x, y)[0]
                flat[idx] = orig
                assert max_relative_error(gflat[idx], (up - down) / (2 * H)) < 1e-4


def test_dead_path_gradient_is_zero(rng):
    m = tiny_model(2)
    x = rng.normal(size=(2, 4, 8, 8))
    x[:, 2] = 0.0
    _, grads = loss_and_gradients(m, x, [0, 1])
    assert np.all(grads[0]["weight"][:, 2] == 0.0)


def test_duplicated_batch_gives_same_mean_gradient(rng):
    m = tiny_model(3)
    x = rng.normal(size=(3, 4, 8, 8))
    y = np.array([0, 1, 0])
    l1, g1 = loss_and_gradients(m, x, y)
    l2, g2 = loss_and_gradients(m, np.concatenate([x, x]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, rel=1e-12)
    for a, b in zip(g1, g2):
        for k in a:
            assert np.allclose(a[k], b[k], rtol=1e-10, atol=1e-14)


def test_batch_rows_are_independent(rng):
    m = reference_model(bins=16, seed=5)
    x = rng.uniform(size=(4, 6, 16, 16))
    logits = forward(m, x)
    dup = forward(m, np.stack([x[1], x[1]]))
    assert np.array_equal(dup[0], dup[1])
    perm = np.array([2, 0, 3, 1])
    assert np.allclose(forward(m, x[perm]), logits[perm], rtol=0, atol=1e-14)
    for i in range(4):
        assert np.allclose(forward(m, x[i : i + 1])[0], logits[i], rtol=0, atol=1e-14)


def test_zero_input_gives_uniform_softmax():
    m = reference_model(bins=16, seed=6)
    logits = forward(m, np.zeros((2, 6, 16, 16)))
    assert np.array_equal(logits, np.zeros((2, 2)))
    assert np.array_equal(softmax(logits), np.full((2, 2), 0.5))
    assert np.array_equal(predict_proba(m, np.zeros((3, 6, 16, 16))), np.full(3, 0.5))


def test_forward_guards():
    m = reference_model(bins=16)
    with pytest.raises(ShapeMismatchError):
        forward(m, np.zeros((1, 3, 16, 16)))
    with pytest.raises(ShapeMismatchError):
        forward(m, np.zeros((1, 6, 32, 32)))
    with pytest.raises(DivergenceError):
        forward(m, np.full((1, 6, 16, 16), np.nan))


def test_model_construction_checks():
    with pytest.raises(ShapeMismatchError):
        Model([Conv2d(4, 3), GlobalAvgPool(), Linear(3)], (2, 8, 8))
    with pytest.raises(ShapeMismatchError):
        Model([Conv2d(4, 5), GlobalAvgPool(), Linear(2)], (2, 3, 3))
    with pytest.raises(ShapeMismatchError):
        Model([Conv2d(4, 3), Linear(2)], (2, 8, 8))


def test_reference_model_shapes():
    m = reference_model(planes=6, bins=64)
    assert m.shapes == [(6, 64, 64), (16, 32, 32), (16, 32, 32), (32, 16, 16), (32, 16, 16), (32, 8, 8),
                        (64, 4, 4), (64, 4, 4), (64,), (2,)]
    assert all(np.all(p["bias"] == 0) for p in m.params if "bias" in p)
    assert reference_model(planes=6, bins=256).shapes[-3] == (64, 16, 16)


def test_init_is_seeded():
    a, b, c = reference_model(seed=1), reference_model(seed=1), reference_model(seed=2)
    assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not np.array_equal(a.parameters()[0], c.parameters()[0])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(1, 7), st.integers(1, 4), st.integers(0, 3))
def test_conv_shape_algebra(size, kernel, stride, pad):
    expected = (size + 2 * pad - kernel) // stride + 1
    assert conv_output_size(size, kernel, stride, pad) == expected
    layer = Conv2d(2, kernel, stride, pad)
    if expected < 1:
        with pytest.raises(ShapeMismatchError):
            layer.output_shape((1, size, size))
        return
    assert layer.output_shape((1, size, size)) == (2, expected, expected)
    params = layer.init_params((1, size, size), np.random.default_rng(0), np.float64)
    y, _ = layer.forward(np.ones((1, 1, size, size)), params)
    assert y.shape == (1, 2, expected, expected)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_fixed_point(rng):
    params = [rng.normal(size=(3, 2)), rng.normal(size=4)]
    before = [p.copy() for p in params]
    state = AdamState.for_params(params)
    adam_step(params, [np.zeros((3, 2)), np.zeros(4)], state)
    assert state.t == 1
    assert all(np.array_equal(a, b) for a, b in zip(params, before))


def test_adam_first_step_scalar():
    p = np.zeros(1)
    state = AdamState(lr=0.1)
    adam_step([p], [np.ones(1)], state)
    assert p[0] == pytest.approx(-0.1, abs=1e-8)
    assert state.t == 1


def test_adam_matches_scalar_reference(rng):
    grads = rng.normal(size=50) * np.logspace(-3, 2, 50)
    p = np.array([0.3])
    state = AdamState(lr=0.05)
    traj = []
    for g in grads:
        adam_step([p], [np.array([g])], state)
        traj.append(p[0])
    ref = scalar_adam(grads, lr=0.05, p=0.3)
    assert np.allclose(traj, ref, rtol=1e-12, atol=1e-15)


def test_adam_errors():
    with pytest.raises(DivergenceError):
        adam_step([np.zeros(2)], [np.array([1.0, np.inf])], AdamState())
    with pytest.raises(ShapeMismatchError):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_checkpoint_round_trip(tmp_path, rng, dtype):
    m = reference_model(bins=16, seed=7, dtype=dtype, normalization="per_plane_sum_to_one")
    x = rng.uniform(size=(3, 6, 16, 16))
    back = load_checkpoint(save_checkpoint(m, tmp_path / "m.cnet"))
    assert back.dtype == np.dtype(dtype)
    assert back.metadata == m.metadata
    assert back.describe() == m.describe()
    assert np.array_equal(forward(back, x), forward(m, x))
    raw = (tmp_path / "m.cnet").read_bytes()
    assert raw[:4] == b"CNET" and raw[4:6] == b"\x01\x00"


def test_checkpoint_truncated_or_damaged():
    raw = checkpoint_bytes(reference_model(bins=16))
    for cut in (3, 10, len(raw) // 2, len(raw) - 1):
        with pytest.raises(CorruptCheckpointError):
            model_from_bytes(raw[:cut])
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    with pytest.raises(CorruptCheckpointError):
        model_from_bytes(bytes(flipped))
    with pytest.raises(CorruptCheckpointError):
        model_from_bytes(b"JUNK" + raw[4:])


def test_checkpoint_version_mismatch():
    raw = bytearray(checkpoint_bytes(reference_model(bins=16)))
    raw[4:6] = (2).to_bytes(2, "little")
    with pytest.raises(CheckpointVersionError):
        model_from_bytes(bytes(raw))


def test_checkpoint_bins_mismatch_at_forward(tmp_path):
    m = load_checkpoint(save_checkpoint(reference_model(bins=64), tmp_path / "m.cnet"))
    with pytest.raises(ShapeMismatchError):
        forward(m, np.zeros((1, 6, 256, 256)))
