import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.signal import correlate

from camsim.errors import DimensionError, FormatError, NumericError, StateError
from camsim.nn import (Activation, AvgPool2, Conv2d, EncoderDecoder, GlobalAvgPool, Parameter,
                       Resample, activation, adam_step, avg_pool2, conv2d, conv2d_backward,
                       decode_checkpoint, encode_checkpoint, global_avg_pool, gradient_check,
                       l1_loss, load_checkpoint, resample, resample_backward, save_checkpoint,
                       step_lr)
from camsim.nn.ops import activation_backward, avg_pool2_backward, global_avg_pool_backward

from gradutil import TOL, check_function, randomize


def test_conv2d_matches_scipy_correlate(rng):
    x = rng.standard_normal((2, 7, 6, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    y, _ = conv2d(x, w, b, padding=1)
    ref = np.zeros((2, 7, 6, 4))
    for n in range(2):
        for o in range(4):
            ref[n, :, :, o] = b[o] + sum(correlate(x[n, :, :, c], w[:, :, c, o], mode="same")
                                         for c in range(3))
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_conv2d_identity_kernel(rng):
    x = rng.standard_normal((1, 5, 5, 2))
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    np.testing.assert_allclose(conv2d(x, w, padding=1)[0], x)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        conv2d(np.zeros((1, 4, 4, 3)), np.zeros((3, 3, 2, 1)))


@pytest.mark.parametrize("k, stride, pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (2, 2, 0)])
def test_conv2d_gradients(k, stride, pad, rng):
    x = rng.standard_normal((2, 8, 8, 3))
    w = rng.standard_normal((k, k, 3, 2))
    b = rng.standard_normal(2)
    cache = {}

    def fwd(x, w, b):
        y, cache["c"] = conv2d(x, w, b, stride, pad)
        return y

    def bwd(dy):
        return conv2d_backward(dy, cache["c"])

    assert check_function(fwd, bwd, [x, w, b]) < TOL


@pytest.mark.parametrize("kind", ["relu", "sigmoid"])
def test_activation_gradients(kind, rng):
    # keep ReLU inputs away from the kink
    x = rng.standard_normal((2, 8, 8, 3))
    x = np.where(np.abs(x) < 1e-2, 0.5, x)
    cache = {}

    def fwd(x):
        y, cache["c"] = activation(x, kind)
        return y

    assert check_function(fwd, lambda dy: [activation_backward(dy, cache["c"], kind)], [x]) < TOL


def test_sigmoid_is_stable_at_extremes():
    y, _ = activation(np.array([-1000.0, 0.0, 1000.0]), "sigmoid")
    np.testing.assert_allclose(y, [0.0, 0.5, 1.0])


def test_relu_zero_gradient_at_zero():
    _, mask = activation(np.array([0.0, -1.0, 2.0]), "relu")
    np.testing.assert_array_equal(activation_backward(np.ones(3), mask, "relu"), [0, 0, 1])


def test_pooling_gradients(rng):
    x = rng.standard_normal((2, 8, 8, 3))
    s = {}

    def g_fwd(x):
        y, s["g"] = global_avg_pool(x)
        return y

    def a_fwd(x):
        y, s["a"] = avg_pool2(x)
        return y

    assert check_function(g_fwd, lambda dy: [global_avg_pool_backward(dy, s["g"])], [x]) < TOL
    assert check_function(a_fwd, lambda dy: [avg_pool2_backward(dy, s["a"])], [x]) < TOL


def test_global_avg_pool_example():
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    np.testing.assert_allclose(global_avg_pool(x)[0].ravel(), [3.0, 4.0])


@pytest.mark.parametrize("mode", ["bilinear", "nearest"])
@pytest.mark.parametrize("size", [(8, 8), (4, 4), (5, 7), (16, 12)])
def test_resample_gradients(mode, size, rng):
    x = rng.standard_normal((1, 8, 8, 2))
    s = {}

    def fwd(x):
        y, s["c"] = resample(x, *size, mode)
        return y

    assert check_function(fwd, lambda dy: [resample_backward(dy, s["c"])], [x]) < TOL


def test_resample_same_size_is_identity(rng):
    x = rng.standard_normal((1, 5, 6, 2))
    np.testing.assert_allclose(resample(x, 5, 6, "bilinear")[0], x, atol=1e-15)
    np.testing.assert_array_equal(resample(x, 5, 6, "nearest")[0], x)


def test_bilinear_upsample_corner_aligned():
    x = np.array([0.0, 1.0]).reshape(1, 1, 2, 1)
    y, _ = resample(x, 1, 3, "bilinear")
    np.testing.assert_allclose(y.ravel(), [0.0, 0.5, 1.0])


@given(st.floats(-5, 5), st.integers(2, 9), st.integers(2, 9))
def test_resample_preserves_constants(c, h, w):
    x = np.full((1, 4, 6, 1), c)
    for mode in ("bilinear", "nearest"):
        np.testing.assert_allclose(resample(x, h, w, mode)[0], c, atol=1e-12)


def test_l1_loss_value_and_subgradient():
    loss, g = l1_loss(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0.0, 4.0]))
    assert loss == pytest.approx(1.0)
    np.testing.assert_allclose(g, [0.0, 1 / 3, -1 / 3])


def test_l1_loss_mask():
    loss, g = l1_loss(np.array([1.0, 5.0]), np.zeros(2), mask=np.array([True, False]))
    assert loss == 1.0 and g[1] == 0.0


def test_smoothed_l1_gradient(rng):
    t = rng.standard_normal((2, 8, 8, 1))

    def fwd(p):
        return np.array(l1_loss(p, t, smooth=0.1)[0])

    def bwd(dy):
        return [dy * l1_loss(fwd.last, t, smooth=0.1)[1]]

    p = rng.standard_normal(t.shape)
    fwd.last = p
    params = [Parameter(p, "p")]

    def loss(backward):
        value, grad = l1_loss(params[0].value, t, smooth=0.1)
        if backward:
            params[0].accumulate(grad)
        return value

    assert gradient_check(loss, params) < TOL


def test_gradient_check_quadratic_oracle(rng):
    p = Parameter(rng.standard_normal(10), "theta")

    def loss(backward):
        if backward:
            p.accumulate(2 * p.value)
        return float(np.sum(p.value ** 2))

    assert gradient_check(loss, [p], delta=1e-5) < 1e-8


def test_gradient_check_flags_wrong_gradient(rng):
    p = Parameter(rng.standard_normal(4), "theta")

    def loss(backward):
        if backward:
            p.accumulate(3 * p.value)
        return float(np.sum(p.value ** 2))

    assert gradient_check(loss, [p]) > 0.1


def test_gradient_check_rejects_nonfinite():
    p = Parameter(np.ones(2), "theta")
    with pytest.raises(NumericError):
        gradient_check(lambda b: float("nan"), [p])


def test_layers_gradients(rng):
    for layer, x in [
        (Conv2d(3, 2, 3, rng=rng), rng.standard_normal((2, 8, 8, 3))),
        (AvgPool2(), rng.standard_normal((2, 8, 8, 3))),
        (GlobalAvgPool(), rng.standard_normal((2, 8, 8, 3))),
        (Activation("sigmoid"), rng.standard_normal((2, 8, 8, 3))),
    ]:
        assert check_function(layer.forward, lambda dy: [layer.backward(dy)], [x]) < TOL
    up = Resample("bilinear")
    assert check_function(lambda x: up.forward(x, (8, 8)), lambda dy: [up.backward(dy)],
                          [rng.standard_normal((1, 4, 4, 2))]) < TOL


def test_encoder_decoder_zero_init_outputs_zero(rng):
    net = EncoderDecoder(4, 4, base_width=4)
    assert np.all(net.forward(rng.random((1, 8, 8, 4))) == 0.0)


def test_encoder_decoder_gradients(rng):
    net = EncoderDecoder(3, 2, base_width=4, depth=3, seed=1)
    randomize(net.parameters(), rng)
    x = rng.random((2, 8, 8, 3))
    t = rng.random((2, 8, 8, 2))
    params = net.parameters()

    def loss(backward):
        value, grad = l1_loss(net.forward(x), t, smooth=0.1)
        if backward:
            net.backward(grad)
        return value

    assert gradient_check(loss, params, max_entries=20) < TOL


def test_adam_single_step_hand_calculation():
    p = Parameter(np.array([0.5]), "w")
    p.grad = np.array([1.0])
    adam_step([p])
    # m_hat = 1, v_hat = 1  ->  step = lr * 1 / (1 + eps)
    assert p.value[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-8), abs=1e-15)
    assert p.step == 1


def test_adam_two_steps_hand_calculation():
    p = Parameter(np.array([0.0]), "w")
    for g in (1.0, -2.0):
        p.grad = np.array([g])
        adam_step([p], lr=0.1)
    m = 0.9 * 0.1 * 1.0 + 0.1 * -2.0
    v = 0.999 * 0.001 * 1.0 + 0.001 * 4.0
    step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    assert p.value[0] == pytest.approx(-0.1 / (1 + 1e-8) - step2, rel=1e-12)


def test_adam_zero_gradient_leaves_parameters():
    p = Parameter(np.array([1.0, 2.0]), "w")
    p.zero_grad()
    adam_step([p])
    np.testing.assert_array_equal(p.value, [1.0, 2.0])


def test_adam_missing_gradient_is_state_error():
    with pytest.raises(StateError):
        adam_step([Parameter(np.zeros(1), "w")])


def test_step_lr_schedule():
    assert step_lr(1e-3, 19) == 1e-3
    assert step_lr(1e-3, 20) == pytest.approx(1e-4, rel=1e-15)
    assert step_lr(1e-3, 40) == pytest.approx(1e-5, rel=1e-15)


def _params(rng):
    return [Parameter(rng.standard_normal((3, 3, 2, 4)), "conv.weight"),
            Parameter(rng.standard_normal(4), "conv.bias"),
            Parameter(np.array(2.5), "scalar")]


def test_checkpoint_roundtrip(rng, tmp_path):
    params = _params(rng)
    save_checkpoint(params, tmp_path / "a.nnck")
    fresh = [Parameter(np.zeros_like(p.value), p.name) for p in params]
    load_checkpoint(fresh, tmp_path / "a.nnck")
    for a, b in zip(params, fresh):
        np.testing.assert_array_equal(a.value, b.value)


def test_checkpoint_layout(rng):
    blob = encode_checkpoint([Parameter(np.array([1.0, -2.0]), "ab")])
    expected = (b"NNCK" + struct.pack("<HI", 1, 1) + struct.pack("<H", 2) + b"ab"
                + struct.pack("<BI", 1, 2) + struct.pack("<2d", 1.0, -2.0))
    assert blob == expected


def test_checkpoint_corruption_offsets(rng):
    blob = encode_checkpoint(_params(rng))
    with pytest.raises(FormatError) as e:
        decode_checkpoint(b"XXXX" + blob[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        decode_checkpoint(blob[:4] + struct.pack("<H", 9) + blob[6:])
    assert e.value.offset == 4
    with pytest.raises(FormatError) as e:
        decode_checkpoint(blob[:-3])
    assert e.value.offset is not None and e.value.offset < len(blob)


def test_checkpoint_shape_mismatch(rng, tmp_path):
    save_checkpoint(_params(rng), tmp_path / "a.nnck")
    wrong = [Parameter(np.zeros((3, 3, 2, 5)), "conv.weight")]
    with pytest.raises(DimensionError):
        load_checkpoint(wrong, tmp_path / "a.nnck")
