import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rischan.denoiser import (
    BatchNorm2d, BilinearUp, Conv2d, MaxPool2, ReLU, ShapeError, bilinear_up, concat,
    gradient_check, maxpool2, relu,
)
from rischan.denoiser.layers import bilinear_matrix, split_channels


def naive_conv(x, w, b, padding="zeros"):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((B, O, H, W))
    for n in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = b[o]
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                ii, jj = i + u - p, j + v - p
                                if padding == "replicate":
                                    ii, jj = min(max(ii, 0), H - 1), min(max(jj, 0), W - 1)
                                elif not (0 <= ii < H and 0 <= jj < W):
                                    continue
                                acc += w[o, c, u, v] * x[n, c, ii, jj]
                    out[n, o, i, j] = acc
    return out


def test_identity_one_by_one():
    conv = Conv2d(3, 3, 1, dtype=np.float64)
    conv.params["weight"][:, :, 0, 0] = np.eye(3)
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 5))
    assert np.array_equal(conv.forward(x), x)


def test_zero_kernel_gives_bias():
    conv = Conv2d(2, 3, 3, dtype=np.float64)
    conv.params["bias"][:] = [1.0, -2.0, 0.5]
    out = conv.forward(np.ones((1, 2, 4, 4)))
    assert np.array_equal(out, np.broadcast_to(conv.params["bias"][None, :, None, None], out.shape))


@pytest.mark.parametrize("padding", ["zeros", "replicate"])
def test_conv_matches_nested_loops(padding):
    rng = np.random.default_rng(1)
    conv = Conv2d(3, 2, 3, rng, np.float64, padding=padding)
    conv.params["bias"][:] = rng.standard_normal(2)
    x = rng.standard_normal((1, 3, 4, 4))
    want = naive_conv(x, conv.params["weight"], conv.params["bias"], padding)
    got = conv.forward(x)
    assert np.max(np.abs(got - want)) / np.max(np.abs(want)) < 1e-6


def test_conv_errors():
    with pytest.raises(ShapeError):
        Conv2d(2, 2, 2)
    with pytest.raises(ShapeError):
        Conv2d(2, 2, 3, dtype=np.float64).forward(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ValueError):
        Conv2d(2, 2, 3, padding="reflect")
    with pytest.raises(ValueError):
        Conv2d(2, 2, 3, init="orthogonal")


def test_init_scales():
    rng = np.random.default_rng(0)
    g = Conv2d(64, 64, 3, rng, np.float64).params["weight"]
    k = Conv2d(64, 64, 3, rng, np.float64, init="kaiming").params["weight"]
    assert np.abs(g).max() <= np.sqrt(6 / (2 * 64 * 9))
    assert np.var(k) / np.var(g) == pytest.approx(2.0, rel=0.05)


@pytest.mark.parametrize("padding", ["zeros", "replicate"])
@pytest.mark.parametrize("k", [1, 3, 5])
def test_conv_gradients(k, padding):
    rng = np.random.default_rng(2)
    conv = Conv2d(2, 3, k, rng, np.float64, padding=padding)
    conv.params["bias"][:] = rng.standard_normal(3)
    assert gradient_check(conv, rng.standard_normal((2, 2, 5, 4)), n_probes=100) < 1e-6


def test_maxpool_small_case_and_errors():
    assert np.array_equal(maxpool2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), [[[[4.0]]]])
    with pytest.raises(ShapeError):
        maxpool2(np.zeros((1, 1, 3, 4)))


def test_maxpool_routes_gradient_to_the_winner():
    pool = MaxPool2()
    pool.forward(np.array([[[[1.0, 5.0], [3.0, 4.0]]]]))
    assert np.array_equal(pool.backward(np.array([[[[2.0]]]])), [[[[0, 2.0], [0, 0]]]])


def test_bilinear_hand_example():
    x = np.array([1.0, 3.0]).reshape(1, 1, 1, 2)
    up = bilinear_up(x, 2)
    assert np.allclose(up[0, 0, 0], [1.0, 1.5, 2.5, 3.0])
    assert np.allclose(up[0, 0, 1], [1.0, 1.5, 2.5, 3.0])


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([2, 4]), st.floats(-5, 5))
def test_bilinear_preserves_constants(h, w, f, c):
    out = bilinear_up(np.full((1, 2, h, w), c), f)
    assert out.shape == (1, 2, h * f, w * f)
    assert np.allclose(out, c)


@given(st.integers(1, 8), st.sampled_from([2, 4, 8]))
def test_bilinear_rows_are_convex_weights(n, f):
    U = bilinear_matrix(n, f)
    assert np.allclose(U.sum(axis=1), 1.0)
    assert U.min() >= 0


def test_relu_and_concat():
    x = np.array([[[[-1.0, 2.0]]]])
    assert np.array_equal(relu(x), [[[[0.0, 2.0]]]])
    assert concat([np.zeros((1, 2, 3, 3)), np.ones((1, 1, 3, 3))]).shape == (1, 3, 3, 3)
    with pytest.raises(ShapeError):
        concat([np.zeros((1, 2, 3, 3)), np.ones((1, 1, 3, 4))])
    parts = split_channels(np.arange(12.0).reshape(1, 6, 1, 2), [1, 2, 3])
    assert [p.shape[1] for p in parts] == [1, 2, 3]


def test_batchnorm_train_then_eval():
    rng = np.random.default_rng(3)
    bn = BatchNorm2d(2, dtype=np.float64)
    x = 3.0 + 2.0 * rng.standard_normal((8, 2, 4, 4))
    y = bn.forward(x, train=True)
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-3)
    n = 8 * 16
    assert np.allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=(0, 2, 3)))
    assert np.allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))
    z = bn.forward(x, train=False)
    want = (x - bn.buffers["running_mean"][None, :, None, None]) / np.sqrt(
        bn.buffers["running_var"][None, :, None, None] + 1e-5)
    assert np.allclose(z, want)


@pytest.mark.parametrize("layer", [
    lambda: BatchNorm2d(3, dtype=np.float64), MaxPool2, lambda: BilinearUp(2), ReLU,
])
def test_layer_gradients(layer):
    lyr = layer()
    for p in lyr.params.values():
        p += np.random.default_rng(4).standard_normal(p.shape) * 0.3
    x = np.random.default_rng(5).standard_normal((2, 3, 4, 6))
    assert gradient_check(lyr, x, n_probes=100) < 1e-6


def test_gradient_check_refuses_single_precision():
    with pytest.raises(TypeError):
        gradient_check(Conv2d(1, 1, 3, np.random.default_rng(0)), np.zeros((1, 1, 4, 4)))
