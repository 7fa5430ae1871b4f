import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgpcnn.errors import LabelOutOfRange, ShapeMismatch
from cgpcnn.nn import ops


def naive_conv(x, w, b):
    """Direct nested-loop same-padded convolution."""
    bsz, m, n, c = x.shape
    k, _, _, c_out = w.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((bsz, m, n, c_out))
    for i in range(m):
        for j in range(n):
            patch = xp[:, i:i + k, j:j + k, :]
            for o in range(c_out):
                out[:, i, j, o] = (patch * w[..., o]).sum(axis=(1, 2, 3)) + b[o]
    return out


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)


@settings(max_examples=25)
@given(
    st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.integers(1, 4),
    st.sampled_from([1, 3, 5]), st.integers(0, 2**32 - 1),
)
def test_conv_matches_naive_loop(bsz, m, n, c, c_out, k, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(bsz, m, n, c))
    w = rng.normal(size=(k, k, c, c_out))
    b = rng.normal(size=c_out)
    out, _ = ops.conv2d_forward(x, w, b)
    np.testing.assert_allclose(out, naive_conv(x, w, b), rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("k", [3, 5])
def test_conv_backward_finite_differences(k):
    rng = np.random.default_rng(k)
    x = rng.normal(size=(2, 5, 4, 3))
    w = rng.normal(size=(k, k, 3, 2))
    b = rng.normal(size=2)
    proj = rng.normal(size=(2, 5, 4, 2))
    loss = lambda: float((ops.conv2d_forward(x, w, b)[0] * proj).sum())  # noqa: E731
    _, cache = ops.conv2d_forward(x, w, b)
    dx, dw, db = ops.conv2d_backward(proj, cache)
    assert rel(dx, numeric_grad(loss, x)) < 1e-7
    assert rel(dw, numeric_grad(loss, w)) < 1e-7
    assert rel(db, numeric_grad(loss, b)) < 1e-7
    assert ops.conv2d_backward(proj, cache, need_dx=False)[0] is None


def test_conv_rejects_bad_shapes():
    with pytest.raises(ShapeMismatch):
        ops.conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))
    with pytest.raises(ShapeMismatch):
        ops.conv2d_forward(np.zeros((1, 4, 4, 2)), np.zeros((2, 2, 2, 1)), np.zeros(1))


def test_batch_norm_train_backward():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 2, 2, 4)) * 3 + 1
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    proj = rng.normal(size=x.shape)

    def loss():
        out, _ = ops.batch_norm_forward(x, gamma, beta, np.zeros(4), np.ones(4), train=True)
        return float((out * proj).sum())

    _, cache = ops.batch_norm_forward(x, gamma, beta, np.zeros(4), np.ones(4), train=True)
    dx, dgamma, dbeta = ops.batch_norm_backward(proj, cache)
    assert rel(dx, numeric_grad(loss, x)) < 1e-6
    assert rel(dgamma, numeric_grad(loss, gamma)) < 1e-6
    assert rel(dbeta, numeric_grad(loss, beta)) < 1e-6


def test_batch_norm_running_stats():
    x = np.arange(16, dtype=float).reshape(2, 2, 2, 2)
    rm, rv = np.zeros(2), np.ones(2)
    out, _ = ops.batch_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=True)
    mean = x.reshape(-1, 2).mean(axis=0)
    var = x.reshape(-1, 2).var(axis=0)
    np.testing.assert_allclose(rm, 0.1 * mean)
    np.testing.assert_allclose(rv, 0.9 + 0.1 * var)
    np.testing.assert_allclose(out.reshape(-1, 2).mean(axis=0), 0, atol=1e-12)
    infer, _ = ops.batch_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, train=False)
    np.testing.assert_allclose(infer, (x - rm) / np.sqrt(rv + ops.BN_EPS))


def test_relu():
    out, mask = ops.relu_forward(np.array([-1.0, 2.0]))
    assert out.tolist() == [0.0, 2.0]
    assert ops.relu_backward(np.array([5.0, 5.0]), mask).tolist() == [0.0, 5.0]


def test_max_pool_routing():
    x = np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 2, 2, 1)
    out, cache = ops.max_pool_forward(x)
    assert out.item() == 3.0
    dx = ops.max_pool_backward(np.ones((1, 1, 1, 1)), cache)
    assert dx[0, :, :, 0].tolist() == [[0.0, 1.0], [0.0, 0.0]]


def test_max_pool_ties_go_to_first():
    x = np.ones((1, 2, 2, 1))
    _, cache = ops.max_pool_forward(x)
    dx = ops.max_pool_backward(np.full((1, 1, 1, 1), 2.0), cache)
    assert dx[0, :, :, 0].tolist() == [[2.0, 0.0], [0.0, 0.0]]


def test_max_pool_odd_and_general_window():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 7, 3))
    out, _ = ops.max_pool_forward(x)
    assert out.shape == (2, 2, 3, 3)
    out, cache = ops.max_pool_forward(x, window=(3, 2), stride=(2, 3))
    ref = np.empty((2, 2, 2, 3))
    for i in range(2):
        for j in range(2):
            ref[:, i, j] = x[:, 2 * i:2 * i + 3, 3 * j:3 * j + 2].max(axis=(1, 2))
    np.testing.assert_allclose(out, ref)
    proj = rng.normal(size=out.shape)
    loss = lambda: float((ops.max_pool_forward(x, (3, 2), (2, 3))[0] * proj).sum())  # noqa: E731
    assert rel(ops.max_pool_backward(proj, cache), numeric_grad(loss, x)) < 1e-7


def test_avg_pool():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    out, cache = ops.avg_pool_forward(x)
    assert out[0, :, :, 0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    dx = ops.avg_pool_backward(np.ones((1, 2, 2, 1)), cache)
    assert np.all(dx == 0.25)


def test_padded_sum_and_concat():
    a = np.ones((1, 2, 2, 2))
    b = np.arange(12, dtype=float).reshape(1, 2, 2, 3)
    out, cache = ops.padded_sum_forward(a, b)
    assert out.shape == (1, 2, 2, 3)
    np.testing.assert_array_equal(out[..., 2], b[..., 2])
    da, db = ops.padded_sum_backward(np.ones_like(out), cache)
    assert da.shape == a.shape and db.shape == b.shape
    cat, c1 = ops.channel_concat_forward(a, b)
    np.testing.assert_array_equal(cat[..., :2], a)
    np.testing.assert_array_equal(cat[..., 2:], b)
    with pytest.raises(ShapeMismatch):
        ops.padded_sum_forward(a, np.ones((1, 3, 2, 2)))


def test_softmax_cross_entropy_uniform():
    loss, grad = ops.softmax_cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(grad.sum(axis=1), 0, atol=1e-15)


def test_softmax_cross_entropy_margin_limit():
    losses = []
    for margin in (1.0, 5.0, 20.0):
        logits = np.zeros((1, 4))
        logits[0, 2] = margin
        losses.append(ops.softmax_cross_entropy(logits, np.array([2]))[0])
    assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-8


def test_softmax_cross_entropy_finite_differences():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 10))
    labels = rng.integers(0, 10, size=4)
    _, grad = ops.softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: ops.softmax_cross_entropy(logits, labels)[0], logits)
    np.testing.assert_allclose(grad, num, atol=1e-5)


def test_softmax_cross_entropy_label_range():
    with pytest.raises(LabelOutOfRange):
        ops.softmax_cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50))
def test_softmax_is_a_distribution(seed, scale):
    logits = np.random.default_rng(seed).normal(size=(5, 7)) * scale
    p = ops.softmax(logits)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)


def test_flush_subnormal():
    a = np.array([1e-40, -1e-39, 1e-3, 0.0], dtype=np.float32)
    ops.flush_subnormal(a)
    assert a.tolist() == [0.0, 0.0, pytest.approx(1e-3), 0.0]
