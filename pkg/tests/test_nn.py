import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from charda.errors import ConfigurationError, NonFiniteError
from charda.nn import (
    SGD,
    Adam,
    Dense,
    Embedding,
    MaxOverTime,
    Parameter,
    SoftmaxCrossEntropy,
    TemporalConv,
    conv1d_same,
    cross_entropy,
    dense_forward,
    embedding_forward,
    gradient_check,
    make_rng,
    max_over_time,
    softmax,
    temporal_conv_forward,
)


def naive_conv(x, w, b):
    """Sliding-window dot products with explicit bounds checks."""
    L, d = x.shape
    win, _, F = w.shape
    left = (win - 1) // 2
    out = np.zeros((L, F))
    for t in range(L):
        for f in range(F):
            acc = b[f]
            for j in range(win):
                src = t + j - left
                if 0 <= src < L:
                    for k in range(d):
                        acc += x[src, k] * w[j, k, f]
            out[t, f] = acc
    return out


def numeric_grad(fn, x, h=1e-5):
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return g


# -- embedding -----------------------------------------------------------------


def test_embedding_repeated_index_duplicates_row():
    table = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(embedding_forward([0, 0], table), [[1, 2], [1, 2]])


def test_embedding_permutation():
    table = Parameter(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    np.testing.assert_array_equal(embedding_forward([1, 0], table), [[0, 1, 0], [1, 0, 0]])


def test_embedding_backward_matches_finite_differences():
    rng = make_rng(3)
    table = Parameter(rng.normal(size=(5, 4)))
    emb = Embedding(table)
    idx = np.array([[2, 4, 2]])
    emb.forward(idx)
    emb.backward(np.ones((1, 3, 4)))
    numeric = numeric_grad(lambda: Embedding(table).forward(idx).sum(), table.value)
    np.testing.assert_allclose(table.grad, numeric, atol=1e-8)
    np.testing.assert_allclose(table.grad[2], 2.0)
    np.testing.assert_array_equal(table.grad[[0, 1, 3]], 0.0)


def test_embedding_out_of_range_is_configuration_error():
    with pytest.raises(ConfigurationError):
        embedding_forward([0, 2], Parameter(np.zeros((2, 3))))


def test_frozen_embedding_gets_no_gradient():
    table = Parameter(np.ones((3, 2)), trainable=False)
    emb = Embedding(table)
    emb.forward(np.array([[1, 2]]))
    emb.backward(np.ones((1, 2, 2)))
    assert not table.grad.any()


# -- convolution ---------------------------------------------------------------


def test_zero_kernel_gives_bias():
    x = make_rng(1).normal(size=(6, 3))
    out = temporal_conv_forward(x, Parameter(np.zeros((3, 3, 2))), Parameter(np.array([0.5, -1.0])))
    np.testing.assert_array_equal(out, np.tile([0.5, -1.0], (6, 1)))


def test_identity_convolution():
    x = make_rng(2).normal(size=(7, 4))
    out = temporal_conv_forward(x, Parameter(np.eye(4)[None]), Parameter(np.zeros(4)))
    np.testing.assert_array_equal(out, x)


def test_conv_matches_naive_oracle():
    rng = make_rng(4)
    x, w, b = rng.normal(size=(8, 5)), rng.normal(size=(3, 5, 4)), rng.normal(size=4)
    np.testing.assert_allclose(conv1d_same(x, w, b), naive_conv(x, w, b), rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    L=st.integers(1, 16),
    d=st.integers(1, 8),
    w=st.integers(1, 10),
    F=st.integers(1, 8),
    seed=st.integers(0, 2**32 - 1),
)
def test_conv_equivalence_property(L, d, w, F, seed):
    rng = make_rng(seed)
    x, W, b = rng.normal(size=(L, d)), rng.normal(size=(w, d, F)), rng.normal(size=F)
    np.testing.assert_allclose(conv1d_same(x, W, b), naive_conv(x, W, b), rtol=0, atol=1e-12)


@pytest.mark.parametrize("window", [1, 2, 3, 4, 7])
def test_conv_backward(window):
    rng = make_rng(window)
    x = rng.normal(size=(2, 6, 3))
    W = Parameter(rng.normal(size=(window, 3, 4)))
    b = Parameter(rng.normal(size=4))
    upstream = rng.normal(size=(2, 6, 4))
    conv = TemporalConv(W, b)
    conv.forward(x)
    dx = conv.backward(upstream)

    def f():
        return float((conv1d_same(x, W.value, b.value) * upstream).sum())

    np.testing.assert_allclose(dx, numeric_grad(f, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(W.grad, numeric_grad(f, W.value), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(b.grad, numeric_grad(f, b.value), rtol=1e-6, atol=1e-8)


def test_conv_dim_mismatch():
    with pytest.raises(ConfigurationError):
        conv1d_same(np.zeros((4, 3)), np.zeros((2, 5, 1)), np.zeros(1))


# -- pooling -------------------------------------------------------------------


def test_pool_constant_input():
    assert (max_over_time(np.full((5, 3), 2.5), 3) == 2.5).all()


def test_pool_excludes_padding():
    np.testing.assert_array_equal(max_over_time(np.array([[1.0, 5], [3, 2], [9, 9]]), 2), [3, 5])


def test_pool_rejects_empty():
    with pytest.raises(ValueError):
        max_over_time(np.zeros((3, 2)), 0)


def test_pool_padding_rows_do_not_matter():
    rng = make_rng(7)
    x = rng.normal(size=(10, 6))
    extended = np.vstack([x, rng.normal(size=(5, 6)) * 100])
    a, b = MaxOverTime(), MaxOverTime()
    np.testing.assert_array_equal(a.forward(x, 7), b.forward(extended, 7))
    g = rng.normal(size=6)
    np.testing.assert_array_equal(a.backward(g), b.backward(g)[:10])
    assert not b.backward(g)[7:].any()


def test_pool_gradient_goes_to_first_maximum():
    pool = MaxOverTime()
    pool.forward(np.array([[1.0], [4.0], [4.0]]), 3)
    np.testing.assert_array_equal(pool.backward(np.array([1.0])), [[0.0], [1.0], [0.0]])


@settings(max_examples=50, deadline=None)
@given(L=st.integers(1, 12), F=st.integers(1, 5), seed=st.integers(0, 2**32 - 1), extra=st.integers(0, 6))
def test_pool_padding_invariance_property(L, F, seed, extra):
    rng = make_rng(seed)
    x = rng.normal(size=(L, F))
    valid = int(rng.integers(1, L + 1))
    padded = np.vstack([x, rng.normal(size=(extra, F))])
    p1, p2 = MaxOverTime(), MaxOverTime()
    np.testing.assert_array_equal(p1.forward(x, valid), p2.forward(padded, valid))
    g = rng.normal(size=F)
    np.testing.assert_array_equal(p1.backward(g)[:valid], p2.backward(g)[:valid])


@settings(max_examples=50, deadline=None)
@given(L=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_pool_permutation_within_valid_positions(L, seed):
    rng = make_rng(seed)
    x = rng.normal(size=(L + 3, 4))
    perm = np.concatenate([rng.permutation(L), np.arange(L, L + 3)])
    np.testing.assert_array_equal(max_over_time(x, L), max_over_time(x[perm], L))


# -- dense / softmax / loss ----------------------------------------------------


def test_uniform_softmax():
    out = dense_forward(np.ones(3), Parameter(np.zeros((3, 4))), Parameter(np.zeros(4)), "softmax")
    np.testing.assert_allclose(out, 0.25, rtol=0, atol=1e-15)


def test_relu_clamp():
    out = dense_forward(np.array([-1.0, 2.0]), Parameter(np.eye(2)), Parameter(np.zeros(2)), "relu")
    np.testing.assert_array_equal(out, [0.0, 2.0])


def test_dense_matches_naive():
    rng = make_rng(5)
    x, W, b = rng.normal(size=6), rng.normal(size=(6, 3)), rng.normal(size=3)
    expected = [b[j] + sum(x[i] * W[i, j] for i in range(6)) for j in range(3)]
    np.testing.assert_allclose(dense_forward(x, Parameter(W), Parameter(b)), expected, rtol=0, atol=1e-12)


def test_dense_dim_mismatch():
    with pytest.raises(ConfigurationError):
        dense_forward(np.ones(4), Parameter(np.zeros((3, 2))), Parameter(np.zeros(2)))


@pytest.mark.parametrize("activation", ["none", "relu", "softmax"])
def test_dense_layer_gradcheck(activation):
    rng = make_rng(11)
    W, b = Parameter(rng.normal(size=(6, 3)), name="W"), Parameter(rng.normal(size=3), name="b")
    x = rng.normal(size=(4, 6))
    up = rng.normal(size=(4, 3))
    layer = Dense(W, b, activation)

    def objective():
        out = layer.forward(x)
        layer.backward(up)
        return float((out * up).sum())

    report = gradient_check(objective, [W, b])
    assert report.passed(1e-6), report


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50), C=st.integers(2, 12))
def test_softmax_normalisation_and_shift(seed, shift, C):
    z = make_rng(seed).normal(size=C) * 5
    p = softmax(z)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert ((p > 0) & (p < 1)).all()
    np.testing.assert_allclose(softmax(z + shift), p, rtol=0, atol=1e-9)


def test_cross_entropy_uniform():
    assert cross_entropy(np.full(4, 0.25), 2) == pytest.approx(np.log(4), abs=1e-15)
    assert cross_entropy(np.full(4, 0.25), 2) == pytest.approx(1.3863, abs=1e-4)


def test_cross_entropy_confident_correct():
    losses = [cross_entropy(np.array([1 - eps, eps / 2, eps / 2]), 0) for eps in (1e-2, 1e-4, 1e-8)]
    assert losses[0] > losses[1] > losses[2] > 0
    assert losses[2] < 1e-7


def test_softmax_cross_entropy_gradient():
    rng = make_rng(13)
    logits = rng.normal(size=(1, 5))
    gold = [3]
    sce = SoftmaxCrossEntropy()
    sce.forward(logits, gold)
    analytic = sce.backward()
    expected = softmax(logits[0]) - np.eye(5)[3]
    np.testing.assert_allclose(analytic[0], expected, atol=1e-15)
    numeric = numeric_grad(lambda: SoftmaxCrossEntropy().forward(logits, gold)[0], logits)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(abs(analytic), abs(numeric)), 1e-8)
    assert rel.max() < 1e-6


# -- optimisers ----------------------------------------------------------------


def test_zero_gradient_is_fixed_point():
    p = Parameter(np.array([1.0, -2.0]))
    before = p.value.copy()
    Adam([p]).step()
    np.testing.assert_array_equal(p.value, before)


def test_sgd_one_step():
    p = Parameter(np.array([1.0]))
    p.grad[:] = 2.0
    SGD([p], learning_rate=0.1).step()
    assert p.value[0] == pytest.approx(0.8, abs=1e-15)
    assert p.grad[0] == 0.0


def _quadratic(opt_cls, steps, **kw):
    p = Parameter(np.array([0.0]))
    opt = opt_cls([p], **kw)
    for _ in range(steps):
        p.grad[:] = 2 * (p.value - 3.0)
        opt.step()
    return p.value[0]


def test_default_adam_displacement_is_bounded_by_step_size():
    # each Adam step moves a parameter by about learning_rate at most
    x = _quadratic(Adam, 100)
    assert 0.09 < x <= 100 * 1e-3 + 1e-9


def test_convex_quadratic_convergence():
    assert abs(_quadratic(SGD, 100, learning_rate=0.1) - 3.0) < 0.01
    assert abs(_quadratic(Adam, 300, learning_rate=0.1) - 3.0) < 0.01


def test_frozen_parameter_bit_identical_after_steps():
    frozen = Parameter(make_rng(1).normal(size=(3, 3)), trainable=False)
    live = Parameter(np.zeros(3))
    before = frozen.value.tobytes()
    opt = Adam([frozen, live])
    for _ in range(5):
        frozen.accumulate(np.ones((3, 3)))
        live.grad[:] = 1.0
        opt.step()
    assert frozen.value.tobytes() == before
    assert (live.value != 0).all()


def test_non_finite_gradient_aborts():
    p = Parameter(np.zeros(2), name="w")
    p.grad[:] = [np.nan, 1.0]
    with pytest.raises(NonFiniteError, match="w"):
        Adam([p]).step()


def test_rng_streams_are_reproducible():
    a = make_rng(42, 1).random(5)
    np.testing.assert_array_equal(a, make_rng(42, 1).random(5))
    assert not np.array_equal(a, make_rng(42, 2).random(5))
    with pytest.raises(ConfigurationError):
        make_rng(-1)


def test_gradient_check_reports_frozen():
    frozen = Parameter(np.ones(2), trainable=False, name="frozen")
    w = Parameter(np.array([0.3, -0.2]), name="w")

    def objective():
        val = float((frozen.value * w.value**2).sum())
        w.accumulate(2 * frozen.value * w.value)
        frozen.accumulate(w.value**2)
        return val

    report = gradient_check(objective, [frozen, w])
    assert report.frozen == ["frozen"]
    assert "frozen" not in report.max_relative_error
    assert report.passed(1e-6)
    assert not frozen.grad.any()


def test_gradient_check_skips_elements_at_kinks():
    x = Parameter(np.array([3e-6, 0.5]), name="x")
    layer_out = {}

    def objective():
        out = np.maximum(x.value, 0.0)
        layer_out["active"] = out > 0
        x.accumulate((out > 0).astype(float))
        return float(out.sum())

    naive = gradient_check(objective, [x])
    assert not naive.passed(1e-6)  # the step straddles the ReLU hinge
    aware = gradient_check(objective, [x], pattern=lambda: layer_out["active"].tobytes())
    assert aware.passed(1e-6)
    assert (aware.skipped_at_kinks, aware.elements_checked) == (1, 1)


def test_kink_skipping_does_not_hide_wrong_gradients():
    x = Parameter(np.array([0.7, -0.4]), name="x")

    def objective():
        x.accumulate(3.0 * x.value)  # true gradient is 2x
        return float((x.value**2).sum())

    report = gradient_check(objective, [x], pattern=lambda: b"smooth")
    assert report.skipped_at_kinks == 0
    assert not report.passed(1e-2)
