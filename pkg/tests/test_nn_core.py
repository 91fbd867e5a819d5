import math

import numpy as np
import pytest

from astsum import nn_core as nn
from astsum.errors import AllPadError, EmptyRowError, NonFiniteError, NonFiniteGradientError, ShapeError


def dense_attention(Q, K, V, bias=None):
    z = Q @ K.T / math.sqrt(Q.shape[1])
    if bias is not None:
        z = z + bias
    w = np.exp(z - z.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return w @ V


# -- attention ----------------------------------------------------------------


def test_single_key_returns_value():
    V = np.array([[0.3, -2.0, 5.0]])
    out = nn.masked_attention(np.ones((1, 3)), np.ones((1, 3)), V, np.array([[True]]), np.zeros((1, 1)))
    assert np.array_equal(out.data, V)


def test_all_true_mask_matches_dense():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n, m, d = rng.integers(1, 17, size=3)
        Q, K, V = rng.normal(size=(n, d)), rng.normal(size=(m, d)), rng.normal(size=(m, d))
        bias = rng.normal(size=(n, m))
        out = nn.masked_attention(Q, K, V, np.ones((n, m), dtype=bool), bias)
        assert np.abs(out.data - dense_attention(Q, K, V, bias)).max() <= 1e-12


def test_singleton_row_copies_value_exactly():
    Q = np.array([[1.0, 2.0], [0.0, -1.0]])
    K = np.array([[3.0, 1.0], [2.0, 2.0]])
    V = np.array([[4.0, -7.0], [1.0, 9.0]])
    out = nn.masked_attention(Q, K, V, np.array([[True, False], [True, True]]))
    assert np.array_equal(out.data[0], V[0])


def test_weights_rows_and_zeros():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        allow = rng.random((n, n)) < 0.4
        np.fill_diagonal(allow, True)
        Q, K, V = (rng.normal(size=(n, 4)) * 3 for _ in range(3))
        _, w = nn.masked_attention(Q, K, V, allow, rng.normal(size=(n, n)), return_weights=True)
        assert np.abs(w.data.sum(axis=1) - 1).max() <= 1e-12
        assert (w.data[~allow] == 0.0).all()


def test_attention_errors():
    with pytest.raises(EmptyRowError):
        nn.masked_attention(np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), np.array([[True, False], [False, False]]))
    with pytest.raises(ShapeError):
        nn.masked_attention(np.ones((2, 3)), np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2), dtype=bool))
    with pytest.raises(ShapeError):
        nn.masked_attention(np.ones((2, 2)), np.ones((3, 2)), np.ones((3, 2)), np.ones((2, 2), dtype=bool))


# -- feed forward / layer norm ---------------------------------------------------


def test_feed_forward_zero_and_relu():
    x = np.random.default_rng(0).normal(size=(3, 4))
    out = nn.feed_forward(x, np.zeros((4, 6)), np.zeros(6), np.zeros((6, 4)), np.zeros(4))
    assert (out.data == 0).all()
    one = np.ones((1, 1))
    assert nn.feed_forward(np.array([[-3.0]]), one, np.zeros(1), one, np.zeros(1)).data[0, 0] == 0.0


def test_feed_forward_scalar_reference():
    rng = np.random.default_rng(4)
    x, W1, b1, W2, b2 = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=(2, 2)), rng.normal(size=2)
    ref = np.zeros((2, 2))
    for r in range(2):
        hidden = [max(0.0, sum(x[r, i] * W1[i, k] for i in range(2)) + b1[k]) for k in range(2)]
        for c in range(2):
            ref[r, c] = sum(hidden[k] * W2[k, c] for k in range(2)) + b2[c]
    assert np.allclose(nn.feed_forward(x, W1, b1, W2, b2).data, ref, atol=1e-14)
    with pytest.raises(ShapeError):
        nn.feed_forward(x, np.ones((3, 2)), b1, W2, b2)


def test_layer_norm_values():
    out = nn.layer_norm(np.full((1, 5), 3.7), np.ones(5), np.zeros(5))
    assert np.abs(out.data).max() == 0.0
    out = nn.layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2))
    s = 1 / math.sqrt(1 + 1e-5)
    assert np.allclose(out.data, [[s, -s]], atol=1e-15)
    beta = np.array([0.5, -2.0, 1.0])
    out = nn.layer_norm(np.random.default_rng(0).normal(size=(4, 3)), np.zeros(3), beta)
    assert np.array_equal(out.data, np.broadcast_to(beta, (4, 3)))
    with pytest.raises(ShapeError):
        nn.layer_norm(np.ones((2, 3)), np.ones(2), np.zeros(2))


# -- cross entropy --------------------------------------------------------------


def test_cross_entropy_uniform():
    loss, count = nn.cross_entropy(np.zeros((3, 7)), [1, 2, 3], pad_id=0)
    assert count == 3 and loss.item() == pytest.approx(math.log(7), abs=1e-12)


def test_cross_entropy_confident():
    logits = np.zeros((2, 5))
    logits[0, 3] = logits[1, 1] = 1000.0
    loss, _ = nn.cross_entropy(logits, [3, 1], pad_id=0)
    assert loss.item() <= 1e-9


def test_cross_entropy_scalar_reference():
    logits = np.array([[0.5, -1.0, 2.0], [1.5, 0.1, -0.3]])
    targets = [2, 0]
    ref = 0.0
    for row, t in zip(logits, targets):
        ref += -(row[t] - math.log(sum(math.exp(v) for v in row)))
    loss, count = nn.cross_entropy(logits, targets, pad_id=-1)
    assert count == 2 and loss.item() == pytest.approx(ref / 2, abs=1e-14)


def test_cross_entropy_padding():
    logits = np.random.default_rng(0).normal(size=(4, 6))
    full, _ = nn.cross_entropy(logits[:2], [3, 4], pad_id=0)
    padded, count = nn.cross_entropy(logits, [3, 4, 0, 0], pad_id=0)
    assert count == 2 and padded.item() == pytest.approx(full.item(), abs=1e-15)
    with pytest.raises(AllPadError):
        nn.cross_entropy(logits, [0, 0, 0, 0], pad_id=0)


# -- optimizer ------------------------------------------------------------------


def test_adam_zero_gradient():
    ps = nn.ParamStore({"w": np.array([1.0, -2.0])})
    nn.adam_step(ps, lr=0.1, t=1)
    assert np.array_equal(ps["w"], [1.0, -2.0])


def test_adam_first_step_size():
    ps = nn.ParamStore({"w": np.array([0.0])})
    ps.grads["w"][...] = 3.0
    nn.adam_step(ps, lr=0.01, t=1)
    # bias correction makes m_hat/sqrt(v_hat) = g/|g|
    assert ps["w"][0] == pytest.approx(-0.01, rel=1e-6)
    assert ps.step == 1


def test_adam_rejects_nonfinite():
    ps = nn.ParamStore({"w": np.zeros(2)})
    ps.grads["w"][0] = np.nan
    with pytest.raises(NonFiniteGradientError):
        nn.adam_step(ps, 0.1)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(9)
        ps = nn.ParamStore({"w": rng.normal(size=(3, 3))})
        for _ in range(5):
            ps.grads["w"][...] = rng.normal(size=(3, 3))
            nn.adam_step(ps, 1e-2)
        return ps["w"].copy()

    assert run().tobytes() == run().tobytes()


# -- gradient checking ------------------------------------------------------------


def test_grad_check_quadratic():
    ps = nn.ParamStore({"theta": np.random.default_rng(0).normal(size=(4, 3))})

    def f(store):
        t = store.leaf("theta")
        return nn.sum_all(nn.mul(t, t))

    assert nn.grad_check(f, ps) <= 1e-9


def test_grad_check_linear_softmax():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 4))
    y = rng.integers(0, 3, size=5)
    ps = nn.ParamStore({"W": rng.normal(size=(4, 3)), "b": rng.normal(size=3)})

    def f(store):
        logits = nn.add(nn.matmul(x, store.leaf("W")), store.leaf("b"))
        return nn.cross_entropy(logits, y, pad_id=-1)[0]

    assert nn.grad_check(f, ps) <= 1e-6


def test_grad_check_attention_block():
    rng = np.random.default_rng(2)
    n, d = 4, 6
    x = rng.normal(size=(n, d))
    allow = np.tril(np.ones((n, n), dtype=bool))
    ps = nn.ParamStore({"wq": rng.normal(size=(d, d)), "wk": rng.normal(size=(d, d)), "wv": rng.normal(size=(d, d)),
                        "g": 1 + 0.1 * rng.normal(size=d), "b": rng.normal(size=d), "bias": rng.normal(size=(n, n))})

    def f(s):
        att = nn.masked_attention(nn.matmul(x, s.leaf("wq")), nn.matmul(x, s.leaf("wk")),
                                  nn.matmul(x, s.leaf("wv")), allow, s.leaf("bias"))
        out = nn.layer_norm(nn.add(x, att), s.leaf("g"), s.leaf("b"))
        return nn.sum_all(nn.mul(out, out))

    assert nn.grad_check(f, ps) <= 1e-6


def test_grad_check_nonfinite():
    ps = nn.ParamStore({"w": np.array([1.0])})
    with pytest.raises(NonFiniteError):
        nn.grad_check(lambda s: nn.Tensor(np.array(np.inf)) + nn.sum_all(s.leaf("w")), ps)


def test_dropout_seeded():
    x = np.ones((50, 8))
    a = nn.dropout(x, 0.5, np.random.default_rng(3)).data
    b = nn.dropout(x, 0.5, np.random.default_rng(3)).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    assert np.array_equal(nn.dropout(x, 0.0, None).data, x)
