"""Op contracts: frozen example values, invariants, finite-difference checks."""

import numpy as np
import pytest
import scipy.special

from csplab.gradcore import (
    Tensor, Tape, GradError, add, attention_block, avg_pool1d, causal_mask,
    concat, conv1d, cross_entropy, cross_entropy_rows, embedding,
    finite_difference_check, layernorm, linear, matmul, mean_all, mul, relu,
    reshape, scale, slice_time, softmax, sqrt, clamp_min, sub, sum_all, tanh,
    split_heads, merge_heads, transpose_last2,
)
from csplab.gradcore.ops import causal_softmax


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(t([0.0, 0.0])).data, [0.5, 0.5])

    def test_shift_invariance(self, rng):
        x = rng.normal(size=12)
        a = softmax(t(x)).data
        b = softmax(t(x + 13.7)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_scalar_evaluation(self):
        # independent oracle: scipy's softmax
        got = softmax(t([1.0, 0.0, -1.0])).data
        np.testing.assert_allclose(got, [0.66524, 0.24473, 0.09003], atol=1e-5)
        np.testing.assert_allclose(got, scipy.special.softmax([1.0, 0.0, -1.0]),
                                   atol=1e-12)

    def test_sums_to_one_long(self, rng):
        x = rng.normal(size=4096) * 30
        assert abs(softmax(t(x)).data.sum() - 1.0) < 1e-9

    def test_errors(self):
        with pytest.raises(ValueError):
            softmax(t(np.zeros(0)))
        with pytest.raises(FloatingPointError):
            softmax(t([np.nan, 1.0]))


class TestLayernorm:
    def test_zero_variance(self):
        np.testing.assert_allclose(layernorm(t([5.0, 5.0, 5.0])).data,
                                   [0, 0, 0], atol=1e-6)

    def test_hand_two_point(self):
        got = layernorm(t([1.0, 3.0]), eps=1e-5).data
        np.testing.assert_allclose(got, [-1.0, 1.0], atol=1e-5)

    def test_centering_and_unit_variance(self, rng):
        x = rng.normal(size=(7, 33)) * 4 + 2
        y = layernorm(t(x)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0, atol=1e-9)
        np.testing.assert_allclose(y.var(axis=-1), 1, atol=1e-4)


class TestConv1d:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(2, 6, 3))
        w = np.zeros((1, 3, 3))
        w[0] = np.eye(3)
        y = conv1d(t(x), t(w), t(np.zeros(3)), 1, "same")
        np.testing.assert_allclose(y.data, x, atol=1e-12)

    def test_zero_input_gives_bias(self):
        b = np.array([0.3, -0.7])
        y = conv1d(t(np.zeros((1, 5, 2))), t(np.zeros((3, 2, 2))), t(b), 1, "same")
        np.testing.assert_allclose(y.data, np.broadcast_to(b, (1, 5, 2)), atol=1e-12)

    def test_hand_dot_product_valid(self):
        x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
        w = np.array([1.0, 0.0, -1.0]).reshape(3, 1, 1)
        y = conv1d(t(x), t(w), t(np.zeros(1)), 1, "valid")
        np.testing.assert_allclose(y.data, [[[-2.0]]], atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv1d(t(np.zeros((1, 5, 2))), t(np.zeros((3, 4, 2))), t(np.zeros(2)))

    def test_linear_in_input(self, rng):
        x1 = rng.normal(size=(1, 7, 2))
        x2 = rng.normal(size=(1, 7, 2))
        w = t(rng.normal(size=(5, 2, 3)))
        b = t(np.zeros(3))
        y12 = conv1d(t(x1 + 2 * x2), w, b, 1, "same").data
        y1 = conv1d(t(x1), w, b, 1, "same").data
        y2 = conv1d(t(x2), w, b, 1, "same").data
        np.testing.assert_allclose(y12, y1 + 2 * y2, atol=1e-10)


class TestCrossEntropy:
    def test_dominant_logit(self):
        assert float(cross_entropy(t([200.0, 0.0, 0.0]), 0).data) < 1e-12

    def test_uniform(self):
        val = float(cross_entropy(t(np.zeros(7)), 3).data)
        assert abs(val - np.log(7)) < 1e-12

    def test_scalar_example(self):
        val = float(cross_entropy(t([2.0, 0.0]), 0).data)
        assert abs(val - 0.12693) < 1e-5

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy(t([0.0, 1.0]), 2)


class TestAttention:
    def _params(self, rng, d):
        p = {k: t(rng.normal(size=(d, d)) * 0.4, grad=True)
             for k in ("wq", "wk", "wv", "wo")}
        p |= {k: t(rng.normal(size=d) * 0.1, grad=True)
              for k in ("bq", "bk", "bv", "bo")}
        p["ln_g"] = t(np.ones(d), grad=True)
        p["ln_b"] = t(np.zeros(d), grad=True)
        return p

    def test_single_token_attends_to_itself(self, rng):
        # with one token the attention weight is exactly 1, so the context
        # equals v and the block reduces to x + wo(v) + bo
        d = 6
        p = self._params(rng, d)
        x = rng.normal(size=(1, 1, d))
        out = attention_block(t(x), p, None, 2).data
        h = layernorm(t(x), 1e-5, p["ln_g"], p["ln_b"]).data
        v = h @ p["wv"].data + p["bv"].data
        expect = x + v @ p["wo"].data + p["bo"].data
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_causality_bitwise(self, rng):
        d = 8
        p = self._params(rng, d)
        x = rng.normal(size=(1, 5, d))
        y = rng.normal(size=(1, 5, d))
        y[:, :3] = x[:, :3]
        o1 = attention_block(t(x), p, None, 2).data
        o2 = attention_block(t(y), p, None, 2).data
        assert np.array_equal(o1[:, :3], o2[:, :3])

    def test_masked_and_causal_paths_agree(self, rng):
        d = 8
        p = self._params(rng, d)
        x = rng.normal(size=(2, 5, d))
        a = attention_block(t(x), p, None, 2).data
        b = attention_block(t(x), p, causal_mask(5), 2).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_head_divisibility_error(self, rng):
        with pytest.raises(ValueError):
            attention_block(t(rng.normal(size=(1, 2, 6))), self._params(rng, 6), None, 4)

    def test_two_token_scalar_oracle(self):
        # D=2, 1 head: replicate the block arithmetic with plain scalars
        d = 2
        x = np.array([[[0.5, -0.25], [1.0, 2.0]]])
        p = {
            "wq": t([[0.3, -0.1], [0.2, 0.4]], grad=True),
            "wk": t([[0.1, 0.6], [-0.3, 0.2]], grad=True),
            "wv": t([[0.7, 0.1], [0.0, -0.5]], grad=True),
            "wo": t([[0.2, 0.3], [-0.4, 0.1]], grad=True),
            "bq": t([0.01, -0.02]), "bk": t([0.0, 0.03]),
            "bv": t([0.1, 0.0]), "bo": t([0.0, 0.0]),
            "ln_g": t([1.0, 1.0]), "ln_b": t([0.0, 0.0]),
        }
        got = attention_block(t(x), p, None, 1).data[0]

        def ln_row(v):
            mu = v.mean()
            sd = np.sqrt(v.var() + 1e-5)
            return (v - mu) / sd

        h = np.stack([ln_row(x[0, 0]), ln_row(x[0, 1])])
        q = h @ p["wq"].data + p["bq"].data
        k = h @ p["wk"].data + p["bk"].data
        v = h @ p["wv"].data + p["bv"].data
        s10 = (q[1] @ k[0]) / np.sqrt(2)
        s11 = (q[1] @ k[1]) / np.sqrt(2)
        a1 = np.exp([s10, s11] - max(s10, s11))
        a1 /= a1.sum()
        ctx0 = v[0]
        ctx1 = a1[0] * v[0] + a1[1] * v[1]
        expect = x[0] + np.stack([ctx0, ctx1]) @ p["wo"].data + p["bo"].data
        np.testing.assert_allclose(got, expect, atol=1e-12)


class TestTapeAndGrads:
    def test_sum_gradient_is_ones(self, rng):
        x = t(rng.normal(size=(3, 4)), grad=True)
        with Tape() as tape:
            loss = sum_all(x)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_frozen_gradient_never_materialized(self, rng):
        x = t(rng.normal(size=(3, 4)), grad=True)
        w = t(rng.normal(size=(4, 2)))          # frozen
        with Tape() as tape:
            loss = sum_all(matmul(x, w))
            tape.backward(loss)
        assert x.grad is not None
        assert w._grad is None
        with pytest.raises(GradError):
            _ = w.grad

    def test_backward_requires_scalar(self, rng):
        x = t(rng.normal(size=3), grad=True)
        with Tape() as tape:
            y = mul(x, x)
        with pytest.raises(GradError):
            tape.backward(y)

    def test_loss_must_be_on_tape(self, rng):
        x = t(rng.normal(size=3), grad=True)
        with Tape() as tape:
            _ = mul(x, x)
        with Tape() as other:
            loss = sum_all(mul(x, x))
        with pytest.raises(GradError):
            tape.backward(loss)

    def test_deterministic_replay(self, rng):
        xs = rng.normal(size=(3, 5))

        def run():
            x = t(xs, grad=True)
            w = t(np.linspace(-1, 1, 10).reshape(5, 2), grad=True)
            with Tape() as tape:
                loss = cross_entropy_rows(matmul(tanh(x), w), [0, 1, 0])
                tape.backward(loss)
            return float(loss.data), np.array(x.grad), np.array(w.grad)

        l1, gx1, gw1 = run()
        l2, gx2, gw2 = run()
        assert l1 == l2
        assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


FD_CASES = {}


def _fd_case(name):
    def deco(fn):
        FD_CASES[name] = fn
        return fn
    return deco


@_fd_case("dense-chain")
def _case_dense(rng):
    x = t(rng.normal(size=(3, 6)), grad=True)
    w = t(rng.normal(size=(6, 5)), grad=True)
    b = t(rng.normal(size=5), grad=True)
    g = t(np.ones(6) + 0.1 * rng.normal(size=6), grad=True)
    bb = t(0.1 * rng.normal(size=6), grad=True)

    def loss():
        h = layernorm(x, 1e-5, g, bb)
        y = relu(linear(h, w, b))
        return cross_entropy_rows(softmax(y), [1, 2, 0])
    return loss, [x, w, b, g, bb]


@_fd_case("attention")
def _case_attention(rng):
    d = 8
    p = {k: t(rng.normal(size=(d, d)) * 0.3, grad=True) for k in ("wq", "wk", "wv", "wo")}
    p |= {k: t(rng.normal(size=d) * 0.1, grad=True) for k in ("bq", "bv", "bo")}
    p["bk"] = t(rng.normal(size=d) * 0.1)   # structurally zero gradient
    p["ln_g"] = t(np.ones(d), grad=True)
    p["ln_b"] = t(np.zeros(d), grad=True)
    x = t(rng.normal(size=(2, 4, d)), grad=True)
    c = rng.normal(size=(2, 4, d))

    def loss():
        return sum_all(mul(attention_block(x, p, None, 2), c))
    return loss, [x] + [v for v in p.values() if v.requires_grad]


@_fd_case("conv-pool")
def _case_conv(rng):
    x = t(rng.normal(size=(2, 7, 3)), grad=True)
    w = t(rng.normal(size=(5, 3, 4)) * 0.4, grad=True)
    b = t(rng.normal(size=4) * 0.1, grad=True)
    c = rng.normal(size=(2, 3, 4))

    def loss():
        y = avg_pool1d(relu(conv1d(x, w, b, 1, "same")), 2)
        return sum_all(mul(tanh(y), c))
    return loss, [x, w, b]


@_fd_case("asp-shapes")
def _case_asp(rng):
    from csplab.charprobe import asp_pool
    h = t(rng.normal(size=(2, 5, 4)), grad=True)
    w = t(rng.normal(size=(4, 3)), grad=True)
    b = t(rng.normal(size=3), grad=True)
    v = t(rng.normal(size=(3, 1)), grad=True)
    c = rng.normal(size=(2, 8))

    def loss():
        return sum_all(mul(asp_pool(h, {"w": w, "b": b, "v": v}), c))
    return loss, [h, w, b, v]


@_fd_case("embedding-mix")
def _case_embedding(rng):
    tab = t(rng.normal(size=(6, 4)), grad=True)
    ids = np.array([[0, 1, 2], [3, 4, 5]])
    c = rng.normal(size=(2, 2, 4))

    def loss():
        e = embedding(tab, ids)
        return sum_all(mul(slice_time(e, 1, 3), c))
    return loss, [tab]


@_fd_case("causal-softmax")
def _case_causal(rng):
    s = t(rng.normal(size=(2, 2, 4, 4)), grad=True)
    c = rng.normal(size=(2, 2, 4, 4))

    def loss():
        return sum_all(mul(causal_softmax(s), c))
    return loss, [s]


@pytest.mark.parametrize("case", sorted(FD_CASES))
@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_finite_difference(case, seed):
    loss_fn, params = FD_CASES[case](np.random.default_rng(seed * 100 + 7))
    assert finite_difference_check(loss_fn, params) <= 1e-4
