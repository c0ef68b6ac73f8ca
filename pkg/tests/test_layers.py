import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ecgraph.crtnet import autograd as ag
from ecgraph.crtnet.autograd import Tensor
from ecgraph.crtnet.layers import (GRU_GATES, OddModelDim, bigru_sequence, bigru_sequence_stepwise,
                                   bigru_step, conv1d, conv_block_forward, dropout, layer_norm,
                                   maxpool1d, multi_head_attention, positional_encoding,
                                   scaled_dot_attention, transformer_encoder)
from ecgraph.errors import ShapeMismatch

finite = st.floats(-3, 3, allow_nan=False)


def gru_params(width, hidden, seed=0, scale=0.6, zero=False):
    rng = np.random.default_rng(seed)
    p = {}
    for g in GRU_GATES:
        p["W_" + g] = np.zeros((width, hidden)) if zero else rng.normal(0, scale, (width, hidden))
        p["U_" + g] = np.zeros((hidden, hidden)) if zero else rng.normal(0, scale, (hidden, hidden))
        p["b_" + g] = np.zeros(hidden) if zero else rng.normal(0, scale, hidden)
    return p


def encoder_params(d, heads, ff, seed=0):
    rng = np.random.default_rng(seed)
    dk = d // heads
    p = {name: rng.normal(0, 0.4, (heads, d, dk)) for name in ("W_q", "W_k", "W_v")}
    p.update(W_o=rng.normal(0, 0.4, (d, d)), b_o=rng.normal(0, 0.1, d),
             ln1_g=np.ones(d), ln1_b=np.zeros(d), ln2_g=np.ones(d), ln2_b=np.zeros(d),
             ff_W1=rng.normal(0, 0.4, (d, ff)), ff_b1=np.zeros(ff),
             ff_W2=rng.normal(0, 0.4, (ff, d)), ff_b2=np.zeros(d))
    return p


# -- convolution block -------------------------------------------------------

def conv_params(c_in, c_out, seed=0):
    rng = np.random.default_rng(seed)
    return {"w1": rng.normal(size=(3, c_in, c_out)), "b1": np.zeros(c_out),
            "w2": rng.normal(size=(3, c_out, c_out)), "b2": np.zeros(c_out)}


def test_conv_block_zero_input_gives_zero():
    out = conv_block_forward(np.zeros((16, 2)), conv_params(2, 5))
    assert out.shape == (8, 5)
    assert not out.data.any()


def identity_kernel():
    w = np.zeros((3, 1, 1))
    w[1, 0, 0] = 1.0
    return w


def test_identity_kernel_conv_is_identity():
    x = np.random.default_rng(1).normal(size=(12, 1))
    assert np.array_equal(conv1d(x, identity_kernel(), np.zeros(1)).data, x)


def test_identity_kernel_block_with_pool_one():
    x = np.random.default_rng(2).uniform(0, 1, size=(12, 1))
    p = {"w1": identity_kernel(), "b1": np.zeros(1), "w2": identity_kernel(), "b2": np.zeros(1)}
    assert np.array_equal(conv_block_forward(x, p, pool_size=1).data, x)


def test_conv_is_length_preserving_with_zero_padding():
    x = np.arange(5.0)[:, None]
    w = np.ones((3, 1, 1))
    assert conv1d(x, w, np.zeros(1)).data[:, 0].tolist() == [1.0, 3.0, 6.0, 9.0, 7.0]


def test_leaky_slope_applies_to_negatives():
    x = -np.ones((4, 1))
    p = {"w1": identity_kernel(), "b1": np.zeros(1), "w2": identity_kernel(), "b2": np.zeros(1)}
    assert np.allclose(conv_block_forward(x, p, pool_size=1).data, -1e-4)


def test_maxpool_floors_length_and_routes_gradient():
    x = Tensor(np.array([[1.0], [3.0], [2.0], [0.0], [9.0]]), requires_grad=True)
    y = maxpool1d(x, 2)
    assert y.data[:, 0].tolist() == [3.0, 2.0]
    y.sum().backward()
    assert x.grad[:, 0].tolist() == [0.0, 1.0, 1.0, 0.0, 0.0]


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        conv1d(np.zeros((2, 1)), np.zeros((3, 1, 1)), np.zeros(1))
    with pytest.raises(ShapeMismatch):
        conv1d(np.zeros((8, 2)), np.zeros((3, 1, 1)), np.zeros(1))


# -- GRU -----------------------------------------------------------------------

def test_gru_zero_params_halves_state():
    p = gru_params(1, 1, zero=True)
    assert bigru_step(np.zeros(1), np.array([1.0]), p).data.tolist() == [0.5]
    assert bigru_step(np.zeros(1), np.array([0.0]), p).data.tolist() == [0.0]


def test_gru_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        bigru_step(np.zeros(3), np.zeros(2), gru_params(4, 2))
    with pytest.raises(ShapeMismatch):
        bigru_step(np.zeros(4), np.zeros(3), gru_params(4, 2))


def _sig(v):
    return 1 / (1 + np.exp(-v))


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 2, elements=finite),
       st.integers(0, 1000))
def test_gru_update_is_convex(x, h, seed):
    p = gru_params(3, 2, seed)
    r = _sig(x @ p["W_r"] + h @ p["U_r"] + p["b_r"])
    h_tilde = np.tanh(x @ p["W_h"] + (h * r) @ p["U_h"] + p["b_h"])
    out = bigru_step(x, h, p).data
    lo, hi = np.minimum(h, h_tilde), np.maximum(h, h_tilde)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_bigru_single_step():
    x = np.random.default_rng(3).normal(size=(1, 3))
    fwd, bwd = gru_params(3, 2, 1), gru_params(3, 2, 2)
    out = bigru_sequence(x, fwd, bwd).data
    f = bigru_step(x[0], np.zeros(2), fwd).data
    b = bigru_step(x[0], np.zeros(2), bwd).data
    assert np.allclose(out[0], np.concatenate([f, b]), atol=1e-15)


@given(st.integers(1, 6), st.integers(0, 1000))
def test_bigru_palindrome_symmetry(half, seed):
    rng = np.random.default_rng(seed)
    first = rng.normal(size=(half, 3))
    xs = np.concatenate([first, first[::-1][1:]]) if seed % 2 else np.concatenate([first, first[::-1]])
    p = gru_params(3, 2, seed)
    out = bigru_sequence(xs, p, p).data
    t_len = xs.shape[0]
    for t in range(t_len):
        mirrored = out[t_len - 1 - t]
        assert np.allclose(out[t], np.concatenate([mirrored[2:], mirrored[:2]]), atol=1e-12)


@given(st.integers(1, 7), st.integers(0, 1000))
def test_fused_and_stepwise_bigru_agree(t_len, seed):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=(2, t_len, 3))
    fwd, bwd = gru_params(3, 2, seed), gru_params(3, 2, seed + 1)
    r = rng.normal(size=(2, t_len, 4))

    def run(fn):
        x = Tensor(xs, requires_grad=True)
        pf = {k: Tensor(v, requires_grad=True) for k, v in fwd.items()}
        pb = {k: Tensor(v, requires_grad=True) for k, v in bwd.items()}
        out = fn(x, pf, pb)
        (out * r).sum().backward()
        return out.data, x.grad, {k: t.grad for k, t in pf.items()}, {k: t.grad for k, t in pb.items()}

    a, b = run(bigru_sequence), run(bigru_sequence_stepwise)
    assert np.allclose(a[0], b[0], atol=1e-14)
    assert np.allclose(a[1], b[1], atol=1e-12)
    for k in fwd:
        assert np.allclose(a[2][k], b[2][k], atol=1e-12)
        assert np.allclose(a[3][k], b[3][k], atol=1e-12)


# -- positional encoding -------------------------------------------------------

def test_positional_encoding_first_row_alternates():
    assert positional_encoding(3, 8)[0].tolist() == [0.0, 1.0] * 4


def test_positional_encoding_two_dims():
    assert np.allclose(positional_encoding(2, 2)[1], [0.841471, 0.540302], atol=1e-6)


def test_positional_encoding_needs_even_width():
    with pytest.raises(OddModelDim):
        positional_encoding(4, 5)


@given(st.integers(1, 300), st.integers(1, 64))
def test_positional_encoding_bounded(t_len, half):
    pe = positional_encoding(t_len, 2 * half)
    assert pe.shape == (t_len, 2 * half)
    assert np.all(np.abs(pe) <= 1.0)


# -- attention -----------------------------------------------------------------

def test_attention_identity_case_by_hand():
    eye = np.eye(2)
    out, w = scaled_dot_attention(eye, eye, eye, return_weights=True)
    big, small = 0.669761, 0.330239
    assert np.allclose(w.data, [[big, small], [small, big]], atol=2e-6)
    assert np.allclose(out.data, [[big, small], [small, big]], atol=2e-6)


def test_attention_zero_queries_average_values():
    rng = np.random.default_rng(0)
    k, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    out = scaled_dot_attention(np.zeros((4, 3)), k, v).data
    assert np.allclose(out, np.tile(v.mean(axis=0), (4, 1)), atol=1e-15)


def test_attention_single_key_returns_value():
    v = np.array([[0.3, -2.0]])
    assert np.array_equal(scaled_dot_attention(np.array([[5.0, 1.0]]), np.ones((1, 2)), v).data, v)


def test_attention_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        scaled_dot_attention(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)))


@given(arrays(np.float64, (4, 3), elements=finite), arrays(np.float64, (6, 3), elements=finite))
def test_attention_weights_are_distributions(q, k):
    _, w = scaled_dot_attention(q, k, k, return_weights=True)
    assert np.all(w.data >= 0)
    assert np.allclose(w.data.sum(-1), 1.0, atol=1e-9)


def test_single_head_identity_projection_reduces_to_attention():
    x = np.random.default_rng(4).normal(size=(5, 4))
    eye = np.eye(4)[None]
    p = {"W_q": eye, "W_k": eye, "W_v": eye, "W_o": np.eye(4), "b_o": np.zeros(4)}
    assert np.allclose(multi_head_attention(x, p).data, scaled_dot_attention(x, x, x).data, atol=1e-15)


def test_zero_output_projection_gives_zero():
    p = encoder_params(8, 2, 16)
    p["W_o"], p["b_o"] = np.zeros((8, 8)), np.zeros(8)
    assert not multi_head_attention(np.ones((3, 8)), p).data.any()


def test_multi_head_shape_mismatch():
    p = encoder_params(8, 2, 16)
    with pytest.raises(ShapeMismatch):
        multi_head_attention(np.ones((3, 6)), p)


def test_heads_attend_independently():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 8))
    p = encoder_params(8, 2, 16, seed=5)
    p["W_o"], p["b_o"] = np.eye(8), np.zeros(8)
    out = multi_head_attention(x, p).data
    for h in range(2):
        ref = scaled_dot_attention(x @ p["W_q"][h], x @ p["W_k"][h], x @ p["W_v"][h]).data
        assert np.allclose(out[:, 4 * h:4 * (h + 1)], ref, atol=1e-14)


# -- encoder -------------------------------------------------------------------

@given(arrays(np.float64, (3, 6), elements=st.floats(-10, 10)))
def test_layer_norm_rows_are_standardised(x):
    x = x + np.arange(6) * 0.5
    out = layer_norm(x, np.ones(6), np.zeros(6)).data
    var = x.var(axis=-1)
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    assert np.allclose(out.var(axis=-1), var / (var + 1e-5), atol=1e-9)


def test_zero_feed_forward_leaves_residual_path():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(4, 8))
    p = encoder_params(8, 2, 16, seed=6)
    p["ff_W2"], p["ff_b2"] = np.zeros((16, 8)), np.zeros(8)
    a = multi_head_attention(x, p).data
    ln = layer_norm(x + a, p["ln1_g"], p["ln1_b"])
    expected = layer_norm(ln, p["ln2_g"], p["ln2_b"]).data
    assert np.allclose(transformer_encoder(x, p).data, expected, atol=1e-14)


def test_encoder_is_batch_consistent():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 4, 8))
    p = encoder_params(8, 2, 16, seed=7)
    batched = transformer_encoder(x, p).data
    for i in range(3):
        assert np.allclose(batched[i], transformer_encoder(x[i], p).data, atol=1e-13)


# -- dropout -------------------------------------------------------------------

def test_dropout_identity_in_eval_mode():
    x = Tensor(np.ones((4, 5)))
    assert dropout(x, 0.5, None, False) is x


def test_dropout_is_seeded_and_inverted():
    x = np.ones((200, 50))
    a = dropout(x, 0.2, np.random.default_rng(3), True).data
    b = dropout(x, 0.2, np.random.default_rng(3), True).data
    assert np.array_equal(a, b)
    assert set(np.unique(a).tolist()) == {0.0, 1.25}
    assert abs((a == 0).mean() - 0.2) < 0.01


def test_dropout_gradient_uses_the_same_mask():
    x = Tensor(np.ones((3, 3)), requires_grad=True)
    y = dropout(x, 0.5, np.random.default_rng(0), True)
    ag.tsum(y).backward()
    assert np.array_equal(x.grad, y.data)
