"""CRT-Net building blocks.

Every layer works on arrays shaped (..., T, C): a single example is (T, C)
and a batch is (B, T, C). Convolution, max-pooling and the GRU sequence are
fused ops with hand-written backward passes; the single GRU step, attention,
layer norm and the encoder are composed from autograd primitives, so the
step gives an independent route to check the fused sequence against.
"""

from __future__ import annotations

import numpy as np

from ..errors import EcgraphError, ShapeMismatch
from . import autograd as ag
from .autograd import Tensor, as_tensor, make


class OddModelDim(EcgraphError, ValueError):
    pass


GRU_GATES = ("z", "r", "h")


# -- convolution block ---------------------------------------------------------

def conv1d(x, w, b) -> Tensor:
    """Stride-1 length-preserving convolution.

    Args:
        x: input (..., T, C_in).
        w: kernel (K, C_in, C_out).
        b: bias (C_out,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k, c_in, c_out = w.shape
    t = x.shape[-2]
    if x.shape[-1] != c_in:
        raise ShapeMismatch(f"conv1d expects {c_in} input channels, got {x.shape[-1]}")
    if t < k:
        raise ShapeMismatch(f"conv1d needs length >= kernel size {k}, got {t}")
    left = (k - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[-2] = (left, k - 1 - left)
    xp = np.pad(x.data, pad)
    cols = np.concatenate([xp[..., j:j + t, :] for j in range(k)], axis=-1)  # (..., T, K*C_in)
    wm = w.data.reshape(k * c_in, c_out)

    def back(out):
        g = out.grad
        if w.requires_grad:
            gw = cols.reshape(-1, k * c_in).T @ g.reshape(-1, c_out)
            w._accum(gw.reshape(w.shape))
        if b.requires_grad:
            b._accum(g.reshape(-1, c_out).sum(axis=0))
        if x.requires_grad:
            gcols = g @ wm.T
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + t, :] += gcols[..., j * c_in:(j + 1) * c_in]
            x._accum(gxp[..., left:left + t, :])
    return make(cols @ wm + b.data, (x, w, b), back)


def maxpool1d(x, size: int = 2) -> Tensor:
    """Non-overlapping max-pool along time; output length floor(T / size)."""
    x = as_tensor(x)
    t, c = x.shape[-2], x.shape[-1]
    n = t // size
    if n < 1:
        raise ShapeMismatch(f"cannot pool length {t} by {size}")
    lead = x.shape[:-2]
    win = x.data[..., :n * size, :].reshape(*lead, n, size, c)
    idx = np.argmax(win, axis=-2)[..., None, :]
    y = np.take_along_axis(win, idx, axis=-2)[..., 0, :]

    def back(out):
        g = np.zeros_like(win)
        np.put_along_axis(g, idx, out.grad[..., None, :], axis=-2)
        full = np.zeros_like(x.data)
        full[..., :n * size, :] = g.reshape(*lead, n * size, c)
        x._accum(full)
    return make(y, (x,), back)


def conv_block_forward(x, params: dict, prefix: str = "", pool_size: int = 2,
                       slope: float = 0.01) -> Tensor:
    """conv -> leaky-ReLU -> conv -> leaky-ReLU -> max-pool."""
    h = ag.leaky_relu(conv1d(x, params[prefix + "w1"], params[prefix + "b1"]), slope)
    h = ag.leaky_relu(conv1d(h, params[prefix + "w2"], params[prefix + "b2"]), slope)
    return maxpool1d(h, pool_size)


# -- bidirectional GRU ---------------------------------------------------------

def _check_gru(p: dict, width: int) -> int:
    hidden = np.shape(p["U_z"])[0]
    for g in GRU_GATES:
        if np.shape(p["W_" + g]) != (width, hidden) or np.shape(p["U_" + g]) != (hidden, hidden) \
                or np.shape(p["b_" + g]) != (hidden,):
            raise ShapeMismatch(f"GRU gate {g} parameters do not fit width {width}, hidden {hidden}")
    return hidden


def bigru_step(x_t, h_prev, p: dict) -> Tensor:
    """One GRU update, composed from autograd primitives.

    Row-vector convention: x_t is (..., width), h_prev is (..., hidden) and
    W_g is (width, hidden), so x_t @ W_g plays the role of W_g x_t.
    """
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    hidden = _check_gru({k: as_tensor(v).data for k, v in p.items()}, x_t.shape[-1])
    if h_prev.shape[-1] != hidden:
        raise ShapeMismatch(f"h_prev width {h_prev.shape[-1]} != hidden {hidden}")
    z = ag.sigmoid(x_t @ p["W_z"] + h_prev @ p["U_z"] + p["b_z"])
    r = ag.sigmoid(x_t @ p["W_r"] + h_prev @ p["U_r"] + p["b_r"])
    h_tilde = ag.tanh(x_t @ p["W_h"] + (h_prev * r) @ p["U_h"] + p["b_h"])
    return (1.0 - z) * h_prev + z * h_tilde


def gru_sequence(xs, p: dict, reverse: bool = False) -> Tensor:
    """Run one GRU direction over (..., T, width) from a zero state.

    Fused op: the forward pass caches the gates and the backward pass is
    backpropagation through time written out by hand.
    """
    xs = as_tensor(xs)
    t_len, width = xs.shape[-2], xs.shape[-1]
    if t_len < 1:
        raise ShapeMismatch("GRU sequence needs T >= 1")
    pt = {k: as_tensor(v) for k, v in p.items()}
    hidden = _check_gru({k: v.data for k, v in pt.items()}, width)
    W = np.concatenate([pt["W_" + g].data for g in GRU_GATES], axis=1)  # (width, 3H)
    bias = np.concatenate([pt["b_" + g].data for g in GRU_GATES])
    Uzr = np.concatenate([pt["U_z"].data, pt["U_r"].data], axis=1)  # (H, 2H)
    Uh = pt["U_h"].data
    proj = xs.data @ W + bias  # (..., T, 3H)
    lead = xs.shape[:-2]
    order = list(range(t_len - 1, -1, -1)) if reverse else list(range(t_len))

    dt = xs.data.dtype
    # per-step caches, indexed by processing step (not by time)
    H_prev = np.zeros((t_len,) + lead + (hidden,), dtype=dt)
    ZR = np.zeros((t_len,) + lead + (2 * hidden,), dtype=dt)
    HT = np.zeros_like(H_prev)
    out = np.zeros(lead + (t_len, hidden), dtype=dt)
    h = np.zeros(lead + (hidden,), dtype=dt)
    for s, t in enumerate(order):
        a = proj[..., t, :]
        zr = ag._sigmoid(a[..., :2 * hidden] + h @ Uzr)
        ht = np.tanh(a[..., 2 * hidden:] + (h * zr[..., hidden:]) @ Uh)
        H_prev[s], ZR[s], HT[s] = h, zr, ht
        z = zr[..., :hidden]
        h = h + z * (ht - h)
        out[..., t, :] = h

    def back(res):
        g_out = res.grad
        D = np.zeros((t_len,) + lead + (3 * hidden,), dtype=dt)  # d(pre-activations) per step
        dh = np.zeros(lead + (hidden,), dtype=dt)
        UzrT, UhT = Uzr.T, Uh.T
        for s in range(t_len - 1, -1, -1):
            t = order[s]
            h_prev, zr, ht = H_prev[s], ZR[s], HT[s]
            z, r = zr[..., :hidden], zr[..., hidden:]
            dh = dh + g_out[..., t, :]
            da_h = dh * z * (1.0 - ht * ht)
            d_hr = da_h @ UhT
            d = D[s]
            d[..., :hidden] = dh * (ht - h_prev) * z * (1.0 - z)
            d[..., hidden:2 * hidden] = d_hr * h_prev * r * (1.0 - r)
            d[..., 2 * hidden:] = da_h
            dh = dh * (1.0 - z) + d_hr * r + d[..., :2 * hidden] @ UzrT
        Hf = H_prev.reshape(-1, hidden)
        Df = D.reshape(-1, 3 * hidden)
        HRf = (H_prev * ZR[..., hidden:]).reshape(-1, hidden)
        g_Uzr = Hf.T @ Df[:, :2 * hidden]
        g_U = {"z": g_Uzr[:, :hidden], "r": g_Uzr[:, hidden:], "h": HRf.T @ Df[:, 2 * hidden:]}
        g_proj = np.zeros_like(proj)
        g_proj[..., order, :] = np.moveaxis(D, 0, -2)
        flat_proj = g_proj.reshape(-1, 3 * hidden)
        g_W = xs.data.reshape(-1, width).T @ flat_proj
        g_b = flat_proj.sum(axis=0)
        for i, g in enumerate(GRU_GATES):
            if pt["W_" + g].requires_grad:
                pt["W_" + g]._accum(g_W[:, i * hidden:(i + 1) * hidden])
            if pt["b_" + g].requires_grad:
                pt["b_" + g]._accum(g_b[i * hidden:(i + 1) * hidden])
            if pt["U_" + g].requires_grad:
                pt["U_" + g]._accum(g_U[g])
        if xs.requires_grad:
            xs._accum(g_proj @ W.T)

    parents = (xs,) + tuple(pt[k] for k in sorted(pt))
    return make(out, parents, back)


def bigru_sequence(xs, fwd: dict, bwd: dict) -> Tensor:
    """Concatenate a left-to-right and a right-to-left GRU pass per step."""
    return ag.concat([gru_sequence(xs, fwd), gru_sequence(xs, bwd, reverse=True)], axis=-1)


def bigru_sequence_stepwise(xs, fwd: dict, bwd: dict) -> Tensor:
    """Same as `bigru_sequence` but unrolled from `bigru_step` primitives."""
    xs = as_tensor(xs)
    t_len = xs.shape[-2]
    lead = xs.shape[:-2]

    def run(p, steps):
        hidden = np.shape(as_tensor(p["U_z"]).data)[0]
        h = Tensor(np.zeros(lead + (hidden,), dtype=xs.data.dtype))
        outs = {}
        for t in steps:
            h = bigru_step(xs[..., t, :], h, p)
            outs[t] = h
        return [ag.reshape(outs[t], lead + (1, hidden)) for t in range(t_len)]

    f = ag.concat(run(fwd, range(t_len)), axis=-2)
    b = ag.concat(run(bwd, range(t_len - 1, -1, -1)), axis=-2)
    return ag.concat([f, b], axis=-1)


# -- transformer encoder -------------------------------------------------------

def positional_encoding(t_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd columns."""
    if d_model % 2:
        raise OddModelDim(f"d_model must be even, got {d_model}")
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((t_len, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def scaled_dot_attention(q, k, v, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes."""
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention shapes Q{q.shape} K{k.shape} V{v.shape} do not match")
    scores = (q @ ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    weights = ag.softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def multi_head_attention(x, p: dict, prefix: str = "") -> Tensor:
    """Per-head projections W_q, W_k, W_v of shape (heads, d_model, d_k),
    heads concatenated, then output projection W_o (d_model, d_model) + b_o."""
    x = as_tensor(x)
    wq = as_tensor(p[prefix + "W_q"])
    n_heads, d_model, d_k = wq.shape
    if x.shape[-1] != d_model or n_heads * d_k != d_model:
        raise ShapeMismatch(f"attention params ({n_heads}x{d_model}x{d_k}) do not fit input {x.shape}")
    xh = ag.reshape(x, x.shape[:-2] + (1,) + x.shape[-2:])  # (..., 1, T, d)
    q = xh @ wq
    k = xh @ p[prefix + "W_k"]
    v = xh @ p[prefix + "W_v"]
    heads = scaled_dot_attention(q, k, v)  # (..., h, T, d_k)
    lead = x.shape[:-2]
    nd = len(lead)
    axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    cat = ag.reshape(ag.transpose(heads, axes), lead + (x.shape[-2], d_model))
    return cat @ p[prefix + "W_o"] + p[prefix + "b_o"]


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    centred = x - ag.mean(x, axis=-1, keepdims=True)
    var = ag.mean(centred * centred, axis=-1, keepdims=True)
    return centred * ag.power(var + eps, -0.5) * gamma + beta


def feed_forward(x, p: dict, prefix: str = "") -> Tensor:
    h = ag.relu(as_tensor(x) @ p[prefix + "ff_W1"] + p[prefix + "ff_b1"])
    return h @ p[prefix + "ff_W2"] + p[prefix + "ff_b2"]


def transformer_encoder(x, p: dict, prefix: str = "") -> Tensor:
    """Post-norm encoder: attention, add & norm, feed-forward, add & norm.

    Positional encoding is not added here; the model adds it once before the
    first encoder.
    """
    x = as_tensor(x)
    a = multi_head_attention(x, p, prefix)
    x = layer_norm(x + a, p[prefix + "ln1_g"], p[prefix + "ln1_b"])
    f = feed_forward(x, p, prefix)
    return layer_norm(x + f, p[prefix + "ln2_g"], p[prefix + "ln2_b"])


# -- head ----------------------------------------------------------------------

def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity in eval mode or at rate 0."""
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return x * keep


def dense(x, w, b) -> Tensor:
    return as_tensor(x) @ w + b
