"""Central finite-difference checks for every registered op.

Each op maps (params, x) to an output tensor. The scalar probed is
sum(output * R) for a fixed random R, so every output entry contributes.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import EcgraphError
from . import autograd as ag
from . import layers as L
from .autograd import Tensor
from .model import ModelConfig, crtnet_forward, init_params, tiny_config


class UnknownOp(EcgraphError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown op"


OPS: dict[str, Callable] = {}


def register(name: str):
    def deco(fn):
        OPS[name] = fn
        return fn
    return deco


@register("linear")
def _linear(p, x, **_):
    return x @ p["W"] + p["b"]


@register("conv1d")
def _conv1d(p, x, **_):
    return L.conv1d(x, p["w"], p["b"])


@register("maxpool")
def _maxpool(p, x, pool_size=2, **_):
    return L.maxpool1d(x, pool_size)


@register("conv_block")
def _conv_block(p, x, pool_size=2, **_):
    return L.conv_block_forward(x, p, "", pool_size)


@register("gru_step")
def _gru_step(p, x, **_):
    return L.bigru_step(x, p["h_prev"], p)


@register("gru_sequence")
def _gru_sequence(p, x, reverse=False, **_):
    return L.gru_sequence(x, p, reverse)


@register("bigru")
def _bigru(p, x, **_):
    return L.bigru_sequence(x, {k[4:]: v for k, v in p.items() if k.startswith("fwd.")},
                            {k[4:]: v for k, v in p.items() if k.startswith("bwd.")})


@register("softmax")
def _softmax(p, x, **_):
    return ag.softmax(x, axis=-1)


@register("layer_norm")
def _layer_norm(p, x, **_):
    return L.layer_norm(x, p["g"], p["b"])


@register("attention")
def _attention(p, x, **_):
    return L.scaled_dot_attention(x, p["K"], p["V"])


@register("multi_head_attention")
def _mha(p, x, **_):
    return L.multi_head_attention(x, p)


@register("transformer_encoder")
def _encoder(p, x, **_):
    return L.transformer_encoder(x, p)


@register("crtnet")
def _crtnet(p, x, cfg: ModelConfig | None = None, mode="eval", seed=0, **_):
    cfg = cfg or tiny_config(input_length=x.shape[-2])
    return crtnet_forward(x, cfg, p, mode, np.random.default_rng(seed))


def _gru_params(rng, width, hidden, scale=0.5):
    p = {}
    for g in L.GRU_GATES:
        p["W_" + g] = rng.normal(0, scale, (width, hidden))
        p["U_" + g] = rng.normal(0, scale, (hidden, hidden))
        p["b_" + g] = rng.normal(0, scale, hidden)
    return p


def example_case(op_name: str, seed: int = 0) -> tuple[dict, np.ndarray, dict]:
    """Random 64-bit (params, input, op kwargs) suitable for `op_name`."""
    rng = np.random.default_rng(seed)
    if op_name == "linear":
        return {"W": rng.normal(size=(5, 3)), "b": rng.normal(size=3)}, rng.normal(size=(4, 5)), {}
    if op_name == "conv1d":
        return {"w": rng.normal(size=(3, 2, 3)), "b": rng.normal(size=3)}, rng.normal(size=(16, 2)), {}
    if op_name == "maxpool":
        return {}, rng.normal(size=(16, 3)), {}
    if op_name == "conv_block":
        p = {"w1": rng.normal(0, 0.5, (3, 2, 4)), "b1": rng.normal(0, 0.1, 4),
             "w2": rng.normal(0, 0.5, (3, 4, 4)), "b2": rng.normal(0, 0.1, 4)}
        return p, rng.normal(size=(16, 2)), {}
    if op_name == "gru_step":
        p = _gru_params(rng, 4, 4)
        p["h_prev"] = rng.uniform(-1, 1, 4)
        return p, rng.normal(size=4), {}
    if op_name == "gru_sequence":
        return _gru_params(rng, 3, 4), rng.normal(size=(5, 3)), {}
    if op_name == "bigru":
        p = {"fwd." + k: v for k, v in _gru_params(rng, 3, 4).items()}
        p.update({"bwd." + k: v for k, v in _gru_params(rng, 3, 4).items()})
        return p, rng.normal(size=(5, 3)), {}
    if op_name == "softmax":
        return {}, rng.normal(size=(3, 5)), {}
    if op_name == "layer_norm":
        return {"g": rng.normal(size=6), "b": rng.normal(size=6)}, rng.normal(size=(4, 6)), {}
    if op_name == "attention":
        return {"K": rng.normal(size=(5, 3)), "V": rng.normal(size=(5, 3))}, rng.normal(size=(5, 3)), {}
    if op_name in ("multi_head_attention", "transformer_encoder"):
        heads, d, t = (8, 16, 6) if op_name == "multi_head_attention" else (2, 8, 4)
        cfg = ModelConfig(gru_hidden=d // 2, n_heads=heads, ff_dim=2 * d, n_encoders=1)
        full = init_params(cfg, seed)
        p = {k[5:]: v for k, v in full.items() if k.startswith("enc0.")}
        for k in p:
            if k.endswith("_b") or k.startswith("b_") or "ff_b" in k:
                p[k] = rng.normal(0, 0.1, p[k].shape)
        return p, rng.normal(size=(t, d)), {}
    if op_name == "crtnet":
        cfg = tiny_config(input_length=16)
        return init_params(cfg, seed), rng.normal(size=(16, 1)), {"cfg": cfg}
    raise UnknownOp(f"unknown op {op_name!r}; registered: {sorted(OPS)}")


def _rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = np.linalg.norm(analytic) + np.linalg.norm(numeric)
    return 0.0 if den == 0.0 else float(num / den)


def grad_check(op_name: str, params: dict, input, epsilon: float = 1e-5,
               seed: int = 0, return_details: bool = False, **op_kwargs):
    """Worst relative error between analytic and central-difference gradients.

    The error for each block (every parameter array, then the input) is
    |g_analytic - g_numeric| / (|g_analytic| + |g_numeric|) in the Euclidean
    norm; the maximum over blocks is returned.
    """
    if op_name not in OPS:
        raise UnknownOp(f"unknown op {op_name!r}; registered: {sorted(OPS)}")
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    fn = OPS[op_name]
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    arrays["<input>"] = np.array(input, dtype=np.float64)

    def scalar(values: dict) -> float:
        x = Tensor(values["<input>"])
        p = {k: Tensor(v) for k, v in values.items() if k != "<input>"}
        return float(np.sum(fn(p, x, **op_kwargs).data * probe))

    x = Tensor(arrays["<input>"], requires_grad=True)
    p = {k: Tensor(v, requires_grad=True) for k, v in arrays.items() if k != "<input>"}
    out = fn(p, x, **op_kwargs)
    probe = np.random.default_rng(seed).normal(size=out.shape)
    (out * probe).sum().backward()
    leaves = dict(p, **{"<input>": x})

    details = {}
    for name, arr in arrays.items():
        analytic = leaves[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = scalar(arrays)
            flat[i] = orig - epsilon
            down = scalar(arrays)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * epsilon)
        details[name] = _rel_error(analytic, numeric)
    worst = max(details.values())
    return (worst, details) if return_details else worst
