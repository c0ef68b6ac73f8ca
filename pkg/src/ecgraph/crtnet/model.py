"""The CRT-Net classifier: CNN blocks, bidirectional GRU, transformer
encoders, dropout, mean over time and a two-layer softmax head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..errors import EcgraphError
from . import autograd as ag
from . import layers as L
from .autograd import Tensor


class ConfigShapeMismatch(EcgraphError, ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Hyper-parameters. `d_model` is always 2 x `gru_hidden`."""

    n_cnn_blocks: int = 1
    conv_channels: int = 128
    kernel_size: int = 3
    pool_size: int = 2
    gru_hidden: int = 64
    n_encoders: int = 4
    n_heads: int = 8
    ff_dim: int | None = None
    fc_hidden: int = 64
    dropout_rate: float = 0.2
    n_classes: int = 5
    input_length: int = 200
    input_leads: int = 1
    leaky_slope: float = 0.01

    def __post_init__(self):
        counts = ("n_cnn_blocks", "conv_channels", "kernel_size", "pool_size", "gru_hidden",
                  "n_encoders", "n_heads", "fc_hidden", "n_classes", "input_length", "input_leads")
        for name in counts:
            if int(getattr(self, name)) < 1:
                raise ConfigShapeMismatch(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.ff_dim is not None and self.ff_dim < 1:
            raise ConfigShapeMismatch(f"ff_dim must be >= 1, got {self.ff_dim}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigShapeMismatch(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.d_model % self.n_heads:
            raise ConfigShapeMismatch(f"d_model {self.d_model} is not divisible by {self.n_heads} heads")

    @property
    def d_model(self) -> int:
        return 2 * self.gru_hidden

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ffn_dim(self) -> int:
        return self.ff_dim if self.ff_dim is not None else 4 * self.d_model

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def sequence_length(self, input_length: int | None = None) -> int:
        """Length after the CNN blocks (each pools by floor division)."""
        t = self.input_length if input_length is None else input_length
        for _ in range(self.n_cnn_blocks):
            if t < self.kernel_size or t // self.pool_size < 1:
                raise ConfigShapeMismatch(
                    f"input length {input_length or self.input_length} is too short for "
                    f"{self.n_cnn_blocks} CNN blocks")
            t //= self.pool_size
        return t


def tiny_config(**overrides) -> ModelConfig:
    """A small configuration for tests and quick training runs."""
    base = dict(n_cnn_blocks=1, conv_channels=8, gru_hidden=4, n_encoders=1, n_heads=2,
                ff_dim=16, fc_hidden=8, n_classes=2, input_length=16, input_leads=1)
    base.update(overrides)
    return ModelConfig(**base)


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> dict[str, np.ndarray]:
    """Seeded Glorot-uniform weights, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    k, ch = cfg.kernel_size, cfg.conv_channels
    c_in = cfg.input_leads
    for i in range(cfg.n_cnn_blocks):
        pre = f"cnn{i}."
        p[pre + "w1"] = _glorot(rng, (k, c_in, ch), k * c_in, k * ch)
        p[pre + "b1"] = np.zeros(ch)
        p[pre + "w2"] = _glorot(rng, (k, ch, ch), k * ch, k * ch)
        p[pre + "b2"] = np.zeros(ch)
        c_in = ch
    hid = cfg.gru_hidden
    for direction in ("fwd", "bwd"):
        pre = f"gru.{direction}."
        for g in L.GRU_GATES:
            p[pre + "W_" + g] = _glorot(rng, (c_in, hid), c_in, hid)
            p[pre + "U_" + g] = _glorot(rng, (hid, hid), hid, hid)
            p[pre + "b_" + g] = np.zeros(hid)
    d, h, dk = cfg.d_model, cfg.n_heads, cfg.d_k
    for j in range(cfg.n_encoders):
        pre = f"enc{j}."
        for name in ("W_q", "W_k", "W_v"):
            p[pre + name] = _glorot(rng, (h, d, dk), d, dk)
        p[pre + "W_o"] = _glorot(rng, (d, d), d, d)
        p[pre + "b_o"] = np.zeros(d)
        p[pre + "ln1_g"], p[pre + "ln1_b"] = np.ones(d), np.zeros(d)
        p[pre + "ff_W1"] = _glorot(rng, (d, cfg.ffn_dim), d, cfg.ffn_dim)
        p[pre + "ff_b1"] = np.zeros(cfg.ffn_dim)
        p[pre + "ff_W2"] = _glorot(rng, (cfg.ffn_dim, d), cfg.ffn_dim, d)
        p[pre + "ff_b2"] = np.zeros(d)
        p[pre + "ln2_g"], p[pre + "ln2_b"] = np.ones(d), np.zeros(d)
    p["head.W1"] = _glorot(rng, (d, cfg.fc_hidden), d, cfg.fc_hidden)
    p["head.b1"] = np.zeros(cfg.fc_hidden)
    p["head.W2"] = _glorot(rng, (cfg.fc_hidden, cfg.n_classes), cfg.fc_hidden, cfg.n_classes)
    p["head.b2"] = np.zeros(cfg.n_classes)
    return {name: a.astype(dtype) for name, a in p.items()}


def _sub(params: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def crtnet_logits(x, cfg: ModelConfig, params: dict, mode: str = "eval",
                  rng: np.random.Generator | None = None, trace: list | None = None) -> Tensor:
    """Pre-softmax class scores for x of shape (T, leads) or (B, T, leads).

    Args:
        mode: "train" enables dropout (drawn from `rng`), "eval" disables it.
        trace: optional list; (stage, shape) pairs are appended to it.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = ag.as_tensor(x)
    if x.ndim not in (2, 3) or x.shape[-1] != cfg.input_leads:
        raise ConfigShapeMismatch(f"expected input (..., T, {cfg.input_leads}), got {x.shape}")
    cfg.sequence_length(x.shape[-2])
    log = trace.append if trace is not None else (lambda item: None)
    log(("input", x.shape))
    h = x
    for i in range(cfg.n_cnn_blocks):
        h = L.conv_block_forward(h, params, f"cnn{i}.", cfg.pool_size, cfg.leaky_slope)
        log((f"cnn{i}", h.shape))
    h = L.bigru_sequence(h, _sub(params, "gru.fwd."), _sub(params, "gru.bwd."))
    log(("bigru", h.shape))
    h = h + L.positional_encoding(h.shape[-2], cfg.d_model).astype(h.data.dtype)
    for j in range(cfg.n_encoders):
        h = L.transformer_encoder(h, params, f"enc{j}.")
        log((f"enc{j}", h.shape))
    if mode == "train" and rng is None:
        rng = np.random.default_rng(0)
    h = L.dropout(h, cfg.dropout_rate, rng, mode == "train")
    h = ag.mean(h, axis=-2)
    log(("pool", h.shape))
    h = ag.relu(L.dense(h, params["head.W1"], params["head.b1"]))
    logits = L.dense(h, params["head.W2"], params["head.b2"])
    log(("logits", logits.shape))
    return logits


def crtnet_forward(x, cfg: ModelConfig, params: dict, mode: str = "eval",
                   rng: np.random.Generator | None = None, trace: list | None = None) -> Tensor:
    """Class probabilities (softmax over the last axis)."""
    return ag.softmax(crtnet_logits(x, cfg, params, mode, rng, trace), axis=-1)


def predict_proba(x: np.ndarray, cfg: ModelConfig, params: dict, batch_size: int = 64) -> np.ndarray:
    """Eval-mode probabilities for a stack of examples (N, T, leads)."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    consts = {k: Tensor(v) for k, v in params.items()}
    outs = [crtnet_forward(x[i:i + batch_size], cfg, consts).data
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy of integer labels."""
    labels = np.asarray(labels)
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -(ag.log_softmax(logits, axis=-1) * onehot).sum() * (1.0 / len(labels))


def n_parameters(params: dict) -> int:
    return int(sum(np.size(v) for v in params.values()))
