"""Mini-batch training with a step-decay learning rate and early stopping."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EcgraphError
from ..records import atomic_write
from .autograd import Tensor
from .model import ModelConfig, cross_entropy, crtnet_logits, init_params

log = logging.getLogger(__name__)


class EmptyDataset(EcgraphError, ValueError):
    pass


class LabelOutOfRange(EcgraphError, ValueError):
    pass


HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_acc")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings.

    `optimizer` is "adam" (adaptive moments, the schedule scales its base
    rate) or "sgd" (plain gradient descent). An epoch counts as an
    improvement only when validation loss drops by more than `min_delta`.
    """

    lr0: float = 1e-4
    lr_decay: float = 0.5
    decay_every: int = 4
    max_epochs: int = 100
    early_stop_patience: int = 10
    batch_size: int = 32
    rng_seed: int = 0
    optimizer: str = "adam"
    min_delta: float = 0.0
    restore_best: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if self.early_stop_patience < 1:
            raise ValueError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.max_epochs < 1 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("max_epochs, batch_size and decay_every must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** (epoch // self.decay_every)


class EarlyStopping:
    """Tracks the best validation loss; `step` returns True when it is time to stop."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1
        self.waited = 0

    def step(self, epoch: int, loss: float) -> bool:
        if loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.waited = loss, epoch, 0
            return False
        self.waited += 1
        return self.waited >= self.patience


class Adam:
    def __init__(self, params: dict, tc: TrainConfig):
        self.tc = tc
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        tc = self.tc
        self.t += 1
        c1 = 1.0 - tc.beta1 ** self.t
        c2 = 1.0 - tc.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = tc.beta1 * self.m[k] + (1 - tc.beta1) * g
            self.v[k] = tc.beta2 * self.v[k] + (1 - tc.beta2) * g * g
            params[k] -= (lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + tc.adam_eps)).astype(params[k].dtype)


@dataclass
class TrainResult:
    params: dict
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def _check_set(x, y, cfg: ModelConfig, name: str) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim == 2:
        x = x[..., None]
    if len(x) == 0 or len(y) == 0:
        raise EmptyDataset(f"{name} set is empty")
    if len(x) != len(y):
        raise EmptyDataset(f"{name} set has {len(x)} inputs but {len(y)} labels")
    bad = (y < 0) | (y >= cfg.n_classes)
    if bad.any():
        raise LabelOutOfRange(f"{name} label {int(y[bad][0])} outside [0, {cfg.n_classes})")
    return x, y


def loss_and_grads(params: dict, cfg: ModelConfig, x: np.ndarray, y: np.ndarray,
                   rng: np.random.Generator | None, mode: str = "train") -> tuple[float, dict]:
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    loss = cross_entropy(crtnet_logits(x, cfg, leaves, mode, rng), y)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return float(loss.data), grads


def evaluate(params: dict, cfg: ModelConfig, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> tuple[float, float]:
    """Eval-mode (mean cross-entropy, accuracy)."""
    consts = {k: Tensor(v) for k, v in params.items()}
    total, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        logits = crtnet_logits(x[i:i + batch_size], cfg, consts)
        yb = y[i:i + batch_size]
        total += float(cross_entropy(logits, yb).data) * len(yb)
        correct += int(np.sum(np.argmax(logits.data, axis=-1) == yb))
    return total / len(x), correct / len(x)


def train(cfg: ModelConfig, train_set, val_set, tc: TrainConfig = TrainConfig(),
          params: dict | None = None, dtype=np.float32) -> TrainResult:
    """Fit CRT-Net with categorical cross-entropy.

    Args:
        train_set, val_set: (inputs (N, T) or (N, T, leads), integer labels).
        params: starting weights; seeded Glorot initialisation when omitted.

    Returns:
        TrainResult whose history holds one row per epoch with the columns
        in `HISTORY_COLUMNS`. With `restore_best` the returned weights are
        those of the epoch with the lowest validation loss.
    """
    x_tr, y_tr = _check_set(*train_set, cfg, "train")
    x_va, y_va = _check_set(*val_set, cfg, "validation")
    x_tr, x_va = x_tr.astype(dtype), x_va.astype(dtype)
    if params is None:
        params = init_params(cfg, tc.rng_seed, dtype)
    params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    rng = np.random.default_rng(tc.rng_seed)
    adam = Adam(params, tc) if tc.optimizer == "adam" else None
    stopper = EarlyStopping(tc.early_stop_patience, tc.min_delta)
    result = TrainResult(params)
    best = {k: v.copy() for k, v in params.items()}

    for epoch in range(tc.max_epochs):
        lr = tc.lr_at(epoch)
        order = rng.permutation(len(x_tr))
        running = 0.0
        for start in range(0, len(order), tc.batch_size):
            idx = order[start:start + tc.batch_size]
            loss, grads = loss_and_grads(params, cfg, x_tr[idx], y_tr[idx], rng)
            running += loss * len(idx)
            if adam is not None:
                adam.step(params, grads, lr)
            else:
                for k in sorted(params):
                    params[k] -= (lr * grads[k]).astype(params[k].dtype)
        val_loss, val_acc = evaluate(params, cfg, x_va, y_va)
        row = {"epoch": epoch, "lr": lr, "train_loss": running / len(x_tr),
               "val_loss": val_loss, "val_acc": val_acc}
        result.history.append(row)
        log.info("epoch %d lr %.3g train %.4f val %.4f acc %.3f", epoch, lr,
                 row["train_loss"], val_loss, val_acc)
        stop = stopper.step(epoch, val_loss)
        if stopper.best_epoch == epoch:
            best = {k: v.copy() for k, v in params.items()}
        if stop:
            result.stopped_early = True
            break
    result.best_epoch = stopper.best_epoch
    result.params = best if tc.restore_best else params
    return result


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([row["epoch"], repr(float(row["lr"]))]
                   + [f"{float(row[c]):.8g}" for c in HISTORY_COLUMNS[2:]])
    return buf.getvalue()


def write_history(history: list[dict], path) -> None:
    atomic_write(path, history_csv(history).encode())


def read_history(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{"epoch": int(r["epoch"]), "lr": float(r["lr"]),
             **{c: float(r[c]) for c in HISTORY_COLUMNS[2:]}} for r in rows]
