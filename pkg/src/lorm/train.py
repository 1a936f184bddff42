"""Training: token cross-entropy, Adam, the epoch loop, and gradient checks.

The objective for one window is the mean negative log-probability of the
observed target token across channels:

    loss = -(1/C) * sum_c log(max(pi_c[y_c], 1e-12))

computed in float64. A batch averages window losses. Fine-tuning freezes the
attention and feed-forward tensors and adapts only embeddings, norms, and the
head; pre-training updates everything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    BackboneConfig,
    ModelParameters,
    TokenDistributions,
    backward_from_scores,
    forward_batch,
    partition_parameters,
)
from .sequence import build_mcps
from .signal_io import ChannelStats, SignalWindow, normalize_window, split_context_target
from .tokenizer import CodebookSet, TokenVector, tokenize_window

__all__ = [
    "PROB_FLOOR",
    "TrainConfig",
    "TrainReport",
    "Adam",
    "window_loss",
    "build_examples",
    "loss_and_grad",
    "dataset_loss",
    "train_model",
    "write_train_report_csv",
    "gradient_check",
]

# probabilities are clamped here before the log so the loss stays finite
PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    """Optimiser and loop settings."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, and patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainReport:
    """Per-epoch losses plus where early stopping landed. Epochs are 1-based."""

    epochs: list[int] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False


class Adam(object):
    """Adam with bias correction; one shared step counter, per-tensor moments.

    theta -= lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(
        self,
        params: ModelParameters,
        names: Sequence[str],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> None:
        self.names = list(names)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = epsilon
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}

    def step(self, params: ModelParameters, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for n in self.names:
            g = np.asarray(grads[n], dtype=params[n].dtype)
            self.m[n] = self.beta1 * self.m[n] + (1.0 - self.beta1) * g
            self.v[n] = self.beta2 * self.v[n] + (1.0 - self.beta2) * g * g
            m_hat = self.m[n] / b1c
            v_hat = self.v[n] / b2c
            params.tensors[n] = params[n] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def window_loss(dists, tokens) -> float:
    """Cross-entropy of one window's observed tokens, averaged over channels."""
    p = dists.per_channel if isinstance(dists, TokenDistributions) else np.asarray(dists, dtype=np.float64)
    y = tokens.tokens if isinstance(tokens, TokenVector) else np.asarray(tokens, dtype=np.int64)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ValueError("need one token per channel distribution")
    picked = p[np.arange(p.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def build_examples(
    windows: Sequence[SignalWindow],
    stats: ChannelStats,
    context_len: int,
    codebooks: CodebookSet,
    patch_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Turn raw windows into (patch sequences, target tokens) ready for the model.

    Normalises each window, splits context from target, discretises the target
    per channel, and flattens the context into MCPS rows. Returns p of shape
    (n, N*C, patch_len) and y of shape (n, C).
    """
    if not windows:
        raise ValueError("training set is empty")
    p_rows = []
    y_rows = []
    for w in windows:
        norm = normalize_window(w, stats)
        context, target = split_context_target(norm, context_len)
        p_rows.append(build_mcps(context, patch_len).rows)
        y_rows.append(tokenize_window(target, codebooks).tokens)
    return np.stack(p_rows), np.stack(y_rows)


def _batch_ce(dists: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over a batch plus the (B, C) clamp mask."""
    b, c, _ = dists.shape
    picked = dists[np.arange(b)[:, None], np.arange(c)[None, :], y]
    clamped = picked < PROB_FLOOR
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    return loss, clamped


def loss_and_grad(
    p_batch: np.ndarray,
    y_batch: np.ndarray,
    params: ModelParameters,
    cfg: BackboneConfig,
) -> tuple[float, dict[str, np.ndarray]]:
    """Batch loss and gradients for every parameter.

    The gradient at the scores is (pi - onehot(y)) / (B * C); channels whose
    picked probability sits below the clamp floor contribute no gradient.
    """
    y = np.asarray(y_batch, dtype=np.int64)
    dists, cache = forward_batch(p_batch, params, cfg, want_cache=True)
    b, c, _ = dists.shape
    loss, clamped = _batch_ce(dists, y)
    dv = dists.copy()
    dv[np.arange(b)[:, None], np.arange(c)[None, :], y] -= 1.0
    dv /= float(b * c)
    dv[clamped] = 0.0
    return loss, backward_from_scores(cache, dv)


def dataset_loss(
    p: np.ndarray,
    y: np.ndarray,
    params: ModelParameters,
    cfg: BackboneConfig,
    batch_size: int = 32,
) -> float:
    """Mean window loss over a whole dataset, evaluated without gradients."""
    n = p.shape[0]
    if n == 0:
        raise ValueError("empty input")
    total = 0.0
    y = np.asarray(y, dtype=np.int64)
    for start in range(0, n, batch_size):
        chunk = slice(start, min(start + batch_size, n))
        dists, _ = forward_batch(p[chunk], params, cfg)
        loss, _ = _batch_ce(dists, y[chunk])
        total += loss * (chunk.stop - chunk.start)
    return total / n


def train_model(
    p_train: np.ndarray,
    y_train: np.ndarray,
    p_val: np.ndarray,
    y_val: np.ndarray,
    params: ModelParameters,
    cfg: BackboneConfig,
    train_cfg: TrainConfig | None = None,
    freeze: bool = False,
) -> TrainReport:
    """Mini-batch Adam with per-epoch shuffling and early stopping.

    Mutates params in place and leaves them at the best-validation epoch.
    With freeze=True only the embedding, position, norm, and head tensors are
    updated; attention and feed-forward stay untouched.
    """
    train_cfg = train_cfg or TrainConfig()
    n = p_train.shape[0]
    if n == 0:
        raise ValueError("training set is empty")
    if p_val.shape[0] == 0:
        raise ValueError("validation set is empty")

    if freeze:
        trainable = sorted(partition_parameters(params).trainable)
    else:
        trainable = params.names()
    adam = Adam(
        params,
        trainable,
        learning_rate=train_cfg.learning_rate,
        beta1=train_cfg.beta1,
        beta2=train_cfg.beta2,
        epsilon=train_cfg.epsilon,
    )

    rng = np.random.default_rng(train_cfg.seed)
    report = TrainReport()
    best_state: ModelParameters | None = None
    since_best = 0
    y_train = np.asarray(y_train, dtype=np.int64)

    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            loss, grads = loss_and_grad(p_train[idx], y_train[idx], params, cfg)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss {loss} at epoch {epoch}, "
                    f"batch starting at {start}"
                )
            adam.step(params, grads)
            epoch_loss += loss * len(idx)
        epoch_loss /= n

        val_loss = dataset_loss(p_val, y_val, params, cfg, train_cfg.batch_size)
        if not np.isfinite(val_loss):
            raise RuntimeError(f"non-finite validation loss {val_loss} at epoch {epoch}")
        report.epochs.append(epoch)
        report.train_losses.append(epoch_loss)
        report.val_losses.append(val_loss)

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_state = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_cfg.patience:
                report.stopped_early = True
                break

    if best_state is not None:
        for name in params.names():
            params.tensors[name] = best_state[name]
    return report


def write_train_report_csv(report: TrainReport, path: str) -> None:
    """epoch,train_loss,val_loss with one row per completed epoch."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for e, tr, va in zip(report.epochs, report.train_losses, report.val_losses):
            fh.write(f"{e},{tr!r},{va!r}\n")


def gradient_check(
    p_batch: np.ndarray,
    y_batch: np.ndarray,
    params: ModelParameters,
    cfg: BackboneConfig,
    step: float = 1e-5,
    max_coords_per_tensor: int = 16,
    seed: int = 0,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Runs entirely in float64. Checks every coordinate of small tensors and a
    seeded sample of larger ones.
    """
    work = params.astype(np.float64)
    y = np.asarray(y_batch, dtype=np.int64)
    p64 = np.asarray(p_batch, dtype=np.float64)

    def loss_at() -> float:
        dists, _ = forward_batch(p64, work, cfg)
        loss, _ = _batch_ce(dists, y)
        return loss

    _, grads = loss_and_grad(p64, y, work, cfg)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in work.names():
        tensor = work.tensors[name]
        flat = tensor.reshape(-1)
        size = flat.shape[0]
        if size <= max_coords_per_tensor:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_tensor, replace=False)
        analytic_flat = grads[name].reshape(-1)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + step
            up = loss_at()
            flat[i] = keep - step
            down = loss_at()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            a = float(analytic_flat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst
