"""Mini-batch SGD with momentum for the TCN."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, TrainingDiverged
from .data import WindowDataset
from .tcn import TcnModel, loss_and_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    subsample: int = 0          # windows drawn per epoch; 0 uses the whole set
    clip: float = 5.0           # global gradient-norm clip; 0 disables
    lr_final: float = 0.1       # cosine decay to this fraction of lr
    val_fraction: float = 0.15

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ContractViolation("invalid training hyperparameters")


def evaluate_loss(model: TcnModel, data: WindowDataset, batch: int = 2048, limit: int | None = None) -> float:
    n = len(data) if limit is None else min(limit, len(data))
    if n == 0:
        return float("nan")
    sel = np.linspace(0, len(data) - 1, n).astype(int) if limit is not None else np.arange(n)
    total = 0.0
    for s in range(0, n, batch):
        x, yl, yh = data.batch(sel[s : s + batch])
        loss, _ = loss_and_grad(model, x, yl, yh, with_grad=False)
        total += loss * len(x)
    return total / n


def train(model: TcnModel, data: WindowDataset, cfg: TrainConfig = TrainConfig(), val: WindowDataset | None = None,
          val_limit: int | None = 20000):
    """Train in place on a copy; returns (trained model, history).

    With a fixed seed the run is bit-reproducible: shuffling uses its own
    generator and every reduction runs in a fixed order.
    """
    if len(data) == 0:
        raise ContractViolation("empty training set")
    model = model.copy()
    model.mean, model.scale, model.label_scale = data.mean, data.scale, data.label_scale
    rng = np.random.default_rng(cfg.seed)
    params = model.params()
    vel = [np.zeros_like(p) for p in params]
    per_epoch = len(data) if cfg.subsample <= 0 else min(cfg.subsample, len(data))
    steps_per_epoch = math.ceil(per_epoch / cfg.batch)
    total_steps = cfg.epochs * steps_per_epoch
    history = []
    step = 0
    last_finite = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))[:per_epoch]
        acc, count = 0.0, 0
        for s in range(0, per_epoch, cfg.batch):
            x, yl, yh = data.batch(order[s : s + cfg.batch])
            loss, grads = loss_and_grad(model, x, yl, yh)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at epoch {epoch}, step {step}; last finite loss {last_finite}"
                )
            last_finite = loss
            if cfg.clip > 0:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
                if norm > cfg.clip:
                    grads = [g * (cfg.clip / norm) for g in grads]
            frac = step / max(total_steps - 1, 1)
            lr = cfg.lr * (cfg.lr_final + (1 - cfg.lr_final) * 0.5 * (1 + math.cos(math.pi * frac)))
            for p, v, g in zip(params, vel, grads):
                v *= cfg.momentum
                v -= lr * g
                p += v
            acc += loss * len(x)
            count += len(x)
            step += 1
        rec = {"epoch": epoch, "train_loss": acc / count, "lr": lr}
        if val is not None and len(val):
            rec["val_loss"] = evaluate_loss(model, val, limit=val_limit)
        history.append(rec)
        log.info("epoch %d train %.5f val %s", epoch, rec["train_loss"], rec.get("val_loss"))
    model.meta.update(epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr, momentum=cfg.momentum, train_seed=cfg.seed)
    return model, history
