"""Minibatch SGD on the multi-label classification loss."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .model import ModelParams, loss
from .rng import generator

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 15
    lr_attention: float = 0.1
    # No trainable feature adapter exists here (features are given), so this
    # rate is kept for config compatibility and currently touches nothing.
    lr_backbonelike: float = 0.01
    lr_decay_factor: float = 10.0
    decay_epoch: int = 10
    total_epochs: int = 20
    seed: int = 0
    hflip: bool = True

    def __post_init__(self):
        if self.lr_attention <= 0 or self.lr_backbonelike <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_decay_factor <= 0:
            raise ConfigError("lr_decay_factor must be positive")
        if self.batch_size < 1 or self.total_epochs < 1:
            raise ConfigError("batch_size and total_epochs must be >= 1")
        if not 0 <= self.decay_epoch < self.total_epochs:
            raise ConfigError("decay_epoch must be smaller than total_epochs")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, epoch: int) -> float:
        return self.lr_attention / (self.lr_decay_factor if epoch >= self.decay_epoch else 1.0)


def train(dataset, cfg: TrainConfig, params: ModelParams) -> tuple[ModelParams, list[float]]:
    """Train a copy of ``params``; return it with the per-epoch mean loss.

    ``dataset`` is a sequence of (features (H, W, D), multi-hot labels (C,)).
    The batch gradient is the mean of per-image gradients. Dropout masks,
    shuffles and flips are drawn from generators keyed on (seed, epoch, ...),
    so a run is reproducible bit for bit.
    """
    if len(dataset) == 0:
        raise ConfigError("empty training set")
    params = params.copy()
    for x, y in dataset:
        if np.ndim(x) != 3 or np.shape(x)[2] != params.depth or np.shape(y) != (params.n_classes,):
            raise DimensionError(
                f"sample shapes {np.shape(x)}, {np.shape(y)} do not fit model "
                f"(D={params.depth}, C={params.n_classes})"
            )
    curve: list[float] = []
    tensors = params.tensors()
    n = len(dataset)
    for epoch in range(cfg.total_epochs):
        lr = cfg.lr_at(epoch)
        order = generator(cfg.seed, 1, epoch).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            params.zero_grad()
            for idx in batch:
                x, y = dataset[idx]
                rng = generator(cfg.seed, 2, epoch, int(idx))
                if cfg.hflip and rng.random() < 0.5:
                    x = x[:, ::-1, :]
                out = loss(x, y, params, training=True, rng=rng)
                out.backward()
                total += out.item()
            scale = lr / len(batch)
            for t in tensors:
                t.data -= scale * t.grad
        curve.append(total / n)
        log.debug("epoch %d lr %.4g loss %.6f", epoch, lr, curve[-1])
    params.zero_grad()
    return params, curve
