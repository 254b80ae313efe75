"""Validation-loss driven training callbacks as plain state machines.

Both follow the Keras semantics: an epoch counts as an improvement when
``val_loss < best - min_delta``; otherwise a wait counter grows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class EarlyStopping:
    patience: int = 5
    min_delta: float = 1e-4
    best: float = math.inf
    best_epoch: int = 0
    wait: int = 0
    stopped_epoch: int | None = None

    def update(self, epoch: int, val_loss: float) -> bool:
        """Feed one epoch's validation loss; return True if this epoch improved.

        ``stopped_epoch`` is set once ``patience`` epochs in a row fail to
        improve on the best loss.
        """
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.best_epoch = epoch
            self.wait = 0
            return True
        self.wait += 1
        if self.wait >= self.patience and self.stopped_epoch is None:
            self.stopped_epoch = epoch
        return False

    @property
    def should_stop(self) -> bool:
        return self.stopped_epoch is not None


@dataclass
class ReduceLROnPlateau:
    lr: float
    factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    min_delta: float = 1e-4
    best: float = math.inf
    wait: int = 0
    reductions: list[int] = field(default_factory=list)

    def update(self, epoch: int, val_loss: float) -> float:
        """Return the learning rate to use from the next epoch on."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
            return self.lr
        self.wait += 1
        if self.wait >= self.patience and self.lr > self.min_lr:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.reductions.append(epoch)
            self.wait = 0
        return self.lr


def replay(val_losses, *, lr: float = 1e-4, max_epochs: int | None = None,
           es_patience: int = 5, lr_patience: int = 3, factor: float = 0.5,
           min_lr: float = 1e-6, min_delta: float = 1e-4) -> dict:
    """Run both callbacks over a recorded validation-loss trace.

    Returns the stop epoch, the epoch whose weights are restored and the
    learning rate used in each epoch that ran.
    """
    es = EarlyStopping(patience=es_patience, min_delta=min_delta)
    plateau = ReduceLROnPlateau(lr=lr, factor=factor, patience=lr_patience,
                                min_lr=min_lr, min_delta=min_delta)
    lrs = []
    last = 0
    limit = len(val_losses) if max_epochs is None else min(max_epochs, len(val_losses))
    for epoch in range(1, limit + 1):
        loss = val_losses[epoch - 1]
        lrs.append(plateau.lr)
        last = epoch
        es.update(epoch, loss)
        plateau.update(epoch, loss)
        if es.should_stop:
            break
    return {"stop_epoch": last, "early_stopped": es.should_stop,
            "best_epoch": es.best_epoch, "lr_trace": lrs}
