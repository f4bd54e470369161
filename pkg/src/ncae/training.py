"""Mini-batch Adam training on the per-sample Euclidean reconstruction distance."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ncae import nn
from ncae.errors import DataError, NumericalError
from ncae.models import AutoEncoder, NormStats, normalize

log = logging.getLogger(__name__)

LEARNING_RATES = (5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5)
KERNELS = (3, 5, 7)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    kernel: int = 3
    batch_size: int = 16
    max_epochs: int = 1000
    patience: int = 20
    min_delta: float = 1e-5
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be >= 1")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel must be odd")


@dataclass
class TrainRecord:
    losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    stop_reason: str = "max_epochs"

    @property
    def final_epoch(self) -> int:
        return len(self.losses)

    @property
    def total_seconds(self) -> float:
        return float(sum(self.epoch_seconds))

    def to_csv(self, path) -> None:
        elapsed = np.cumsum(self.epoch_seconds)
        with open(path, "w") as fh:
            fh.write("epoch,loss,seconds\n")
            for i, (loss, t) in enumerate(zip(self.losses, elapsed), start=1):
                fh.write(f"{i},{loss!r},{t:.6f}\n")


def sample_distances(X: np.ndarray, X_hat: np.ndarray) -> np.ndarray:
    """Euclidean distance per sample over the (S, D) axes."""
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    diff = (X - X_hat).reshape(len(X), -1)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def euclidean_loss(X: np.ndarray, X_hat: np.ndarray) -> float:
    return float(sample_distances(X, X_hat).mean())


def euclidean_loss_grad(X: np.ndarray, X_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. ``X_hat``. Zero-distance samples get zero gradient."""
    dist = sample_distances(X, X_hat)
    safe = np.where(dist > 0, dist, 1.0)
    grad = (X_hat - X) / (len(X) * safe)[:, None, None]
    grad[dist == 0] = 0.0
    return float(dist.mean()), grad


def train_step(model: AutoEncoder, batch: np.ndarray, opt: nn.Adam) -> float:
    model.zero_grad()
    out = model.forward(batch)
    loss, grad = euclidean_loss_grad(batch, out)
    model.backward(grad)
    opt.step(model.params(), model.grads())
    return loss


def _as_array(dataset) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return np.asarray(dataset, dtype=np.float64)
    return np.stack([getattr(s, "data", s) for s in dataset]).astype(np.float64)


def train(model: AutoEncoder, dataset, cfg: TrainConfig,
          on_epoch: Callable[[int, float], None] | None = None) -> tuple[AutoEncoder, TrainRecord]:
    """Fit ``model`` on normal sequences (raw features; normalisation is fitted here).

    Stops once the epoch loss has failed to improve by ``min_delta`` for
    ``patience`` consecutive epochs, or after ``max_epochs``.
    """
    X = _as_array(dataset)
    if X.size == 0 or len(X) == 0:
        raise DataError("cannot train on an empty dataset")
    model.norm_stats = NormStats.fit(X)
    Xn = normalize(X, model.norm_stats)
    opt = nn.Adam(cfg.learning_rate)
    rng = nn.make_rng([cfg.seed, 1])
    record = TrainRecord()
    best, wait = np.inf, 0
    n = len(Xn)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss = train_step(model, Xn[idx], opt)
            if not np.isfinite(loss):
                raise NumericalError(f"loss became {loss} at epoch {epoch}, batch starting {i}")
            total += loss * len(idx)
        epoch_loss = total / n
        record.losses.append(epoch_loss)
        record.epoch_seconds.append(time.perf_counter() - t0)
        if on_epoch:
            on_epoch(epoch, epoch_loss)
        if epoch_loss < best - cfg.min_delta:
            best, wait = epoch_loss, 0
        else:
            wait += 1
            if wait >= cfg.patience:
                record.stop_reason = "converged"
                break
    log.info("trained %s k=%d lr=%g: %d epochs, loss %.5f (%s)", model.kind, model.kernel,
             cfg.learning_rate, record.final_epoch, record.losses[-1], record.stop_reason)
    return model, record


# ---------------------------------------------------------------- grid search

@dataclass
class GridCell:
    kernel: int
    learning_rate: float
    seed: int
    auroc: float | None


@dataclass
class GridResult:
    cells: list[GridCell]

    @property
    def best(self) -> GridCell:
        scored = [c for c in self.cells if c.auroc is not None]
        if not scored:
            raise NumericalError("every grid cell failed")
        return min(scored, key=lambda c: (-c.auroc, c.kernel, -c.learning_rate))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("kernel,learning_rate,auroc\n")
            for c in self.cells:
                auroc = "" if c.auroc is None else f"{c.auroc:.5f}"
                fh.write(f"{c.kernel},{c.learning_rate:g},{auroc}\n")


def grid_search(run_cell: Callable[[int, float, int], float],
                learning_rates: Sequence[float] = LEARNING_RATES,
                kernels: Sequence[int] = KERNELS, base_seed: int = 0) -> GridResult:
    """Evaluate ``run_cell(kernel, lr, seed) -> auroc`` over the grid.

    Cells are ordered kernel-major like the published results table; the seed of
    cell ``i`` is ``base_seed + i``. A cell that raises :class:`NumericalError`
    is recorded with a missing AUROC.
    """
    if not learning_rates or not kernels:
        raise ValueError("grid must be non-empty")
    cells = []
    for i, (k, lr) in enumerate((k, lr) for k in kernels for lr in learning_rates):
        seed = base_seed + i
        try:
            auroc = float(run_cell(k, lr, seed))
        except NumericalError as exc:
            log.warning("grid cell k=%d lr=%g failed: %s", k, lr, exc)
            auroc = None
        cells.append(GridCell(k, lr, seed, auroc))
    return GridResult(cells)
