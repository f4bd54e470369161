"""Anomaly scores, AUROC, the mean + 1.5 sigma decision threshold, Monte Carlo summaries, error maps."""
from __future__ import annotations

import time
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from ncae.errors import DataError
from ncae.models import normalize
from ncae.training import sample_distances

NORMAL, ABNORMAL = "normal", "abnormal"


@dataclass(frozen=True)
class ScoredSequence:
    score: float
    label: str
    source_id: str = ""


@dataclass(frozen=True)
class Threshold:
    theta: float
    mu: float
    sigma: float
    multiplier: float = 1.5

    def as_dict(self) -> dict:
        return asdict(self)


def reconstruct(model, X: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Normalise raw sequences with the model's statistics and reconstruct them."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if model.norm_stats is None:
        raise DataError("model has no normalisation statistics; train it first")
    Xn = normalize(X, model.norm_stats)
    out = np.concatenate([model.forward(Xn[i : i + batch_size]) for i in range(0, len(Xn), batch_size)]) \
        if len(Xn) else np.zeros_like(Xn)
    return Xn, out


def score_batch(model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    Xn, out = reconstruct(model, X, batch_size)
    return sample_distances(Xn, out)


def score(model, sequence) -> float:
    data = np.asarray(getattr(sequence, "data", sequence), dtype=np.float64)
    if data.ndim != 2 or data.shape != (model.seq_len, model.n_features):
        raise DataError(f"expected a ({model.seq_len}, {model.n_features}) sequence, got {data.shape}")
    return float(score_batch(model, data[None])[0])


def auroc(scored: Sequence[ScoredSequence] | None = None, *, scores=None, labels=None) -> float:
    """Mann-Whitney AUROC: P(abnormal score > normal score), ties counted as one half.

    Either pass ``ScoredSequence`` objects or parallel ``scores``/``labels``
    arrays (labels truthy or ``"abnormal"`` = positive).
    """
    if scored is not None:
        scores = [s.score for s in scored]
        labels = [s.label for s in scored]
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.array([l == ABNORMAL if isinstance(l, str) else bool(l) for l in labels])
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUROC: need at least one normal and one abnormal score")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def tukey_threshold(train_scores, multiplier: float = 1.5) -> Threshold:
    s = np.asarray(train_scores, dtype=np.float64)
    if s.size < 2:
        raise ValueError("need at least 2 scores for a threshold")
    mu = float(s.mean())
    sigma = float(s.std())  # population
    return Threshold(mu + multiplier * sigma, mu, sigma, multiplier)


def with_multiplier(th: Threshold, multiplier: float) -> Threshold:
    return Threshold(th.mu + multiplier * th.sigma, th.mu, th.sigma, multiplier)


def classify(score_value: float, threshold: Threshold) -> str:
    return ABNORMAL if score_value > threshold.theta else NORMAL


# ---------------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class RunResult:
    auroc: float
    train_seconds: float
    infer_seconds_per_seq: float


@dataclass(frozen=True)
class MonteCarloReport:
    runs: int
    aurocs: tuple[float, ...]
    auroc_min: float
    auroc_max: float
    auroc_mean: float
    auroc_sd: float
    train_seconds_mean: float
    infer_seconds_mean: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["aurocs"] = list(self.aurocs)
        return d


def summarize_runs(results: Sequence[RunResult]) -> MonteCarloReport:
    a = np.array([r.auroc for r in results])
    return MonteCarloReport(
        runs=len(results),
        aurocs=tuple(float(x) for x in a),
        auroc_min=float(a.min()),
        auroc_max=float(a.max()),
        auroc_mean=float(a.mean()),
        auroc_sd=float(a.std(ddof=1)) if len(a) > 1 else 0.0,
        train_seconds_mean=float(np.mean([r.train_seconds for r in results])),
        infer_seconds_mean=float(np.mean([r.infer_seconds_per_seq for r in results])),
    )


def monte_carlo(runs: int, run: Callable[[int], RunResult], base_seed: int = 0,
                seeds: Sequence[int] | None = None) -> MonteCarloReport:
    """Repeat ``run(seed)`` with seeds ``base_seed+1 .. base_seed+runs`` (or explicit ``seeds``)."""
    if runs < 2:
        raise ValueError("need R >= 2 Monte Carlo runs")
    seeds = list(seeds) if seeds is not None else [base_seed + i for i in range(1, runs + 1)]
    if len(seeds) != runs:
        raise ValueError("seed list length must equal the run count")
    return summarize_runs([run(s) for s in seeds])


def time_inference(model, X: np.ndarray, batch_size: int = 1, repeats: int = 1) -> float:
    """Mean wall-clock seconds per sequence for forward passes at ``batch_size``."""
    X = np.asarray(X, dtype=np.float64)
    t0 = time.perf_counter()
    for _ in range(repeats):
        for i in range(0, len(X), batch_size):
            model.forward(X[i : i + batch_size])
    return (time.perf_counter() - t0) / (len(X) * repeats)


# ---------------------------------------------------------------- error maps

ERROR_FLOOR = 1e-10


def error_map(x: np.ndarray, x_hat: np.ndarray, floor: float = ERROR_FLOOR) -> np.ndarray:
    """Per-cell log10 squared error."""
    x, x_hat = np.asarray(x, dtype=np.float64), np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return np.log10(np.maximum((x - x_hat) ** 2, floor))


def to_gray8(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.round(255.0 * (m - lo) / (hi - lo)).astype(np.uint8)


def write_pgm(path, m: np.ndarray) -> None:
    """Binary 8-bit PGM; rows are the first axis of ``m``."""
    img = to_gray8(np.asarray(m))
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    # only handles the header layout write_pgm produces
    raw = Path(path).read_bytes()
    magic, dims, maxval, data = raw.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise DataError(f"{path}: not an 8-bit binary PGM")
    w, h = map(int, dims.split())
    return np.frombuffer(data, dtype=np.uint8, count=w * h).reshape(h, w)


def write_matrix_csv(path, m: np.ndarray, prefix: str = "d") -> None:
    m = np.atleast_2d(m)
    header = ",".join(f"{prefix}{j}" for j in range(m.shape[1]))
    np.savetxt(path, m, delimiter=",", header=header, comments="", fmt="%.10g")
