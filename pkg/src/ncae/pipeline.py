"""Corpus -> event split -> sequences -> train -> evaluate, shared by the CLI and scripts."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ncae import data, dsp
from ncae.errors import DataError
from ncae.evaluate import RunResult, auroc, score_batch, time_inference, tukey_threshold
from ncae.models import AutoEncoder, build_model
from ncae.training import TrainConfig, TrainRecord, train

log = logging.getLogger(__name__)

SPLITS = ("train", "test_normal", "test_abnormal")


@dataclass
class EventSequences:
    source_id: str
    label: str
    split: str
    sequences: np.ndarray  # (n, S, D)
    start: float = 0.0


@dataclass
class SequenceDataset:
    events: list[EventSequences]

    def stacked(self, split: str, n_features: int, seq_len: int) -> np.ndarray:
        parts = [e.sequences for e in self.events if e.split == split and len(e.sequences)]
        if not parts:
            return np.zeros((0, seq_len, n_features))
        return np.concatenate(parts)

    def arrays(self, n_features: int, seq_len: int) -> dict[str, np.ndarray]:
        return {s: self.stacked(s, n_features, seq_len) for s in SPLITS}


def event_sequences(event: data.DrivingEvent, cfg: dsp.PreprocessConfig, split: str,
                    fb=None, mode: str = "tumbling") -> EventSequences:
    vecs = dsp.mfcc_vectors(event.audio, cfg, fb)
    seqs = dsp.stack_sequences(vecs, cfg, mode)
    arr = np.stack([s.data for s in seqs]) if seqs else np.zeros((0, cfg.stack_len, cfg.n_mels))
    return EventSequences(event.source_id, event.label, split, arr, event.start)


def build_dataset(corpus_dir, cfg: dsp.PreprocessConfig, split_fraction: float = 0.8, split_seed: int = 0,
                  relative_threshold: float = 0.1, mode: str = "tumbling") -> SequenceDataset:
    events = data.load_corpus_events(corpus_dir, relative_threshold)
    split = data.split_dataset(events, split_fraction, split_seed)
    fb = dsp.build_mel_filterbank(cfg)
    out = []
    for name in SPLITS:
        for ev in getattr(split, name):
            out.append(event_sequences(ev, cfg, name, fb, mode))
    return SequenceDataset(out)


def save_dataset(ds: SequenceDataset, cache_dir) -> None:
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    with open(cache_dir / "sequences.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "source_id", "label", "split", "start", "n_sequences"])
        for i, e in enumerate(ds.events):
            name = f"event_{i:04d}.mat"
            data.write_matrix(cache_dir / name, e.sequences)
            w.writerow([name, e.source_id, e.label, e.split, f"{e.start:.6f}", len(e.sequences)])


def load_dataset(cache_dir) -> SequenceDataset:
    cache_dir = Path(cache_dir)
    index = cache_dir / "sequences.csv"
    if not index.exists():
        raise DataError(f"{index}: sequence index not found (run preprocess first)")
    events = []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            arr = data.read_matrix(cache_dir / row["file"])
            if arr.ndim != 3 or len(arr) != int(row["n_sequences"]):
                raise DataError(f"{cache_dir / row['file']}: shape {arr.shape} does not match index")
            events.append(EventSequences(row["source_id"], row["label"], row["split"], arr, float(row["start"])))
    return SequenceDataset(events)


@dataclass
class TrainedRun:
    model: AutoEncoder
    record: TrainRecord
    result: RunResult
    test_scores: np.ndarray
    test_labels: np.ndarray


def fit_and_evaluate(arrays: dict[str, np.ndarray], tcfg: TrainConfig, kind: str = "ncae",
                     sigma_multiplier: float = 1.5) -> TrainedRun:
    """Train on ``arrays['train']``, set the decision threshold, and score the test splits."""
    X = arrays["train"]
    if len(X) == 0:
        raise DataError("no training sequences (events too short for one stack?)")
    _, S, D = X.shape
    model = build_model(kind, tcfg.kernel, S, D, tcfg.seed)
    model, record = train(model, X, tcfg)
    model.threshold = tukey_threshold(score_batch(model, X), sigma_multiplier).as_dict()
    test = np.concatenate([arrays["test_normal"], arrays["test_abnormal"]])
    labels = np.r_[np.zeros(len(arrays["test_normal"])), np.ones(len(arrays["test_abnormal"]))]
    t0 = time.perf_counter()
    scores = score_batch(model, test)
    per_seq = (time.perf_counter() - t0) / max(len(test), 1)
    value = auroc(scores=scores, labels=labels)
    return TrainedRun(model, record, RunResult(value, record.total_seconds, per_seq), scores, labels)


def inference_speed(kind_a: str, kind_b: str, n: int = 1000, batch_size: int = 1, kernel: int = 3,
                    seq_len: int = 30, n_features: int = 128, seed: int = 0) -> tuple[float, float]:
    """Seconds per sequence for two untrained architectures on the same random batch stream."""
    X = np.random.Generator(np.random.PCG64(seed)).uniform(size=(n, seq_len, n_features))
    out = []
    for kind in (kind_a, kind_b):
        model = build_model(kind, kernel, seq_len, n_features, seed)
        time_inference(model, X[: min(n, 50)], batch_size)  # warm-up
        out.append(time_inference(model, X, batch_size))
    return out[0], out[1]
