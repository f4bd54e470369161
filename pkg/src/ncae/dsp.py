"""Audio front end: 500 ms segments -> STFT -> log-mel -> time-averaged vectors -> stacks.

All functions here are pure; the only state lives in :class:`StreamingFeaturizer`,
which is a thin buffer around the same per-segment pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Literal

import numpy as np
from scipy.fft import dct

from ncae.errors import DataError


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"audio must be mono, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("audio contains NaN or Inf samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def slice(self, start: float, end: float) -> "AudioBuffer":
        a = int(round(start * self.sample_rate))
        b = int(round(end * self.sample_rate))
        return AudioBuffer(self.samples[a:b], self.sample_rate)


@dataclass(frozen=True)
class PreprocessConfig:
    sample_rate: int = 44100
    window_len: int = 2048
    hop_len: int = 512
    n_mels: int = 128
    stack_len: int = 30
    segment_len_ms: float = 500.0
    segment_hop_ms: float = 250.0
    apply_dct: bool = False
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window_len <= 0 or not (0 < self.hop_len <= self.window_len):
            raise ValueError("need window_len > 0 and 0 < hop_len <= window_len")
        if self.n_mels <= 0 or self.stack_len <= 0:
            raise ValueError("n_mels and stack_len must be positive")
        if self.segment_hop_ms <= 0:
            raise ValueError("segment_hop_ms must be positive")
        if self.segment_samples < self.window_len:
            raise ValueError(
                f"segment of {self.segment_len_ms} ms holds {self.segment_samples} samples, "
                f"shorter than one {self.window_len}-sample window"
            )

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_len_ms * self.sample_rate / 1000.0))

    @property
    def segment_hop_samples(self) -> int:
        return int(round(self.segment_hop_ms * self.sample_rate / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    @property
    def frames_per_segment(self) -> int:
        return 1 + (self.segment_samples - self.window_len) // self.hop_len


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # bins x frames
    frame_times: np.ndarray


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x bins
    f_min: float
    f_max: float
    centers_hz: np.ndarray


@dataclass(frozen=True)
class MfccSequence:
    data: np.ndarray  # S x D
    source_id: str = ""
    start_time: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 2 or not np.all(np.isfinite(self.data)):
            raise DataError(f"sequence must be a finite S x D matrix, got shape {self.data.shape}")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def segment_stream(audio: AudioBuffer, cfg: PreprocessConfig) -> list[np.ndarray]:
    """Cut ``audio`` into fixed-length overlapping segments, dropping the partial tail."""
    seg, hop = cfg.segment_samples, cfg.segment_hop_samples
    n = len(audio.samples)
    if n < seg:
        return []
    count = 1 + (n - seg) // hop
    return [audio.samples[i * hop : i * hop + seg] for i in range(count)]


def _frames(x: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len, axis=-1)
    return view[..., :: cfg.hop_len, :]


def stft(segment: np.ndarray, cfg: PreprocessConfig) -> Spectrogram:
    """Hann-windowed, non-centred magnitude STFT of one segment."""
    segment = np.asarray(segment, dtype=np.float64)
    if len(segment) < cfg.window_len:
        raise DataError(f"segment too short: {len(segment)} < window {cfg.window_len}")
    frames = _frames(segment, cfg) * hann(cfg.window_len)
    mags = np.abs(np.fft.rfft(frames, axis=-1)).T
    times = np.arange(mags.shape[1]) * cfg.hop_len / cfg.sample_rate
    return Spectrogram(mags, times)


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def build_mel_filterbank(cfg: PreprocessConfig, f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Unit-peak triangular filters with centres equally spaced on the HTK mel scale."""
    if cfg.n_mels < 2:
        raise ValueError("too few mel bands")
    nyquist = cfg.sample_rate / 2.0
    f_max = nyquist if f_max is None else f_max
    if f_max > nyquist or f_min < 0 or f_min >= f_max:
        raise ValueError(f"need 0 <= f_min < f_max <= {nyquist}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), cfg.n_mels + 2))
    bin_hz = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.window_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    # Low bands can be narrower than one FFT bin; pin the bin nearest the centre
    # so every filter is non-empty and peaks at exactly 1.
    nearest = np.abs(bin_hz[None, :] - mid).argmin(axis=1)
    weights[np.arange(cfg.n_mels), nearest] = np.maximum(
        weights[np.arange(cfg.n_mels), nearest], 1.0
    )
    weights /= weights.max(axis=1, keepdims=True)
    return MelFilterbank(weights, f_min, f_max, edges[1:-1])


def mel_spectra(spec: Spectrogram, fb: MelFilterbank, cfg: PreprocessConfig) -> np.ndarray:
    """Log mel energies, bands x frames; optionally DCT-II along the band axis."""
    mags = spec.magnitudes
    if mags.shape[0] != fb.weights.shape[1]:
        raise DataError(
            f"spectrogram has {mags.shape[0]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    return _log_mel(mags, fb.weights, cfg)


def _log_mel(mags: np.ndarray, weights: np.ndarray, cfg: PreprocessConfig) -> np.ndarray:
    # mags: (..., bins, frames)
    out = np.log(np.maximum(weights @ (mags * mags), cfg.log_floor))
    if cfg.apply_dct:
        out = dct(out, type=2, axis=-2, norm="ortho")
    return out


def time_average(mel: np.ndarray) -> np.ndarray:
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[1] < 1:
        raise DataError("time_average needs a bands x frames matrix with at least one frame")
    return mel.mean(axis=1)


def segment_vectors(segments: np.ndarray, fb: MelFilterbank, cfg: PreprocessConfig) -> np.ndarray:
    """Batched STFT -> log-mel -> mean for an (n, segment_samples) array. Returns (n, D)."""
    segments = np.asarray(segments, dtype=np.float64)
    if segments.shape[0] == 0:
        return np.zeros((0, cfg.n_mels))
    frames = _frames(segments, cfg) * hann(cfg.window_len)
    mags = np.abs(np.fft.rfft(frames, axis=-1)).transpose(0, 2, 1)
    return _log_mel(mags, fb.weights, cfg).mean(axis=-1)


def mfcc_vectors(audio: AudioBuffer, cfg: PreprocessConfig, fb: MelFilterbank | None = None,
                 chunk: int = 64) -> np.ndarray:
    """All MFCC vectors of an audio buffer, one per segment, shape (n_segments, D)."""
    if audio.sample_rate != cfg.sample_rate:
        raise DataError(f"audio is {audio.sample_rate} Hz, config expects {cfg.sample_rate} Hz")
    fb = fb or build_mel_filterbank(cfg)
    seg, hop = cfg.segment_samples, cfg.segment_hop_samples
    n = len(audio.samples)
    if n < seg:
        return np.zeros((0, cfg.n_mels))
    windows = np.lib.stride_tricks.sliding_window_view(audio.samples, seg)[::hop]
    parts = [segment_vectors(windows[i : i + chunk], fb, cfg) for i in range(0, len(windows), chunk)]
    return np.concatenate(parts, axis=0)


def stack_sequences(vectors, cfg: PreprocessConfig, mode: Literal["tumbling", "sliding"] = "tumbling",
                    source_id: str = "", start_time: float = 0.0) -> list[MfccSequence]:
    vectors = np.asarray(vectors, dtype=np.float64).reshape(-1, cfg.n_mels)
    S, n = cfg.stack_len, len(vectors)
    if mode == "tumbling":
        starts = range(0, n - S + 1, S)
    elif mode == "sliding":
        starts = range(0, n - S + 1)
    else:
        raise ValueError(f"unknown stacking mode {mode!r}")
    hop_s = cfg.segment_hop_ms / 1000.0
    return [
        MfccSequence(vectors[i : i + S].copy(), source_id, start_time + i * hop_s)
        for i in starts
    ]


def preprocess(audio: AudioBuffer, cfg: PreprocessConfig, mode: str = "tumbling",
               source_id: str = "", start_time: float = 0.0) -> list[MfccSequence]:
    return stack_sequences(mfcc_vectors(audio, cfg), cfg, mode, source_id, start_time)


@dataclass
class StreamingFeaturizer:
    """Incremental front end for live detection.

    Samples are pushed in arbitrary chunks; a vector is emitted whenever a full
    segment is available, then the buffer advances by one segment hop. Memory is
    bounded by one segment plus the pushed chunk.
    """

    cfg: PreprocessConfig
    fb: MelFilterbank = field(init=False)
    _buf: np.ndarray = field(init=False)
    _emitted: int = field(init=False, default=0)

    def __post_init__(self):
        self.fb = build_mel_filterbank(self.cfg)
        self._buf = np.zeros(0)

    def push(self, samples: np.ndarray) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(segment_end_time, vector)`` for each segment completed by ``samples``."""
        self._buf = np.concatenate([self._buf, np.asarray(samples, dtype=np.float64)])
        seg, hop = self.cfg.segment_samples, self.cfg.segment_hop_samples
        while len(self._buf) >= seg:
            vec = segment_vectors(self._buf[None, :seg], self.fb, self.cfg)[0]
            end = (self._emitted * hop + seg) / self.cfg.sample_rate
            self._emitted += 1
            self._buf = self._buf[hop:]
            yield end, vec


def iter_chunks(samples: np.ndarray, size: int) -> Iterable[np.ndarray]:
    for i in range(0, len(samples), size):
        yield samples[i : i + size]
