"""WAV ingestion, driving-event extraction, train/test splitting and a synthetic corpus.

The synthetic corpus stands in for private road recordings: each file is one
vehicle pass-by over a quiet floor. "dry" pass-bys are low-passed rumble plus
an engine hum; "wet" pass-bys add broadband spray hiss above 4 kHz.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy.io import wavfile

from ncae.dsp import AudioBuffer
from ncae.errors import DataError

DRY, WET = "dry", "wet"


# ---------------------------------------------------------------- WAV

def read_wav(path) -> AudioBuffer:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError, EOFError) as exc:
        raise DataError(f"{path}: cannot read WAV ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype} (need PCM16 or float32)")
    return AudioBuffer(samples, int(rate))


def write_wav(path, audio: AudioBuffer, fmt: str = "pcm16") -> None:
    x = np.asarray(audio.samples)
    if fmt == "pcm16":
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = x.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, audio.sample_rate, data)


# ---------------------------------------------------------------- events

@dataclass(frozen=True)
class DrivingEvent:
    audio: AudioBuffer
    start: float
    end: float
    label: str
    source_id: str

    @property
    def duration(self) -> float:
        return self.end - self.start


def rms_envelope(audio: AudioBuffer, window_s: float = 0.05) -> np.ndarray:
    """RMS over consecutive non-overlapping windows (trailing partial window dropped)."""
    w = max(1, int(round(window_s * audio.sample_rate)))
    n = len(audio.samples) // w
    blocks = audio.samples[: n * w].reshape(n, w)
    return np.sqrt((blocks ** 2).mean(axis=1))


def default_threshold(audio: AudioBuffer, relative: float = 0.1, percentile: float = 95.0,
                      window_s: float = 0.05) -> float:
    env = rms_envelope(audio, window_s)
    if env.size == 0:
        return np.inf
    return max(relative * float(np.percentile(env, percentile)), np.finfo(float).tiny)


def extract_events(audio: AudioBuffer, threshold: float, min_gap: float = 0.5, min_len: float = 1.0,
                   window_s: float = 0.05, label: str = "", source_id: str = "") -> list[DrivingEvent]:
    """Regions whose RMS envelope exceeds ``threshold``.

    Runs separated by less than ``min_gap`` seconds are merged; runs shorter than
    ``min_len`` seconds are dropped. Boundaries fall on envelope-window edges.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    env = rms_envelope(audio, window_s)
    w = int(round(window_s * audio.sample_rate))
    active = np.concatenate([[False], env > threshold, [False]])
    edges = np.flatnonzero(np.diff(active.astype(np.int8)))
    runs = [[a, b] for a, b in zip(edges[::2], edges[1::2])]  # block indices, end exclusive
    merged: list[list[int]] = []
    for a, b in runs:
        if merged and (a - merged[-1][1]) * window_s < min_gap:
            merged[-1][1] = b
        else:
            merged.append([a, b])
    events = []
    for a, b in merged:
        if (b - a) * window_s < min_len:
            continue
        seg = AudioBuffer(audio.samples[a * w : b * w], audio.sample_rate)
        start, end = a * w / audio.sample_rate, b * w / audio.sample_rate
        sid = f"{source_id}@{start:.2f}" if source_id else f"{start:.2f}"
        events.append(DrivingEvent(seg, start, end, label, sid))
    return events


@dataclass
class DatasetSplit:
    train: list[DrivingEvent]
    test_normal: list[DrivingEvent]
    test_abnormal: list[DrivingEvent]


def split_dataset(events: list[DrivingEvent], fraction: float = 0.8, seed: int = 0) -> DatasetSplit:
    dry = [e for e in events if e.label == DRY]
    wet = [e for e in events if e.label == WET]
    if len(dry) < 2:
        raise DataError(f"need at least 2 dry events to split, got {len(dry)}")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(dry))
    n_train = int(np.floor(fraction * len(dry)))
    n_train = min(max(n_train, 1), len(dry) - 1)
    train = [dry[i] for i in order[:n_train]]
    test = [dry[i] for i in order[n_train:]]
    return DatasetSplit(train, test, wet)


# ---------------------------------------------------------------- synthetic corpus

@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    n_dry: int = 38
    n_wet: int = 27
    sample_rate: int = 44100
    min_duration: float = 10.0
    max_duration: float = 20.0
    pad: float = 1.0                 # quiet lead-in / lead-out per file, seconds
    rumble_cutoff: tuple[float, float] = (1200.0, 2000.0)
    hum_f0: tuple[float, float] = (40.0, 120.0)
    hum_level: float = 0.3
    gain_db: tuple[float, float] = (-6.0, 0.0)
    wet_level: float = 0.35          # spray RMS relative to rumble RMS
    wet_band: float = 4000.0
    background_db: float = -60.0     # floor noise RMS relative to full scale
    peak: float = 0.5

    def __post_init__(self):
        if self.n_dry < 0 or self.n_wet < 0:
            raise ValueError("event counts must be non-negative")
        if not (0 < self.min_duration <= self.max_duration):
            raise ValueError("need 0 < min_duration <= max_duration")


@dataclass(frozen=True)
class ManifestRow:
    file: str
    label: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


def _shaped_noise(n: int, rate: int, rng, lo: float | None, hi: float | None, tilt: float = 0.0) -> np.ndarray:
    """White noise band-limited in the frequency domain, with an optional 1/f**tilt slope."""
    m = sp_fft.next_fast_len(n, real=True)
    spec = sp_fft.rfft(rng.standard_normal(m))
    f = np.fft.rfftfreq(m, 1.0 / rate)
    gain = np.ones_like(f)
    if lo is not None:
        gain *= 1.0 / (1.0 + (lo / np.maximum(f, 1e-3)) ** 8)
    if hi is not None:
        gain *= 1.0 / (1.0 + (f / hi) ** 8)
    if tilt:
        gain *= np.maximum(f, 20.0) ** (-tilt / 2.0)
    x = sp_fft.irfft(spec * gain, m)[:n]
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _passby_envelope(n: int, rng) -> np.ndarray:
    """Rise to a peak somewhere mid-event and fall away, floor at ~0.25."""
    t = np.linspace(0.0, 1.0, n)
    centre = rng.uniform(0.35, 0.65)
    width = rng.uniform(0.25, 0.4)
    bump = np.exp(-0.5 * ((t - centre) / width) ** 2)
    ramp = np.clip(np.minimum(t, 1.0 - t) / 0.03, 0.0, 1.0)  # 3% fade at both ends
    return (0.25 + 0.75 * bump) * ramp


def synth_event(cfg: SynthConfig, label: str, rng) -> tuple[np.ndarray, float, float]:
    """One file's samples plus the event's (start, end) in seconds."""
    rate = cfg.sample_rate
    dur = rng.uniform(cfg.min_duration, cfg.max_duration)
    n_ev = int(round(dur * rate))
    n_pad = int(round(cfg.pad * rate))
    cutoff = rng.uniform(*cfg.rumble_cutoff)
    rumble = _shaped_noise(n_ev, rate, rng, 30.0, cutoff, tilt=1.0)
    f0 = rng.uniform(*cfg.hum_f0)
    t = np.arange(n_ev) / rate
    hum = sum(np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 6))
    hum *= cfg.hum_level / (np.sqrt(np.mean(hum ** 2)) + 1e-12)
    body = rumble + hum
    if label == WET:
        spray = _shaped_noise(n_ev, rate, rng, cfg.wet_band, None)
        body = body + cfg.wet_level * spray
    elif label != DRY:
        raise ValueError(f"unknown label {label!r}")
    env = _passby_envelope(n_ev, rng)
    gain = 10 ** (rng.uniform(*cfg.gain_db) / 20.0)
    event = body * env
    event *= gain * cfg.peak / (np.max(np.abs(event)) + 1e-12)
    background = 10 ** (cfg.background_db / 20.0) * rng.standard_normal(n_ev + 2 * n_pad)
    out = background
    out[n_pad : n_pad + n_ev] += event
    return out, n_pad / rate, (n_pad + n_ev) / rate


def synth_generate(cfg: SynthConfig, out_dir) -> list[ManifestRow]:
    """Write ``dry_XXX.wav`` / ``wet_XXX.wav`` (PCM16) and ``manifest.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, count, stream in ((DRY, cfg.n_dry, 0), (WET, cfg.n_wet, 1)):
        rng = np.random.Generator(np.random.PCG64([cfg.seed, stream]))
        for i in range(count):
            samples, start, end = synth_event(cfg, label, rng)
            name = f"{label}_{i:03d}.wav"
            write_wav(out_dir / name, AudioBuffer(samples, cfg.sample_rate))
            rows.append(ManifestRow(name, label, start, end))
    write_manifest(out_dir / "manifest.csv", rows)
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "label", "start", "end", "duration"])
        for r in rows:
            w.writerow([r.file, r.label, f"{r.start:.6f}", f"{r.end:.6f}", f"{r.duration:.6f}"])


def read_manifest(path) -> list[ManifestRow]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: manifest not found")
    with open(path, newline="") as fh:
        try:
            return [ManifestRow(r["file"], r["label"], float(r["start"]), float(r["end"]))
                    for r in csv.DictReader(fh)]
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from exc


def load_corpus_events(corpus_dir, relative_threshold: float = 0.1, min_gap: float = 0.5,
                       min_len: float = 1.0) -> list[DrivingEvent]:
    """Read every manifest file and extract its driving events by envelope thresholding."""
    corpus_dir = Path(corpus_dir)
    events = []
    for row in read_manifest(corpus_dir / "manifest.csv"):
        audio = read_wav(corpus_dir / row.file)
        th = default_threshold(audio, relative_threshold)
        events += extract_events(audio, th, min_gap, min_len, label=row.label, source_id=row.file)
    return events


def spectral_centroid(audio: AudioBuffer) -> float:
    spec = np.abs(np.fft.rfft(audio.samples)) ** 2
    f = np.fft.rfftfreq(len(audio.samples), 1.0 / audio.sample_rate)
    return float((f * spec).sum() / max(spec.sum(), 1e-300))


# ---------------------------------------------------------------- matrix files
#
# Little-endian: magic b"NCMX", u16 version (=1), u16 ndim, ndim x u32 dims, float64 data.

MATRIX_MAGIC = b"NCMX"
MATRIX_VERSION = 1


def write_matrix(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = MATRIX_MAGIC + struct.pack("<HH", MATRIX_VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read matrix file ({exc})") from exc
    if len(buf) < 8 or buf[:4] != MATRIX_MAGIC:
        raise DataError(f"{path}: not a matrix file (bad magic)")
    version, ndim = struct.unpack_from("<HH", buf, 4)
    if version != MATRIX_VERSION:
        raise DataError(f"{path}: unsupported matrix version {version}")
    try:
        dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    except struct.error as exc:
        raise DataError(f"{path}: truncated header") from exc
    off = 8 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(buf) - off != 8 * count:
        raise DataError(f"{path}: expected {8 * count} data bytes, found {len(buf) - off}")
    arr = np.frombuffer(buf, dtype="<f8", offset=off).reshape(dims).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: matrix contains non-finite values")
    return arr


def write_vectors_csv(path, vectors: np.ndarray, times=None) -> None:
    """Debug dump: one row per MFCC vector."""
    vectors = np.atleast_2d(vectors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"c{j}" for j in range(vectors.shape[1])])
        for i, v in enumerate(vectors):
            t = "" if times is None else f"{times[i]:.3f}"
            w.writerow([t] + [f"{x:.8g}" for x in v])
