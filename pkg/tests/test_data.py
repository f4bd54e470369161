import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from ncae import data, evaluate
from ncae.dsp import AudioBuffer
from ncae.errors import DataError

RATE = 44100


# ---------------------------------------------------------------- WAV

def test_read_pcm16_silence(tmp_path):
    wavfile.write(tmp_path / "s.wav", RATE, np.zeros(RATE, dtype=np.int16))
    audio = data.read_wav(tmp_path / "s.wav")
    assert audio.sample_rate == RATE and len(audio.samples) == RATE
    assert not audio.samples.any()


def test_read_pcm16_full_scale(tmp_path):
    wavfile.write(tmp_path / "f.wav", RATE, np.full(10, 32767, dtype=np.int16))
    assert data.read_wav(tmp_path / "f.wav").samples[0] == pytest.approx(0.99997, abs=1e-5)


def test_float32_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, size=5000)
    data.write_wav(tmp_path / "r.wav", AudioBuffer(x, RATE), fmt="float32")
    assert np.max(np.abs(data.read_wav(tmp_path / "r.wav").samples - x)) < 1e-6


def test_read_rejects_stereo_and_int32(tmp_path):
    wavfile.write(tmp_path / "st.wav", RATE, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(DataError, match="mono"):
        data.read_wav(tmp_path / "st.wav")
    wavfile.write(tmp_path / "i32.wav", RATE, np.zeros(100, dtype=np.int32))
    with pytest.raises(DataError, match="unsupported"):
        data.read_wav(tmp_path / "i32.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(DataError):
        data.read_wav(tmp_path / "junk.wav")


# ---------------------------------------------------------------- event extraction

def bursts(spans, total):
    x = np.zeros(int(total * RATE))
    rng = np.random.default_rng(1)
    for a, b in spans:
        x[int(a * RATE) : int(b * RATE)] = 0.5 * rng.standard_normal(int(b * RATE) - int(a * RATE))
    return AudioBuffer(x, RATE)


def test_single_burst():
    ev = data.extract_events(bursts([(2.0, 5.0)], 8.0), threshold=0.05)
    assert len(ev) == 1
    assert ev[0].start == pytest.approx(2.0, abs=0.05)
    assert ev[0].end == pytest.approx(5.0, abs=0.05)


def test_two_bursts_and_merge():
    audio = bursts([(1.0, 3.0), (4.0, 6.0)], 8.0)
    assert len(data.extract_events(audio, 0.05, min_gap=0.5)) == 2
    assert len(data.extract_events(audio, 0.05, min_gap=1.5)) == 1


def test_short_burst_dropped_and_silence():
    assert data.extract_events(bursts([(1.0, 1.5)], 4.0), 0.05, min_len=1.0) == []
    assert data.extract_events(AudioBuffer(np.zeros(RATE * 3), RATE), 0.05) == []
    with pytest.raises(ValueError):
        data.extract_events(AudioBuffer(np.zeros(10), RATE), 0.0)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 9.0), st.floats(1.0, 3.0)), min_size=1, max_size=4))
def test_extraction_idempotent(spans):
    audio = bursts([(a, a + d) for a, d in spans], 13.0)
    for ev in data.extract_events(audio, 0.05):
        again = data.extract_events(ev.audio, 0.05)
        assert len(again) == 1
        assert again[0].duration == pytest.approx(ev.duration)


# ---------------------------------------------------------------- split

def fake_events(n_dry, n_wet):
    a = AudioBuffer(np.zeros(10), RATE)
    return ([data.DrivingEvent(a, 0, 1, "dry", f"d{i}") for i in range(n_dry)]
            + [data.DrivingEvent(a, 0, 1, "wet", f"w{i}") for i in range(n_wet)])


def test_split_counts():
    s = data.split_dataset(fake_events(38, 27), 0.8, seed=0)
    assert (len(s.train), len(s.test_normal), len(s.test_abnormal)) == (30, 8, 27)
    assert not {e.source_id for e in s.train} & {e.source_id for e in s.test_normal}


def test_split_seeded():
    a = data.split_dataset(fake_events(10, 1), seed=3)
    b = data.split_dataset(fake_events(10, 1), seed=3)
    assert [e.source_id for e in a.train] == [e.source_id for e in b.train]


def test_split_needs_two_dry():
    with pytest.raises(DataError):
        data.split_dataset(fake_events(1, 5))


# ---------------------------------------------------------------- synthetic corpus

def test_synth_corpus_layout(default_corpus):
    out, rows = default_corpus
    assert len(list(out.glob("*.wav"))) == 65
    assert sum(r.label == "dry" for r in rows) == 38 and sum(r.label == "wet" for r in rows) == 27
    back = data.read_manifest(out / "manifest.csv")
    assert [(r.file, r.label) for r in back] == [(r.file, r.label) for r in rows]
    assert all(abs(a.end - b.end) < 1e-6 for a, b in zip(back, rows))


def test_synth_deterministic(tmp_path):
    cfg = data.SynthConfig(n_dry=2, n_wet=2, min_duration=2.0, max_duration=3.0)
    data.synth_generate(cfg, tmp_path / "a")
    data.synth_generate(cfg, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    data.synth_generate(dataclasses.replace(cfg, seed=8), tmp_path / "c")
    assert (tmp_path / "a" / "dry_000.wav").read_bytes() != (tmp_path / "c" / "dry_000.wav").read_bytes()


def test_synth_centroid_separability(default_corpus):
    out, rows = default_corpus
    cents = np.array([data.spectral_centroid(data.read_wav(out / r.file)) for r in rows])
    wet = np.array([r.label == "wet" for r in rows])
    assert cents[wet].mean() > cents[~wet].mean()
    assert evaluate.auroc(scores=cents, labels=wet) > 0.9


def test_corpus_events_match_manifest(default_corpus):
    out, rows = default_corpus
    events = data.load_corpus_events(out)
    assert len(events) == 65
    by_file = {r.file: r for r in rows}
    for ev in events:
        row = by_file[ev.source_id.split("@")[0]]
        assert ev.label == row.label
        # the fades at either end dip under the relative threshold, trimming a little
        assert row.start - 0.05 <= ev.start and ev.end <= row.end + 0.05
        assert ev.duration > 0.9 * row.duration


# ---------------------------------------------------------------- matrix files

def test_matrix_round_trip(tmp_path):
    a = np.random.default_rng(2).standard_normal((7, 30, 128))
    data.write_matrix(tmp_path / "m.mat", a)
    assert data.read_matrix(tmp_path / "m.mat").tobytes() == a.tobytes()
    raw = (tmp_path / "m.mat").read_bytes()
    assert raw[:4] == b"NCMX"


@pytest.mark.parametrize("damage", ["magic", "truncate", "nan"])
def test_matrix_corruption(tmp_path, damage):
    p = tmp_path / "m.mat"
    a = np.ones((3, 4))
    if damage == "nan":
        a[1, 1] = np.nan
    data.write_matrix(p, a)
    raw = p.read_bytes()
    if damage == "magic":
        raw = b"XXXX" + raw[4:]
    elif damage == "truncate":
        raw = raw[:-3]
    p.write_bytes(raw)
    with pytest.raises(DataError, match="m.mat"):
        data.read_matrix(p)
