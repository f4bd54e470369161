import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ncae import data
from ncae.cli import main
from ncae.models import load_model


def flags(**kw):
    return [tok for k, v in kw.items() for tok in (f"--{k}", str(v))]


@pytest.fixture
def small(small_corpus, tmp_path):
    corpus, _ = small_corpus
    return dict(corpus_dir=corpus, cache_dir=tmp_path / "cache", out_dir=tmp_path / "runs",
                model_path=tmp_path / "m.ncae", max_epochs=15)


def verdict_rows(text):
    lines = text.strip().splitlines()
    assert lines[0] == "time,score,theta,verdict"
    return list(csv.DictReader(lines))


def split_files(cache_dir, split):
    with open(cache_dir / "sequences.csv") as fh:
        return [r for r in csv.DictReader(fh) if r["split"] == split]


# ---------------------------------------------------------------- config handling

def test_unknown_key_names_the_key(capsys, tmp_path):
    assert main(["synth", "--corpus_dir", str(tmp_path), "--no_such_key", "3"]) == 1
    assert "no_such_key" in capsys.readouterr().err


def test_unknown_key_in_config_file(capsys, tmp_path):
    (tmp_path / "run.cfg").write_text("# comment\nkernel = 3\nbogus = 1\n")
    assert main(["profile", "--config", str(tmp_path / "run.cfg")]) == 1
    assert "bogus" in capsys.readouterr().err


def test_print_config(capsys, tmp_path):
    (tmp_path / "run.cfg").write_text("kernel = 5\n")
    assert main(["train", "--config", str(tmp_path / "run.cfg"), "--seed", "4", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert "kernel = 5\n" in text and "seed = 4\n" in text


def test_missing_subcommand():
    assert main([]) == 1


# ---------------------------------------------------------------- synth / preprocess

def test_synth_default_creates_corpus(default_corpus, tmp_path, capsys):
    out = tmp_path / "new" / "corpus"
    assert main(["synth", "--corpus_dir", str(out)]) == 0
    assert len(list(out.glob("*.wav"))) == 65
    assert (out / "manifest.csv").exists()
    ref, _ = default_corpus
    assert (out / "wet_000.wav").read_bytes() == (ref / "wet_000.wav").read_bytes()


def test_preprocess_writes_cache(small, capsys):
    assert main(["preprocess"] + flags(**small)) == 0
    rows = list(csv.DictReader(open(small["cache_dir"] / "sequences.csv")))
    assert {r["split"] for r in rows} == {"train", "test_normal", "test_abnormal"}
    assert all(int(r["n_sequences"]) >= 1 for r in rows)
    assert (small["cache_dir"] / "vectors.csv").exists()


# ---------------------------------------------------------------- train

def test_train_outputs_and_determinism(small, tmp_path, capsys):
    assert main(["train"] + flags(**small)) == 0
    first = small["model_path"].read_bytes()
    losses = (small["out_dir"] / "loss.csv").read_text().splitlines()
    assert losses[0] == "epoch,loss,seconds" and len(losses) == 16
    report = json.loads((small["out_dir"] / "report.json").read_text())
    assert 0.0 <= report["auroc"] <= 1.0
    assert report["threshold"]["theta"] == pytest.approx(report["threshold"]["mu"] + 1.5 * report["threshold"]["sigma"])
    model = load_model(small["model_path"])
    assert model.threshold == report["threshold"]
    assert main(["train"] + flags(**small)) == 0
    assert small["model_path"].read_bytes() == first


def test_train_corrupt_cache(small, capsys):
    assert main(["preprocess"] + flags(**small)) == 0
    victim = small["cache_dir"] / "event_0002.mat"
    victim.write_bytes(victim.read_bytes()[:-17])
    capsys.readouterr()
    assert main(["train"] + flags(**small)) == 2
    assert "event_0002.mat" in capsys.readouterr().err


def test_train_missing_corpus(tmp_path, capsys):
    assert main(["train"] + flags(corpus_dir=tmp_path / "nothing", cache_dir=tmp_path / "c")) == 2


# ---------------------------------------------------------------- sweep / montecarlo / profile

def test_sweep_reduced_grid(small, capsys):
    assert main(["sweep"] + flags(**small, learning_rates="1e-3", kernels="3")) == 0
    rows = (small["out_dir"] / "grid.csv").read_text().splitlines()
    assert rows[0] == "kernel,learning_rate,auroc" and len(rows) == 2
    assert "best: kernel=3 learning_rate=0.001 auroc=" in capsys.readouterr().out


def test_sweep_full_grid_shape(small, capsys):
    small["max_epochs"] = 1
    assert main(["sweep"] + flags(**small)) == 0
    rows = list(csv.DictReader(open(small["out_dir"] / "grid.csv")))
    assert len(rows) == 18
    assert [(int(r["kernel"]), float(r["learning_rate"])) for r in rows[:2]] == [(3, 5e-3), (3, 1e-3)]


def test_montecarlo_deterministic(small, capsys):
    small["max_epochs"] = 3
    reports = []
    for _ in range(2):
        assert main(["montecarlo"] + flags(**small, runs=2)) == 0
        rep = json.loads((small["out_dir"] / "montecarlo.json").read_text())
        reports.append({k: v for k, v in rep.items() if "seconds" not in k})
    assert reports[0] == reports[1]
    assert reports[0]["runs"] == 2
    assert reports[0]["auroc_min"] <= reports[0]["auroc_mean"] <= reports[0]["auroc_max"]


def test_montecarlo_needs_two_runs(small, capsys):
    assert main(["montecarlo"] + flags(**small, runs=1)) == 1
    assert "need R >= 2" in capsys.readouterr().err


def test_profile(tmp_path, capsys):
    assert main(["profile", "--out_dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "147,840" in out and "8.863" in out
    rows = list(csv.DictReader(open(tmp_path / "profile.csv")))
    ncae = {int(r["kernel"]): (int(r["params"]), r["mflops"]) for r in rows if r["model"] == "NCAE"}
    assert ncae == {3: (147_840, "8.863"), 5: (246_144, "14.761"), 7: (344_448, "20.659")}
    ratios = list(csv.DictReader(open(tmp_path / "ratios.csv")))
    assert ratios[0]["FARED"] == "24.870"


def test_profile_even_kernel(tmp_path, capsys):
    assert main(["profile", "--out_dir", str(tmp_path), "--kernels", "3,4"]) == 1
    assert "kernel must be odd" in capsys.readouterr().err


# ---------------------------------------------------------------- detect

def test_detect_without_model(tmp_path, capsys):
    wav = tmp_path / "x.wav"
    data.write_wav(wav, data.AudioBuffer(np.zeros(44100), 44100))
    assert main(["detect", str(wav), "--model_path", str(tmp_path / "none.ncae")]) == 2


@pytest.mark.slow
def test_detect_short_file(trained_default, tmp_path, capsys):
    paths, _ = trained_default
    wav = tmp_path / "short.wav"
    noise = 0.1 * np.random.default_rng(0).standard_normal(int(7.7 * 44100))
    data.write_wav(wav, data.AudioBuffer(noise, 44100))
    capsys.readouterr()
    assert main(["detect", str(wav), "--model_path", str(paths["model_path"])]) == 0
    assert verdict_rows(capsys.readouterr().out) == []


@pytest.mark.slow
def test_detect_wet_file_mostly_abnormal(trained_default, capsys):
    paths, _ = trained_default
    wet = split_files(paths["cache_dir"], "test_abnormal")[0]["source_id"].split("@")[0]
    capsys.readouterr()
    assert main(["detect", str(paths["corpus_dir"] / wet), "--model_path", str(paths["model_path"])]) == 0
    rows = verdict_rows(capsys.readouterr().out)
    assert rows
    assert sum(r["verdict"] == "abnormal" for r in rows) >= 0.8 * len(rows)


@pytest.mark.slow
def test_detect_held_out_dry_file_all_normal(trained_default, capsys):
    paths, _ = trained_default
    dry = split_files(paths["cache_dir"], "test_normal")[0]["source_id"].split("@")[0]
    capsys.readouterr()
    assert main(["detect", str(paths["corpus_dir"] / dry), "--model_path", str(paths["model_path"])]) == 0
    rows = verdict_rows(capsys.readouterr().out)
    assert rows
    assert sum(r["verdict"] == "abnormal" for r in rows) == 0


@pytest.mark.slow
def test_detect_stdin_matches_file(trained_default, capsys):
    paths, _ = trained_default
    wav = paths["corpus_dir"] / "wet_001.wav"
    capsys.readouterr()
    assert main(["detect", str(wav), "--model_path", str(paths["model_path"])]) == 0
    from_file = capsys.readouterr().out
    raw = data.read_wav(wav).samples.astype("<f4").tobytes()
    proc = subprocess.run([sys.executable, "-m", "ncae", "detect", "-", "--model_path", str(paths["model_path"])],
                          input=raw, capture_output=True, check=True)
    a, b = verdict_rows(from_file), verdict_rows(proc.stdout.decode())
    assert [r["verdict"] for r in a] == [r["verdict"] for r in b]
    # float32 transport of PCM16 samples is exact
    assert [r["score"] for r in a] == [r["score"] for r in b]


# ---------------------------------------------------------------- errormap

@pytest.mark.slow
def test_errormap_outputs_and_wet_dry_contrast(trained_default, capsys):
    paths, _ = trained_default
    means = {}
    for split in ("test_normal", "test_abnormal"):
        name = split_files(paths["cache_dir"], split)[0]["file"]
        out = paths["out_dir"] / split
        assert main(["errormap", str(paths["cache_dir"] / name), "--model_path", str(paths["model_path"]),
                     "--out_dir", str(out)]) == 0
        stem = name.removesuffix(".mat")
        recon = np.loadtxt(out / f"{stem}_recon.csv", delimiter=",", skiprows=1)
        err = np.loadtxt(out / f"{stem}_error.csv", delimiter=",", skiprows=1)
        assert recon.shape == err.shape == (30, 128)
        assert (out / f"{stem}_error.pgm").read_bytes().startswith(b"P5\n128 30\n255\n")
        means[split] = err.mean()
    assert means["test_abnormal"] > means["test_normal"]


@pytest.mark.slow
def test_errormap_bad_index(trained_default, capsys):
    paths, _ = trained_default
    name = split_files(paths["cache_dir"], "train")[0]["file"]
    assert main(["errormap", str(paths["cache_dir"] / name), "--index", "999",
                 "--model_path", str(paths["model_path"]), "--out_dir", str(paths["out_dir"])]) == 2
