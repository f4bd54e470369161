"""Command-line entry point: ``ncae <command> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import queue
import sys
import threading
import time
from collections import deque
from pathlib import Path

import numpy as np

from ncae import data, dsp, pipeline, profiler
from ncae.config import RunConfig, dump_config, load_config
from ncae.errors import ConfigError, DataError, NcaeError, NumericalError
from ncae.evaluate import (RunResult, Threshold, classify, error_map, monte_carlo, reconstruct,
                           score_batch, write_matrix_csv, write_pgm)
from ncae.models import build_model, count_params, denormalize, load_model
from ncae.training import grid_search

log = logging.getLogger("ncae")

COMMANDS = ("synth", "preprocess", "train", "sweep", "montecarlo", "profile", "detect", "errormap")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg: RunConfig) -> pipeline.SequenceDataset:
    """Cached sequences if present, otherwise preprocess the corpus and cache it."""
    if (Path(cfg.cache_dir) / "sequences.csv").exists():
        return pipeline.load_dataset(cfg.cache_dir)
    return _preprocess(cfg)


def _preprocess(cfg: RunConfig) -> pipeline.SequenceDataset:
    ds = pipeline.build_dataset(cfg.corpus_dir, cfg.preprocess(), cfg.split_fraction, cfg.split_seed,
                                cfg.event_threshold, cfg.stack_mode)
    pipeline.save_dataset(ds, cfg.cache_dir)
    return ds


def _arrays(cfg: RunConfig) -> dict[str, np.ndarray]:
    return _dataset(cfg).arrays(cfg.n_mels, cfg.stack_len)


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, args) -> int:
    rows = data.synth_generate(cfg.synth(), cfg.corpus_dir)
    print(f"wrote {len(rows)} files + manifest.csv to {cfg.corpus_dir}")
    return 0


def cmd_preprocess(cfg: RunConfig, args) -> int:
    ds = _preprocess(cfg)
    with open(Path(cfg.cache_dir) / "vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "split", "sequence", "row"] + [f"c{j}" for j in range(cfg.n_mels)])
        for ev in ds.events:
            for i, seq in enumerate(ev.sequences):
                for r, vec in enumerate(seq):
                    w.writerow([ev.source_id, ev.split, i, r] + [f"{x:.8g}" for x in vec])
    counts = {s: sum(len(e.sequences) for e in ds.events if e.split == s) for s in pipeline.SPLITS}
    print(f"{len(ds.events)} events -> " + ", ".join(f"{k}: {v}" for k, v in counts.items()))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    arrays = _arrays(cfg)
    run = pipeline.fit_and_evaluate(arrays, cfg.train(), cfg.model, cfg.sigma_multiplier)
    model_path = Path(cfg.model_path)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    run.model.save(model_path)
    out = _out_dir(cfg)
    run.record.to_csv(out / "loss.csv")
    report = {
        "model": cfg.model,
        "kernel": cfg.kernel,
        "learning_rate": cfg.learning_rate,
        "seed": cfg.seed,
        "epochs": run.record.final_epoch,
        "stop_reason": run.record.stop_reason,
        "params": count_params(run.model),
        "auroc": run.result.auroc,
        "threshold": run.model.threshold,
        "train_seconds": run.result.train_seconds,
        "infer_seconds_per_seq": run.result.infer_seconds_per_seq,
        "scores": [{"score": float(s), "label": "abnormal" if l else "normal"}
                   for s, l in zip(run.test_scores, run.test_labels)],
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    print(f"model -> {model_path}; epochs {run.record.final_epoch} ({run.record.stop_reason}); "
          f"test AUROC {run.result.auroc:.5f}; theta {run.model.threshold['theta']:.5f}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    arrays = _arrays(cfg)

    def run_cell(kernel, lr, seed):
        return pipeline.fit_and_evaluate(arrays, cfg.train(kernel=kernel, learning_rate=lr, seed=seed),
                                         cfg.model).result.auroc

    result = grid_search(run_cell, cfg.learning_rates, cfg.kernels, cfg.seed)
    path = _out_dir(cfg) / "grid.csv"
    result.to_csv(path)
    best = result.best
    print(f"grid ({len(result.cells)} cells) -> {path}")
    print(f"best: kernel={best.kernel} learning_rate={best.learning_rate:g} auroc={best.auroc:.5f}")
    return 0


def cmd_montecarlo(cfg: RunConfig, args) -> int:
    if cfg.runs < 2:
        raise ConfigError("need R >= 2")
    arrays = _arrays(cfg)

    def run(seed) -> RunResult:
        return pipeline.fit_and_evaluate(arrays, cfg.train(seed=seed), cfg.model).result

    rep = monte_carlo(cfg.runs, run, cfg.seed)
    out = _out_dir(cfg)
    (out / "montecarlo.json").write_text(json.dumps(rep.as_dict(), indent=1))
    with open(out / "montecarlo.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "kernel", "learning_rate", "runs", "auroc_min", "auroc_max", "auroc_mean",
                    "auroc_sd", "train_seconds", "infer_seconds"])
        w.writerow([cfg.model, cfg.kernel, cfg.learning_rate, rep.runs, f"{rep.auroc_min:.5f}",
                    f"{rep.auroc_max:.5f}", f"{rep.auroc_mean:.5f}", f"{rep.auroc_sd:.5f}",
                    f"{rep.train_seconds_mean:.3f}", f"{rep.infer_seconds_mean:.6f}"])
    print(f"AUROC {rep.auroc_mean:.5f} +- {rep.auroc_sd:.5f} (min {rep.auroc_min:.5f}, max {rep.auroc_max:.5f}); "
          f"train {rep.train_seconds_mean:.2f} s, inference {rep.infer_seconds_mean:.6f} s/seq")
    return 0


def cmd_profile(cfg: RunConfig, args) -> int:
    rows = profiler.profile_table(cfg.kernels, cfg.stack_len, cfg.n_mels)
    ncae3 = profiler.flops(build_model("ncae", 3, cfg.stack_len, cfg.n_mels, 0))
    ratios = profiler.cost_ratios(ncae3)
    print(profiler.format_tables(rows, ratios))
    out = _out_dir(cfg)
    with open(out / "profile.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "kernel", "params", "mflops"])
        for name, k, p, m in rows:
            w.writerow([name, k, p, f"{m:.3f}"])
    with open(out / "ratios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + list(ratios["params"]))
        for key in ("params", "mflops"):
            w.writerow([key] + [f"{v:.3f}" for v in ratios[key].values()])
    return 0


def _threshold(model, multiplier: float) -> Threshold:
    th = model.threshold
    if not th or "mu" not in th or "sigma" not in th:
        raise DataError("model file carries no decision threshold (train it with `ncae train`)")
    return Threshold(th["mu"] + multiplier * th["sigma"], th["mu"], th["sigma"], multiplier)


def _sample_source(path: str, cfg: RunConfig):
    chunk = max(1, int(round(cfg.chunk_ms * cfg.sample_rate / 1000.0)))
    if path == "-":
        stream = sys.stdin.buffer
        while True:
            raw = stream.read(4 * chunk)
            if not raw:
                return
            raw = raw[: len(raw) - len(raw) % 4]
            yield np.frombuffer(raw, dtype="<f4").astype(np.float64)
    else:
        audio = data.read_wav(path)
        if audio.sample_rate != cfg.sample_rate:
            raise DataError(f"{path}: {audio.sample_rate} Hz audio, config expects {cfg.sample_rate} Hz")
        yield from dsp.iter_chunks(audio.samples, chunk)


def detect_stream(model, chunks, cfg: RunConfig, threshold: Threshold, emit, realtime: bool = False):
    """Two-stage streaming detector: a featurizer thread feeds a bounded queue,
    the caller's thread keeps the last S vectors and scores each full window."""
    q: queue.Queue = queue.Queue(maxsize=8)
    done = object()
    errors: list[BaseException] = []
    pcfg = cfg.preprocess()

    def produce():
        try:
            feat = dsp.StreamingFeaturizer(pcfg)
            for chunk in chunks:
                t0 = time.perf_counter()
                for item in feat.push(chunk):
                    q.put(item)
                if realtime:
                    time.sleep(max(0.0, len(chunk) / pcfg.sample_rate - (time.perf_counter() - t0)))
        except BaseException as exc:  # surfaced in the consumer
            errors.append(exc)
        finally:
            q.put(done)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    window: deque = deque(maxlen=pcfg.stack_len)
    count = 0
    while True:
        item = q.get()
        if item is done:
            break
        t, vec = item
        window.append(vec)
        if len(window) == pcfg.stack_len:
            s = float(score_batch(model, np.asarray(window)[None])[0])
            emit(t, s, threshold.theta, classify(s, threshold))
            count += 1
    worker.join()
    if errors:
        raise errors[0]
    return count


def cmd_detect(cfg: RunConfig, args) -> int:
    if not Path(cfg.model_path).exists():
        raise DataError(f"{cfg.model_path}: model file not found")
    model = load_model(cfg.model_path)
    if model.seq_len != cfg.stack_len or model.n_features != cfg.n_mels:
        raise DataError(f"model expects S={model.seq_len}, D={model.n_features}; config has "
                        f"S={cfg.stack_len}, D={cfg.n_mels}")
    th = _threshold(model, cfg.sigma_multiplier)
    out = sys.stdout
    out.write("time,score,theta,verdict\n")
    out.flush()

    def emit(t, s, theta, verdict):
        out.write(f"{t:.3f},{s:.6f},{theta:.6f},{verdict}\n")
        out.flush()

    detect_stream(model, _sample_source(args.input, cfg), cfg, th, emit, cfg.realtime)
    return 0


def cmd_errormap(cfg: RunConfig, args) -> int:
    model = load_model(cfg.model_path)
    arr = data.read_matrix(args.sequences)
    if arr.ndim == 3:
        if not 0 <= args.index < len(arr):
            raise DataError(f"{args.sequences}: index {args.index} out of range ({len(arr)} sequences)")
        arr = arr[args.index]
    if arr.shape != (model.seq_len, model.n_features):
        raise DataError(f"{args.sequences}: sequence shape {arr.shape}, model expects "
                        f"{(model.seq_len, model.n_features)}")
    xn, out = reconstruct(model, arr)
    emap = error_map(xn[0], out[0])
    stem = Path(args.sequences).stem + (f"_{args.index}" if args.index else "")
    out_dir = _out_dir(cfg)
    write_matrix_csv(out_dir / f"{stem}_recon.csv", denormalize(out[0], model.norm_stats))
    write_matrix_csv(out_dir / f"{stem}_error.csv", emap)
    write_pgm(out_dir / f"{stem}_error.pgm", emap)
    print(f"mean log10 error {emap.mean():.4f} -> {out_dir}/{stem}_error.pgm")
    return 0


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# ---------------------------------------------------------------- argument handling

def _pairs(tokens: list[str]) -> dict[str, str]:
    pairs = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument: {tok}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            value = next(it, None)
            if value is None:
                raise ConfigError(f"missing value for --{key}")
        pairs[key] = value
    return pairs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ncae", description=__doc__.splitlines()[0],
                                epilog="Any config key may be overridden as --key value.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        if name == "detect":
            sp.add_argument("input", help="WAV path, or - for raw little-endian float32 samples on stdin")
        if name == "errormap":
            sp.add_argument("sequences", help="matrix file holding one (S, D) or (n, S, D) array")
            sp.add_argument("--index", type=int, default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, _pairs(rest))
        if args.print_config:
            print(dump_config(cfg), end="")
            return 0
        return HANDLERS[args.command](cfg, args)
    except NcaeError as exc:
        print(f"ncae {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"ncae {args.command}: numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    except (ValueError, OSError) as exc:
        print(f"ncae {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
