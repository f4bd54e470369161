import dataclasses

import pytest

from ncae import data
from ncae.config import RunConfig


@pytest.fixture(scope="session")
def default_corpus(tmp_path_factory):
    """The full-size synthetic corpus with run defaults (38 dry, 27 wet)."""
    out = tmp_path_factory.mktemp("corpus")
    rows = data.synth_generate(RunConfig().synth(), out)
    return out, rows


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A quick corpus for CLI plumbing: enough events for a split and a couple of sequences each."""
    out = tmp_path_factory.mktemp("small_corpus")
    cfg = dataclasses.replace(RunConfig().synth(), n_dry=6, n_wet=3, min_duration=9.5, max_duration=10.5)
    rows = data.synth_generate(cfg, out)
    return out, rows


@pytest.fixture(scope="session")
def trained_default(default_corpus, tmp_path_factory):
    """``ncae train`` with every default on the default corpus."""
    from ncae.cli import main

    corpus, _ = default_corpus
    work = tmp_path_factory.mktemp("trained")
    paths = {
        "corpus_dir": corpus,
        "cache_dir": work / "cache",
        "out_dir": work / "runs",
        "model_path": work / "model.ncae",
    }
    argv = ["train"] + [tok for k, v in paths.items() for tok in (f"--{k}", str(v))]
    assert main(argv) == 0
    return paths, argv


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """``record(title, ok, detail)`` stores a pass/fail line for the summary, then asserts."""
    results = request.config.stash[ACCEPTANCE_KEY]
    n = int(request.node.name.split("_")[2])  # test_criterion_NN_...
    results[n] = f"FAIL criterion {n:>2}: did not complete (see errors above)"

    def record(title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n:>2}: {title}" + (f" [{detail}]" if detail else "")
        results[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
