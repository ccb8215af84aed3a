import time

import pytest

from timbreswap import pipeline
from timbreswap.config import load_config

TIMINGS = {}


@pytest.fixture(scope="session")
def default_config(tmp_path_factory):
    """Default configuration, corpus synthesized and every stage trained, under a temp root."""
    root = tmp_path_factory.mktemp("default_run")
    config = load_config(None, {"root": str(root)})
    t0 = time.perf_counter()
    pipeline.synth(config)
    TIMINGS["synth"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    TIMINGS["train_summary"] = pipeline.train(config, "all")
    TIMINGS["train"] = time.perf_counter() - t0
    return config


@pytest.fixture(scope="session")
def bundle(default_config):
    return pipeline.load_bundle(default_config, need_nondistilled=True)


@pytest.fixture(scope="session")
def features(default_config, bundle):
    feats = pipeline.load_features(default_config)
    patches, latents = pipeline.patches_and_latents(feats, bundle.latent_stats, bundle.mel_stats)
    return feats, patches, latents


# -- acceptance reporting -------------------------------------------------------------

ACCEPTANCE = {}
SESSION = {}


def pytest_sessionstart(session):
    SESSION["start"] = time.perf_counter()


def pytest_collection_modifyitems(session, config, items):
    # acceptance criteria run last so the whole-run budget covers everything before them
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
