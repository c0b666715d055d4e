import numpy as np
import pytest

from fssl.data import GenConfig, synth_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_GEN = dict(n_devices=10, days=6, server_days=2, eval_days=1, clips_per_device_day=1, clip_seconds=0.5)


@pytest.fixture(scope="session")
def tiny_split():
    """A few devices over a few days: enough to exercise every routing rule quickly."""
    return synth_corpus(GenConfig(**TINY_GEN), seed=3)


ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Criterion number -> (passed, detail); printed as a block at the end of the session."""
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
