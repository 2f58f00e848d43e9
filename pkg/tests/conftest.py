import sys

import numpy as np
import pytest

from coocnet.image_io import Image


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, h, w, channels=3):
    return Image(rng.integers(0, 256, size=(h, w, channels), dtype=np.uint8))


@pytest.fixture
def make_image(rng):
    def _make(h=8, w=8, channels=3):
        return random_image(rng, h, w, channels)

    return _make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 10):
        if n in mod.RESULTS:
            ok, detail = mod.RESULTS[n]
            tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")
        else:
            tr.write_line(f"----  criterion {n}: not run")
    for key in ("table6", "table7"):
        if key in mod.RESULTS:
            tr.write_line("")
            tr.write_line(mod.RESULTS[key])
