import os
import sys

import pytest

from biounet import data, pipeline

sys.path.insert(0, os.path.dirname(__file__))

TINY = dict(stage_widths=(4, 4, 8, 8), epochs=2, batch_clr=8, batch_cls=16, batch_seg=4)


@pytest.fixture(scope="session")
def tiny_a():
    ds = data.gen_synthetic(64, 32, seed=1)
    ds.stats = data.compute_stats(ds)
    return ds


@pytest.fixture(scope="session")
def tiny_b():
    return data.gen_synthetic(24, 32, seed=1, labeled=False)


@pytest.fixture
def tiny_config():
    return pipeline.RunConfig(**TINY)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
