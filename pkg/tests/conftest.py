import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, max_side=16, density=None):
    shape = tuple(int(s) for s in rng.integers(1, max_side + 1, size=3))
    density = rng.uniform(0.02, 0.6) if density is None else density
    return rng.random(shape) < density


def random_spacing(rng):
    return tuple(float(s) for s in rng.uniform(0.4, 3.5, size=3))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((rep.location[:2], f"{'PASS' if rep.passed else 'FAIL'}  {props['criterion']}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
