import numpy as np
import pytest
from hypothesis import settings

from strukt.field import MeasurementField
from strukt.products import Partition

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def half_half(h=8, w=8, lo=0.0, hi=1.0):
    """Single-channel field: left half ``lo``, right half ``hi``."""
    v = np.full((1, h, w), lo)
    v[:, :, w // 2:] = hi
    return MeasurementField(v)


def halves_partition(h=8, w=8):
    lab = np.zeros((h, w), dtype=np.int64)
    lab[:, w // 2:] = 1
    return Partition(lab)


def random_partition(rng, h, w, max_labels):
    return Partition(rng.integers(0, max_labels, size=(h, w)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


ACCEPTANCE_LINES = {}


def record_acceptance(label, ok, detail):
    """Store the one-line verdict for acceptance criterion ``label`` (e.g. "3", "6d")."""
    line = f"criterion {label:>4}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[label] = line
    print(line)


def _label_key(label):
    digits = "".join(ch for ch in label if ch.isdigit())
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(ACCEPTANCE_LINES, key=_label_key):
        terminalreporter.write_line(ACCEPTANCE_LINES[label])
