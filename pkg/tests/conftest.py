import hashlib

import numpy as np
import pytest

from colorgan.data import synth_isogray_dataset
from colorgan.train import make_config


def tiny_config(mode="YUV", **kw):
    kw.setdefault("m", 4)
    kw.setdefault("iterations", 3)
    return make_config(8, mode, g_widths=[4, 4, 4, 4, 4], d_widths=[4, 4, 4, 4], z_dim=8, **kw)


def digest(tensors: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name].data).tobytes())
    return h.hexdigest()


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_isogray_dataset(32, 8, 0)


# one verdict line per acceptance criterion, echoed after the run
ACCEPTANCE: list[str] = []


def record_verdict(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append(f"criterion {number} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
