import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cartbias.data import AuditDataset, FeatureSchema  # noqa: E402

_ACCEPTANCE = []


def make_dataset(X, y, orientation="performance"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    schema = FeatureSchema.continuous([f"x{i + 1}" for i in range(X.shape[1])])
    return AuditDataset(schema, X, np.asarray(y, dtype=float), orientation)


@pytest.fixture
def step_data():
    return make_dataset([1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None and rep.when == "call":
        _ACCEPTANCE.append((marker.args[0], rep.outcome, getattr(item, "_detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_ACCEPTANCE):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {label}" + (f"  ({detail})" if detail else ""))
