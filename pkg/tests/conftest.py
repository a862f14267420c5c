import logging

import numpy as np
import pytest

from mammocnn import BENIGN, MALIGNANT
from mammocnn.dataset import DatasetManifest, MassRecord
from mammocnn.synthetic import write_synthetic_corpus

_CRITERIA: dict[str, tuple[str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: call with (id, passed, detail); passed=None means skipped."""

    def record(cid: str, passed, detail: str = ""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        _CRITERIA[cid] = (status, detail)
        print(f"[{status}] criterion {cid}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: (len(c), c)):
        status, detail = _CRITERIA[cid]
        terminalreporter.write_line(f"{status}  criterion {cid}: {detail}")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.INFO, logger="mammocnn")


def make_manifest(n_patients, masses_per_patient, labels_for, seed=0):
    """In-memory manifest; ``labels_for(pid_index, mass_index, rng)`` picks each label."""
    rng = np.random.default_rng(seed)
    views = [("LEFT", "CC"), ("LEFT", "MLO"), ("RIGHT", "CC"), ("RIGHT", "MLO")]
    recs = []
    for i in range(n_patients):
        k = masses_per_patient(i, rng) if callable(masses_per_patient) else masses_per_patient
        for j in range(k):
            lat, view = views[j % 4]
            pid = f"P{i:04d}"
            recs.append(MassRecord(f"{pid}_{lat}_{view}_{j + 1}", pid, "-", "-", view, lat, labels_for(i, j, rng)))
    return DatasetManifest(recs)


@pytest.fixture
def mixed_manifest():
    return make_manifest(40, lambda i, r: int(r.integers(1, 4)),
                         lambda i, j, r: MALIGNANT if r.random() < 0.5 else BENIGN, seed=3)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    return write_synthetic_corpus(tmp_path_factory.mktemp("corpus"), n_patients=12, seed=1)
