import importlib.util
import os
from pathlib import Path

import numpy as np
import pytest

# every CHAID tree grown anywhere in the suite gets its structural invariants checked
os.environ.setdefault("MAMMO_CHECK_TREES", "1")

from mammo.dataset import MAMMO_SCHEMA, Dataset  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent
UCI_NAME = "mammographic_masses.data"


def uci_path():
    """Full UCI file from $MAMMO_DATA or data/, or None."""
    for cand in (os.environ.get("MAMMO_DATA"), ROOT / "data" / UCI_NAME):
        if cand and Path(cand).is_file():
            return Path(cand)
    return None


def proxy_lines():
    """The 830 complete-case rows of the same study, as shipped by common-datasets (test-only dependency)."""
    spec = importlib.util.find_spec("common_datasets")
    if spec is None or not spec.submodule_search_locations:
        return None
    path = Path(list(spec.submodule_search_locations)[0]) / "data/classification/mammographic/mammographic.dat"
    if not path.is_file():
        return None
    return [ln.strip() for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("@")]


@pytest.fixture(scope="session")
def proxy_file(tmp_path_factory):
    lines = proxy_lines()
    if lines is None:
        pytest.skip("common-datasets not installed")
    p = tmp_path_factory.mktemp("proxy") / "mammographic_complete.data"
    p.write_text("\n".join(lines) + "\n")
    return p


def synthetic_dataset(n_benign=516, n_malignant=445, missing_rate=0.03, seed=0):
    """Random records in the mammographic schema with a learnable class signal and scattered MISSING cells."""
    rng = np.random.default_rng(seed)
    n = n_benign + n_malignant
    y = np.r_[np.zeros(n_benign, dtype=np.int64), np.ones(n_malignant, dtype=np.int64)]
    rng.shuffle(y)
    age = np.clip(np.round(rng.normal(45 + 17 * y, 12)), 18, 96)
    shape = np.where(rng.random(n) < 0.7, np.where(y == 1, 4, rng.choice([1, 2], n)), rng.integers(1, 5, n))
    margin = np.where(rng.random(n) < 0.65, np.where(y == 1, rng.choice([4, 5], n), 1), rng.integers(1, 6, n))
    density = rng.choice([1, 2, 3, 4], n, p=[0.05, 0.1, 0.8, 0.05])
    birads = np.clip(np.round(3.8 + 0.9 * y + rng.normal(0, 0.5, n)), 0, 5)
    values = np.column_stack([birads, age, shape, margin, density]).astype(float)
    holes = rng.random(values.shape) < missing_rate
    values[holes] = np.nan
    return Dataset(MAMMO_SCHEMA, values, y)


@pytest.fixture
def synth():
    return synthetic_dataset()


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    return request.param


# ---------------------------------------------------------------- acceptance registry

ACCEPTANCE = {}
TREE_CHECKS = {"checked": 0, "violations": 0}


def record(number, title, ok, detail=""):
    """Register one acceptance criterion's outcome for the end-of-session summary."""
    ACCEPTANCE[number] = (title, bool(ok), detail)


def pytest_configure(config):
    from mammo.chaid import ChaidTree

    original = ChaidTree.check_invariants

    def counted(self):
        TREE_CHECKS["checked"] += 1
        try:
            original(self)
        except AssertionError:
            TREE_CHECKS["violations"] += 1
            raise

    ChaidTree.check_invariants = counted


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    if 14 in ACCEPTANCE:
        title, ok, detail = ACCEPTANCE[14]
        n, bad = TREE_CHECKS["checked"], TREE_CHECKS["violations"]
        ACCEPTANCE[14] = (title, ok and bad == 0, f"{detail}; suite-wide {n} trees checked, {bad} violations")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        tr.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f": {detail}" if detail else ""))
    passed = sum(ok for _, ok, _ in ACCEPTANCE.values())
    tr.write_line(f"{passed}/{len(ACCEPTANCE)} criteria pass")
