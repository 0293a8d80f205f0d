import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture(scope="session")
def benchmark_path() -> Path:
    return ROOT / "benchmarks" / "cf-bench.quil"


@pytest.fixture(scope="session")
def benchmark_text(benchmark_path) -> str:
    return benchmark_path.read_text()


@pytest.fixture(scope="session")
def aspen_path() -> Path:
    return ROOT / "devices" / "aspen-16.json"


@pytest.fixture(scope="session")
def aspen_hetero_path() -> Path:
    return ROOT / "devices" / "aspen-16-hetero.json"


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2} [{'PASS' if ok else 'FAIL'}] {detail}")
