import numpy as np
import pytest

from slrprune.mnist import export_subset


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """The bundled MNIST subset exported once as IDX files."""
    pytest.importorskip("mlxtend")
    path = tmp_path_factory.mktemp("mnist")
    export_subset(path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and return ``ok``."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
