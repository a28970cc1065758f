import numpy as np
import pytest

from tspformer.model import ModelConfig, TSPTransformer
from tspformer.tsp import Instance


@pytest.fixture
def square():
    return Instance([(0, 0), (1, 0), (1, 1), (0, 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model(seed=0, **overrides) -> TSPTransformer:
    cfg = dict(d=16, layers=1, heads=2, ffn_dim=32, dropout=0.0)
    cfg.update(overrides)
    return TSPTransformer(ModelConfig(**cfg), seed=seed).eval()


# --- acceptance reporting ----------------------------------------------------

def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def report(request):
    """Call ``report(criterion, passed, detail)`` once per acceptance criterion."""

    def _report(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
