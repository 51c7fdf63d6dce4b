import numpy as np
import pytest

from recurad.config import PipelineConfig


def tiny_config(**kw) -> PipelineConfig:
    """Seconds-scale config for plumbing tests (not for accuracy)."""
    base = dict(depth=2, resolution=16, hidden_width=4, epochs_stage1=1, epochs_stage2=1, epochs_stage3=1,
                lr=1e-3, seed=3, synth_train_count=4, synth_test_count=4, crd_widths=(2, 2, 2, 2))
    base.update(kw)
    return PipelineConfig(**base).validate()


@pytest.fixture
def tiny():
    return tiny_config()


# One line per acceptance criterion, printed after the run.
ACCEPTANCE: dict = {}


@pytest.fixture
def verdict(request):
    """Record ``(passed, detail)`` for the calling acceptance test."""
    def record(passed: bool, detail: str) -> None:
        ACCEPTANCE[request.node.name] = (bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance")
    for name, (passed, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
