from __future__ import annotations

import importlib.util
from pathlib import Path

import pytest

from contractloop.config import BudgetPolicy, Config, VerifierLimits

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"
CORPUS = FIXTURES / "corpus"
ANNOTATED = FIXTURES / "annotated"
REPLAY = FIXTURES / "replay"

HAVE_CROSSHAIR = importlib.util.find_spec("crosshair") is not None

# Filled by tests/test_acceptance.py; printed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(config, items):
    if HAVE_CROSSHAIR:
        return
    skip = pytest.mark.skip(reason="crosshair-tool not installed")
    for item in items:
        if "checker" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda text: int(text.split()[1])):
        terminalreporter.write_line(line)


@pytest.fixture
def canonical_absolute() -> str:
    return (ANNOTATED / "absolute.py").read_text()


@pytest.fixture
def bare_absolute() -> str:
    return (CORPUS / "absolute.py").read_text()


def absolute_with(*extra: str) -> str:
    """The canonical annotated absolute program with extra decorator lines inserted after ``result >= 0``."""
    lines = (ANNOTATED / "absolute.py").read_text().splitlines(keepends=True)
    at = next(i for i, line in enumerate(lines) if "result >= 0" in line) + 1
    return "".join(lines[:at] + list(extra) + lines[at:])


def fenced(code: str, before: str = "Sure.\n\n", after: str = "\nDone.\n") -> str:
    return f"{before}```python\n{code}```\n{after}"


@pytest.fixture
def make_cfg(tmp_path):
    def make(target=CORPUS / "absolute.py", **overrides) -> Config:
        values = dict(
            target_path=Path(target),
            output_dir=tmp_path / "out",
            log_dir=tmp_path / "logs",
            budget=BudgetPolicy(max_refinement_rounds=2),
        )
        values.update(overrides)
        return Config(**values)

    return make


TIGHT_LIMITS = VerifierLimits(overall_timeout_s=10, per_condition_timeout_s=1, per_path_timeout_s=0.5)
