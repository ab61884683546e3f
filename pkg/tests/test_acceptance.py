"""Acceptance criteria C1..C10; each prints one PASS/FAIL line."""
import pytest

from conftest import ACCEPTANCE_LINES
from jmgtlab import checks

CRITERIA = [getattr(checks, f"criterion_{i}") for i in range(1, 11)]


@pytest.mark.slow
@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"C{i}" for i in range(1, 11)])
def test_criterion(criterion):
    result = criterion()
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert result.passed, line
