import re

import pytest

VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion (test name ``test_criterion_NN_*``)."""
    number = int(re.match(r"test_criterion_(\d+)", request.node.name).group(1))

    def record(ok, detail):
        VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    yield record
    VERDICTS.setdefault(number, (False, "error before a verdict was reached"))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(VERDICTS):
        ok, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
