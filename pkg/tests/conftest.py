import pytest

_CRITERIA = {}


class CriterionLog:
    """Collects one verdict line per acceptance criterion."""

    def record(self, number, ok, detail):
        _CRITERIA[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 11):
        ok, detail = _CRITERIA.get(number, (False, "no verdict (errored or not run)"))
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
