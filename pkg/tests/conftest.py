import pytest

RESULTS = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion, then enforce it."""
    lines = request.config.stash.setdefault(RESULTS, [])

    def record(number, title, passed, detail=""):
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        line = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")
        lines.append(line)
        print(line)
        if passed is None:
            pytest.skip(detail)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(RESULTS, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
