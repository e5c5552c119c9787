import pytest

_PARTS = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_report(request):
    """Record a result for an acceptance criterion.

    A criterion checked by several tests collects one part per test and
    passes only if every part does.
    """
    parts = request.config.stash.setdefault(_PARTS, {})

    def report(number: int, ok: bool, detail: str, seconds: float) -> None:
        parts.setdefault(number, []).append((bool(ok), detail, seconds))
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.2f} s]")

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    parts = config.stash.get(_PARTS, {})
    if not parts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(parts):
        entries = parts[number]
        ok = all(e[0] for e in entries)
        detail = "; ".join(e[1] for e in entries)
        seconds = sum(e[2] for e in entries)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.2f} s]")
