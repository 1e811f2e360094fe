"""Shared pytest plumbing: collect acceptance results for a summary block."""

_acceptance_results: list[tuple[int, str, bool, str]] = []


def record_acceptance(num: int, name: str, ok: bool, detail: str) -> None:
    _acceptance_results.append((num, name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in sorted(_acceptance_results):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} {name}: {status} ({detail})")
