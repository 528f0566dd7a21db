import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


# criterion -> list of (part, passed, detail); filled by the acceptance suite.
_ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def acceptance_record():
    def record(criterion: int, part: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
        print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[criterion]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{part}: {'pass' if ok else 'fail'} ({text})" for part, ok, text in parts)
        terminalreporter.write_line(f"criterion {criterion:>2}: {status}  {detail}")
