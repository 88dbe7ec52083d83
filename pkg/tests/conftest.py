from __future__ import annotations

import pytest

# criterion number -> list of (ok, detail); a criterion passes only if every part does
_ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


class Recorder:
    def __call__(self, number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance() -> Recorder:
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[n]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d if ok else f"[failed] {d}" for ok, d in parts)
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {detail}")
