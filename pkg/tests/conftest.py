import contextlib
import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.register_profile("ci", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA: dict[str, str] = {}


class _Outcome:
    detail = ""


@pytest.fixture
def criterion():
    """Record one acceptance criterion as PASS or FAIL for the end-of-run summary."""

    @contextlib.contextmanager
    def record(label: str, title: str):
        out = _Outcome()
        try:
            yield out
        except BaseException:
            _CRITERIA[label] = f"FAIL  {label}  {title}  {out.detail}".rstrip()
            raise
        _CRITERIA[label] = f"PASS  {label}  {title}  {out.detail}".rstrip()

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s[2:])):
        terminalreporter.write_line(_CRITERIA[label])
