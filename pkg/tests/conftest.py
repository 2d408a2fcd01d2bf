import numpy as np
import pytest
from hypothesis import settings

from nbundle.qspace import build_space

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def space10():
    return build_space(10)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# acceptance verdicts: criterion -> list of (part, ok, detail)
VERDICTS: dict[int, list] = {}


@pytest.fixture(scope="session")
def verdict():
    def record(criterion: int, part: str, ok: bool, detail: str) -> bool:
        VERDICTS.setdefault(criterion, []).append((part, bool(ok), detail))
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(VERDICTS):
        parts = VERDICTS[c]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name} {'' if name.endswith('(info)') else 'ok ' if ok else 'FAILED '}({d})"
                           for name, ok, d in parts)
        terminalreporter.write_line(f"criterion {c:2d}: {status} | {detail}")
