import pytest

from kgrec.corpus import AspectOpinion, RatingRecord

# (criterion id, status, detail) lines collected by test_acceptance
ACCEPTANCE_LINES: list[tuple[str, str, str]] = []


def record_criterion(name: str, ok: bool | None, detail: str) -> None:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    ACCEPTANCE_LINES.append((name, status, detail))
    print(f"[{status}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in sorted(ACCEPTANCE_LINES, key=lambda x: int(x[0].split()[1])):
        terminalreporter.write_line(f"{status:4}  {name}: {detail}")


@pytest.fixture
def fig1_records():
    """user1 likes aspect1 but rates item1 low; user2 dislikes aspect1 but
    rates item1 high; user3 does not care about aspect2 and never rates."""
    ratings = [
        RatingRecord("user1", "item1", 2.0),
        RatingRecord("user2", "item1", 5.0),
    ]
    opinions = [
        AspectOpinion("user1", "item1", "aspect1", 0.8),
        AspectOpinion("user2", "item1", "aspect1", -0.6),
        AspectOpinion("user3", "item1", "aspect2", 0.0),
    ]
    return ratings, opinions
