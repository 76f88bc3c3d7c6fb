import pytest

from spreadsurv.book import ASK, BID, SUBMIT, LobEvent, OrderBook
from spreadsurv.synthetic import SyntheticConfig, generate_synthetic_day

# filled by test_acceptance; printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def submit(t, oid, side, price, size, seq=0):
    return LobEvent(t, seq, oid, side, SUBMIT, price, size)


@pytest.fixture
def fig1_book():
    """Snapshot with asks 70@2702, 100@2702, 150@2704, 120@2705 and best bid 2700."""
    book = OrderBook()
    events = [
        submit(1000, "a1", ASK, 2702, 70),
        submit(2000, "a2", ASK, 2702, 100),
        submit(3000, "a3", ASK, 2704, 150),
        submit(4000, "a4", ASK, 2705, 120),
        submit(5000, "b1", BID, 2700, 200),
        submit(6000, "b2", BID, 2699, 300),
        submit(7000, "b3", BID, 2697, 100),
    ]
    for i, e in enumerate(events):
        book.apply(e._replace(seq=i))
    return book


@pytest.fixture(scope="session")
def small_day():
    return generate_synthetic_day(SyntheticConfig(seed=11, event_count=30_000, shock_rate=0.1))
