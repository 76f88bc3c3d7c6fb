"""Spread-deviation episodes: threshold choice, extraction and censoring."""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .book import CANCEL, EXECUTE, OrderBook
from .ingest import DayLog

MIN_DURATION_US = 100
WINDOW_MARGIN_US = 60_000_000

MARKET_ORDER = "market_order"
CANCELLATION = "cancellation"
OTHER = "other"
_TRIGGERS = {EXECUTE: MARKET_ORDER, CANCEL: CANCELLATION}

EPISODE_HEADER = "T_i_us,observed_us,censored,trigger"


class EmptySample(ValueError):
    pass


@dataclass(frozen=True)
class Threshold:
    c: int
    source: str = "explicit"

    def __post_init__(self):
        if self.c < 1:
            raise ValueError("threshold must be at least one tick")


@dataclass(frozen=True)
class DeviationEpisode:
    start_time: int
    observed_time: int
    censored: bool
    trigger: str = OTHER
    # index of the opening event in the day's stream; -1 when unknown
    event_index: int = -1

    @property
    def duration(self) -> Optional[int]:
        return None if self.censored else self.observed_time

    @property
    def end_time(self) -> int:
        return self.start_time + self.observed_time


def compute_threshold(spread_samples: Sequence[int]) -> Threshold:
    """Median spread in ticks; an even-sized sample rounds the central mean half-up."""
    if len(spread_samples) == 0:
        raise EmptySample("no spread observations")
    s = sorted(spread_samples)
    n = len(s)
    mid = n // 2
    if n % 2:
        c = s[mid]
    else:
        # (a + b) / 2 rounded half-up, in integers
        c = (s[mid - 1] + s[mid] + 1) // 2
    return Threshold(max(int(c), 1), "reference-day median")


def spread_samples(day: DayLog) -> list[int]:
    """Spread after every event of the day, skipping one-sided books."""
    book = OrderBook()
    bids, asks = book.prices["b"], book.prices["a"]
    out = []
    for e in day.events:
        book.apply(e)
        if bids and asks:
            out.append(asks[0] - bids[-1])
    return out


def default_window(day: DayLog) -> tuple[int, int]:
    return day.session_start + WINDOW_MARGIN_US, day.session_end - WINDOW_MARGIN_US


def extract_episodes(
    day: DayLog,
    c: Union[Threshold, int],
    t0: Optional[int] = None,
    td: Optional[int] = None,
) -> list[DeviationEpisode]:
    """Replay ``day`` and collect the episodes during which the spread exceeds ``c``.

    An episode opens at the first event time in ``[t0, td)`` with spread > c
    (one-sided books count as infinite spread) and closes at the first later
    event with spread <= c. Zero durations are floored to 100 us. Episodes
    still open at ``td`` are censored with observed time ``td - start``.
    """
    c = c.c if isinstance(c, Threshold) else int(c)
    d0, dd = default_window(day)
    t0 = d0 if t0 is None else t0
    td = dd if td is None else td
    if t0 >= td:
        raise ValueError("observation window is empty")

    book = OrderBook()
    apply = book.apply
    bids, asks = book.prices["b"], book.prices["a"]
    inf = math.inf
    episodes: list[DeviationEpisode] = []
    open_t = -1
    open_idx = -1
    trigger = OTHER

    for idx, e in enumerate(day.events):
        ts = e.timestamp
        if ts > td:
            break
        apply(e)
        spread = asks[0] - bids[-1] if bids and asks else inf
        if open_t < 0:
            if spread > c and t0 <= ts < td:
                open_t, open_idx = ts, idx
                trigger = _TRIGGERS.get(e.action, OTHER)
        elif spread <= c:
            episodes.append(DeviationEpisode(
                open_t, max(ts - open_t, MIN_DURATION_US), False, trigger, open_idx))
            open_t = -1

    if open_t >= 0:
        episodes.append(DeviationEpisode(open_t, td - open_t, True, trigger, open_idx))
    return episodes


def count_recent_episodes(episodes: Sequence[DeviationEpisode], t: int, delta: int) -> int:
    """Episodes starting in ``[t - delta, t)``; ``episodes`` must be ordered by start."""
    if delta <= 0:
        return 0
    starts = [ep.start_time for ep in episodes]
    return bisect_left(starts, t) - bisect_left(starts, t - delta)


def recent_episode_counts(episodes: Sequence[DeviationEpisode], delta: int) -> list[int]:
    """``count_recent_episodes`` evaluated at every episode start, in one pass."""
    if delta <= 0:
        return [0] * len(episodes)
    starts = [ep.start_time for ep in episodes]
    return [bisect_left(starts, t) - bisect_left(starts, t - delta) for t in starts]


def write_episodes(episodes: Iterable[DeviationEpisode], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(EPISODE_HEADER + "\n")
        for ep in episodes:
            fh.write(f"{ep.start_time},{ep.observed_time},{int(ep.censored)},{ep.trigger}\n")


def read_episodes(path: Union[str, Path]) -> list[DeviationEpisode]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != EPISODE_HEADER:
            raise ValueError(f"bad episode header {header!r}")
        out = []
        for line in fh:
            start, observed, censored, trigger = line.rstrip("\n").split(",")
            out.append(DeviationEpisode(int(start), int(observed), censored == "1", trigger))
    return out
