"""Regression covariates for spread-deviation episodes.

Nine book snapshot quantities measured right after the opening event, their
exponentially weighted lags, and the count of recent deviations.
"""

from __future__ import annotations

from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .book import ASK, BID, OrderBook
from .deviations import DeviationEpisode, recent_episode_counts
from .ingest import DayLog

INSTANT_NAMES = [
    "ask", "bid", "askVolume", "bidVolume", "bidModified", "askModified",
    "bidAge", "askAge", "spreads",
]
LAGGED_NAMES = ["l" + name for name in INSTANT_NAMES]
COVARIATE_NAMES = INSTANT_NAMES + LAGGED_NAMES + ["prevexceed"]


class NoEpisodes(ValueError):
    pass


class TooFewRows(ValueError):
    pass


@dataclass(frozen=True)
class DesignParams:
    levels: int = 5
    ewl_weight: float = 0.75
    ewl_lags: int = 5
    ewl_interval_us: int = 1_000_000
    prevexceed_window_us: int = 1_000_000


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    censored: np.ndarray
    names: list[str] = field(default_factory=lambda: list(COVARIATE_NAMES))
    start_times: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    sds: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None
    dropped: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(self.names + ["response", "censored"]) + "\n")
            for row, y, cens in zip(self.X.tolist(), self.y.tolist(), self.censored.tolist()):
                fh.write(",".join(map(repr, row)) + f",{y!r},{int(cens)}\n")

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DesignMatrix":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split(",")
            if header[-2:] != ["response", "censored"]:
                raise ValueError("design CSV must end with response,censored columns")
            rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
        k = len(header) - 2
        X = np.array([[float(v) for v in r[:k]] for r in rows], dtype=float).reshape(len(rows), k)
        y = np.array([float(r[k]) for r in rows], dtype=float)
        cens = np.array([r[k + 1] == "1" for r in rows], dtype=bool)
        return cls(X, y, cens, header[:k])


def _side_values(book: OrderBook, levels: int, now: int) -> tuple:
    a = book.depth_stats(ASK, levels, now)
    b = book.depth_stats(BID, levels, now)
    return a, b


def instantaneous_covariates(book: OrderBook, levels: int = 5) -> Optional[np.ndarray]:
    """The nine snapshot covariates, or None when either side is empty."""
    spread = book.spread()
    if spread is None:
        return None
    a, b = _side_values(book, levels, book.current_time)
    return np.array([
        a.order_count, b.order_count, a.total_volume, b.total_volume,
        b.modified_count, a.modified_count, b.mean_age_ms, a.mean_age_ms,
        spread - 1,
    ], dtype=float)


def lag_sample(book: OrderBook, now: int, levels: int = 5) -> np.ndarray:
    """Snapshot covariates at an earlier time; an undefined spread contributes 0."""
    spread = book.spread()
    a, b = _side_values(book, levels, now)
    return np.array([
        a.order_count, b.order_count, a.total_volume, b.total_volume,
        b.modified_count, a.modified_count, b.mean_age_ms, a.mean_age_ms,
        0.0 if spread is None else spread - 1,
    ], dtype=float)


def ewl_covariates(
    sampler: Callable[[int], Optional[np.ndarray]],
    t: int,
    w: float = 0.75,
    d: int = 5,
    delta: int = 1_000_000,
) -> np.ndarray:
    """Sum of ``w**n * sampler(t - n*delta)`` for n = 1..d.

    ``sampler`` returns None for times with no history; those lags add zero.
    """
    total = np.zeros(len(INSTANT_NAMES))
    for n in range(1, d + 1):
        x = sampler(t - n * delta)
        if x is not None:
            total += w ** n * np.asarray(x, dtype=float)
    return total


def build_design_matrix(
    day: DayLog,
    episodes: Sequence[DeviationEpisode],
    params: DesignParams = DesignParams(),
) -> DesignMatrix:
    """One row per episode: snapshot, lagged and prevexceed covariates.

    The response is log observed duration in milliseconds. Rows whose book has
    an empty side at the opening event are dropped and counted.
    """
    if not episodes:
        raise NoEpisodes("no deviation episodes to build a design from")
    events = day.events
    stamps = [e.timestamp for e in events]
    # event index -> list of (episode row, lag number, query time)
    requests: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
    for row, ep in enumerate(episodes):
        idx = ep.event_index
        if idx < 0:
            idx = bisect_right(stamps, ep.start_time) - 1
        requests[idx].append((row, 0, ep.start_time))
        for n in range(1, params.ewl_lags + 1):
            when = ep.start_time - n * params.ewl_interval_us
            j = bisect_right(stamps, when) - 1
            if when < day.session_start or j < 0:
                continue
            requests[j].append((row, n, when))

    instant: dict[int, Optional[np.ndarray]] = {}
    lagged: dict[tuple[int, int], np.ndarray] = {}
    last_needed = max(requests)
    book = OrderBook()
    for idx in range(last_needed + 1):
        book.apply(events[idx])
        reqs = requests.get(idx)
        if reqs is None:
            continue
        for row, n, when in reqs:
            if n == 0:
                instant[row] = instantaneous_covariates(book, params.levels)
            else:
                lagged[(row, n)] = lag_sample(book, when, params.levels)

    recent = recent_episode_counts(episodes, params.prevexceed_window_us)
    rows, ys, cens, starts = [], [], [], []
    dropped = 0
    for row, ep in enumerate(episodes):
        x = instant.get(row)
        if x is None:
            dropped += 1
            continue
        lag = ewl_covariates(
            lambda when, row=row, ep=ep: lagged.get(
                (row, (ep.start_time - when) // params.ewl_interval_us)),
            ep.start_time, params.ewl_weight, params.ewl_lags, params.ewl_interval_us,
        )
        rows.append(np.concatenate([x, lag, [recent[row]]]))
        ys.append(np.log(ep.observed_time / 1000.0))
        cens.append(ep.censored)
        starts.append(ep.start_time)

    X = np.array(rows, dtype=float).reshape(len(rows), len(COVARIATE_NAMES))
    return DesignMatrix(
        X, np.array(ys, dtype=float), np.array(cens, dtype=bool),
        start_times=np.array(starts, dtype=np.int64), dropped=dropped,
    )


def standardize(m: DesignMatrix) -> DesignMatrix:
    """Centre and scale every column (population sd); constant columns become 0."""
    if m.n < 2:
        raise TooFewRows("standardization needs at least two rows")
    means = m.X.mean(axis=0)
    sds = m.X.std(axis=0)
    degenerate = sds <= 1e-12 * np.maximum(1.0, np.abs(means))
    safe = np.where(degenerate, 1.0, sds)
    Z = (m.X - means) / safe
    Z[:, degenerate] = 0.0
    return replace(m, X=Z, means=means, sds=sds, degenerate=degenerate)


def pairwise_correlations(m: Union[DesignMatrix, np.ndarray]) -> np.ndarray:
    """Pearson correlations between columns; constant columns correlate 0 with others."""
    X = m.X if isinstance(m, DesignMatrix) else np.asarray(m, dtype=float)
    if X.shape[0] < 2:
        raise TooFewRows("correlations need at least two rows")
    C = X - X.mean(axis=0)
    norms = np.sqrt((C * C).sum(axis=0))
    degenerate = norms <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    U = C / np.where(degenerate, 1.0, norms)
    U[:, degenerate] = 0.0
    R = np.clip(U.T @ U, -1.0, 1.0)
    R = (R + R.T) / 2
    np.fill_diagonal(R, 1.0)
    return R
