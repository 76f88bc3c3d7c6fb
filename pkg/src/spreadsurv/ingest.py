"""Event-log CSV parsing, serialization and replay validation.

File format, one event per line after a fixed header::

    timestamp_ms,order_id,side,action,price_ticks,size

``side`` is ``b``/``a`` and ``action`` is ``S``/``E``/``C``. Timestamps are
milliseconds since midnight; up to three fractional digits carry
sub-millisecond resolution and are stored internally as integer microseconds.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Optional, Union

from .book import ACTIONS, CANCEL, EXECUTE, SIDES, SUBMIT, CrossedBookError, LobEvent, OrderBook

logger = logging.getLogger(__name__)

HEADER = "timestamp_ms,order_id,side,action,price_ticks,size"
DEFAULT_SESSION = (8 * 3600 * 1_000_000, (16 * 3600 + 30 * 60) * 1_000_000)


class MalformedHeader(ValueError):
    pass


class NonMonotoneTimestamp(ValueError):
    pass


@dataclass
class DayLog:
    date: str
    events: list[LobEvent]
    session_start: int = DEFAULT_SESSION[0]
    session_end: int = DEFAULT_SESSION[1]


@dataclass
class ValidationReport:
    events_total: int = 0
    submits: int = 0
    executes: int = 0
    cancels: int = 0
    unknown_ids: int = 0
    crossed_incidents: int = 0
    malformed_lines: int = 0
    problems: list[str] = field(default_factory=list, repr=False, compare=False)

    @property
    def has_findings(self) -> bool:
        return bool(self.unknown_ids or self.crossed_incidents or self.malformed_lines)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("problems")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def parse_timestamp_ms(text: str) -> int:
    """'34200000' -> 34200000000 us; '12.5' -> 12500 us. Exact, no floats."""
    whole, dot, frac = text.partition(".")
    if not whole.isdigit() or (dot and (not frac.isdigit() or len(frac) > 3)):
        raise ValueError(f"bad timestamp {text!r}")
    us = int(whole) * 1000
    if frac:
        us += int(frac.ljust(3, "0"))
    return us


def format_timestamp_ms(us: int) -> str:
    ms, rem = divmod(us, 1000)
    return str(ms) if rem == 0 else f"{ms}.{rem:03d}"


def _lines(source) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            yield from fh
        return
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    for line in source:
        yield line.decode("utf-8") if isinstance(line, (bytes, bytearray)) else line


def parse_event_log(
    source: Union[str, Path, IO, bytes],
    date: str = "",
    session: Optional[tuple[int, int]] = None,
) -> tuple[DayLog, ValidationReport]:
    """Parse an event CSV into a DayLog plus a report of skipped lines.

    Sequence numbers follow file order. Execute/cancel lines whose id was never
    submitted earlier in the file are counted as unknown ids here; the full
    replay check lives in :func:`validate_log`.
    """
    report = ValidationReport()
    events: list[LobEvent] = []
    seen: set[str] = set()
    last_ts = -1
    lines = iter(_lines(source))
    header = next(lines, None)
    if header is None or header.rstrip("\r\n") != HEADER:
        raise MalformedHeader(f"expected header {HEADER!r}, got {header!r}")

    for lineno, raw in enumerate(lines, start=2):
        line = raw.rstrip("\r\n")
        if not line:
            continue
        parts = line.split(",")
        try:
            if len(parts) != 6:
                raise ValueError(f"expected 6 fields, got {len(parts)}")
            ts_s, oid, side, action, price_s, size_s = parts
            ts = parse_timestamp_ms(ts_s)
            price = int(price_s)
            size = int(size_s)
            if not oid:
                raise ValueError("empty order id")
            if side not in SIDES:
                raise ValueError(f"bad side {side!r}")
            if action not in ACTIONS:
                raise ValueError(f"bad action {action!r}")
            if action == SUBMIT and (price <= 0 or size <= 0):
                raise ValueError("submit needs positive price and size")
            if size < 0 or price < 0:
                raise ValueError("negative price or size")
        except ValueError as exc:
            report.malformed_lines += 1
            report.problems.append(f"line {lineno}: {exc}")
            continue
        if ts < last_ts:
            raise NonMonotoneTimestamp(f"line {lineno}: {ts} us after {last_ts} us")
        last_ts = ts

        if action == SUBMIT:
            seen.add(oid)
            report.submits += 1
        else:
            if oid not in seen:
                report.unknown_ids += 1
            if action == EXECUTE:
                report.executes += 1
            else:
                report.cancels += 1
        events.append(LobEvent(ts, len(events), oid, side, action, price, size))

    report.events_total = len(events)
    start, end = session or DEFAULT_SESSION
    if events:
        start = min(start, events[0].timestamp)
        end = max(end, events[-1].timestamp)
    return DayLog(date, events, start, end), report


def serialize_event_log(day: DayLog, dest: Union[str, Path, IO]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8", newline="\n") as fh:
            serialize_event_log(day, fh)
        return
    write = dest.write
    write(HEADER + "\n")
    chunk = []
    for e in day.events:
        chunk.append(f"{format_timestamp_ms(e.timestamp)},{e.order_id},{e.side},{e.action},{e.price},{e.size}\n")
        if len(chunk) >= 10_000:
            write("".join(chunk))
            chunk.clear()
    write("".join(chunk))


def validate_log(day: DayLog) -> ValidationReport:
    """Replay a whole day and report action counts, unknown ids and crossings."""
    report = ValidationReport()
    book = OrderBook()
    for e in day.events:
        if e.action == SUBMIT:
            report.submits += 1
        elif e.action == EXECUTE:
            report.executes += 1
        elif e.action == CANCEL:
            report.cancels += 1
        try:
            if not book.apply(e):
                report.problems.append(f"seq {e.seq}: unknown order id {e.order_id}")
        except CrossedBookError as exc:
            report.crossed_incidents += 1
            report.problems.append(f"seq {e.seq}: {exc}")
    report.events_total = len(day.events)
    report.unknown_ids = book.unknown_ids
    return report
