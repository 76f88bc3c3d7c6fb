"""Visible limit order book rebuilt from submit/execute/cancel events.

Prices are integer ticks and times are integer microseconds. Levels are kept
as insertion-ordered dicts so price-time priority falls out of dict order.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from dataclasses import dataclass
from typing import NamedTuple, Optional

BID = "b"
ASK = "a"
SUBMIT = "S"
EXECUTE = "E"
CANCEL = "C"

SIDES = (BID, ASK)
ACTIONS = (SUBMIT, EXECUTE, CANCEL)


class UnknownOrderId(KeyError):
    """Execute or cancel referencing an order that is not resting."""


class CrossedBookError(ValueError):
    """A submission would leave best bid >= best ask."""


class LobEvent(NamedTuple):
    timestamp: int
    seq: int
    order_id: str
    side: str
    action: str
    price: int
    size: int


@dataclass(slots=True)
class RestingOrder:
    order_id: str
    side: str
    price: int
    remaining_size: int
    submit_time: int
    last_revision_time: int
    revision_count: int = 0


class DepthStats(NamedTuple):
    order_count: int
    total_volume: int
    modified_count: int
    mean_age_ms: float


class OrderBook:
    """Single-writer order book.

    ``apply`` mutates in place; use :meth:`copy` to hand a frozen snapshot to
    another consumer.
    """

    def __init__(self) -> None:
        self.levels: dict[str, dict[int, dict[str, RestingOrder]]] = {BID: {}, ASK: {}}
        # ascending on both sides; best bid is prices[BID][-1]
        self.prices: dict[str, list[int]] = {BID: [], ASK: []}
        self.orders: dict[str, RestingOrder] = {}
        # order_id -> (submit_time, revision_count) for ids no longer resting
        self.retired: dict[str, tuple[int, int]] = {}
        self.current_time = 0
        self.unknown_ids = 0
        self.submitted_volume = 0
        self.executed_volume = 0
        self.cancelled_volume = 0

    # -- mutation -----------------------------------------------------------

    def apply(self, e: LobEvent) -> bool:
        """Apply one event. Returns False if it referenced an unknown order."""
        action = e.action
        if action == SUBMIT:
            self._submit(e)
        elif action == EXECUTE:
            order = self.orders.get(e.order_id)
            if order is None:
                self.unknown_ids += 1
                self.current_time = e.timestamp
                return False
            filled = min(e.size, order.remaining_size)
            self.executed_volume += filled
            order.remaining_size -= filled
            if order.remaining_size <= 0:
                self._remove(order)
        elif action == CANCEL:
            order = self.orders.get(e.order_id)
            if order is None:
                self.unknown_ids += 1
                self.current_time = e.timestamp
                return False
            self.cancelled_volume += order.remaining_size
            self._remove(order)
        else:
            raise ValueError(f"unknown action {action!r}")
        self.current_time = e.timestamp
        return True

    def _submit(self, e: LobEvent) -> None:
        side, price = e.side, e.price
        if side == BID:
            asks = self.prices[ASK]
            if asks and price >= asks[0]:
                raise CrossedBookError(f"bid {price} >= best ask {asks[0]} at t={e.timestamp}")
        else:
            bids = self.prices[BID]
            if bids and price <= bids[-1]:
                raise CrossedBookError(f"ask {price} <= best bid {bids[-1]} at t={e.timestamp}")

        oid = e.order_id
        prev = self.orders.get(oid)
        if prev is not None:
            # cancel + resubmit under the same id: priority lost, age kept
            self.cancelled_volume += prev.remaining_size
            self._remove(prev)
        history = self.retired.pop(oid, None)
        if history is None:
            order = RestingOrder(oid, side, price, e.size, e.timestamp, e.timestamp, 0)
        else:
            submit_time, revisions = history
            order = RestingOrder(oid, side, price, e.size, submit_time, e.timestamp, revisions + 1)
        self.submitted_volume += e.size

        book_side = self.levels[side]
        level = book_side.get(price)
        if level is None:
            level = book_side[price] = {}
            insort(self.prices[side], price)
        level[oid] = order
        self.orders[oid] = order

    def _remove(self, order: RestingOrder) -> None:
        oid = order.order_id
        del self.orders[oid]
        self.retired[oid] = (order.submit_time, order.revision_count)
        book_side = self.levels[order.side]
        level = book_side[order.price]
        del level[oid]
        if not level:
            del book_side[order.price]
            prices = self.prices[order.side]
            del prices[bisect_left(prices, order.price)]

    # -- queries ------------------------------------------------------------

    def best(self, side: str) -> Optional[int]:
        prices = self.prices[side]
        if not prices:
            return None
        return prices[-1] if side == BID else prices[0]

    def level_price(self, side: str, i: int) -> Optional[int]:
        """Price of the i-th occupied level from the top (1-based)."""
        if i < 1:
            raise ValueError("level index starts at 1")
        prices = self.prices[side]
        if len(prices) < i:
            return None
        return prices[-i] if side == BID else prices[i - 1]

    def top_levels(self, side: str, k: int) -> list[int]:
        prices = self.prices[side]
        if side == BID:
            return prices[::-1][:k]
        return prices[:k]

    def level_orders(self, side: str, price: int) -> list[RestingOrder]:
        return list(self.levels[side].get(price, {}).values())

    def spread(self) -> Optional[int]:
        bids, asks = self.prices[BID], self.prices[ASK]
        if not bids or not asks:
            return None
        return asks[0] - bids[-1]

    def mid_price(self) -> Optional[float]:
        bids, asks = self.prices[BID], self.prices[ASK]
        if not bids or not asks:
            return None
        return (asks[0] + bids[-1]) / 2

    def depth_stats(self, side: str, k: int = 5, now: Optional[int] = None) -> DepthStats:
        """Order count, volume, revised-order count and mean age over the top k levels.

        Ages are measured against ``now`` (defaults to the time of the last
        applied event) and reported in milliseconds.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if now is None:
            now = self.current_time
        book_side = self.levels[side]
        count = volume = modified = 0
        age_sum = 0
        for price in self.top_levels(side, k):
            for order in book_side[price].values():
                count += 1
                volume += order.remaining_size
                if order.revision_count > 0:
                    modified += 1
                age_sum += now - order.submit_time
        mean_age = age_sum / count / 1000.0 if count else 0.0
        return DepthStats(count, volume, modified, mean_age)

    def copy(self) -> "OrderBook":
        other = OrderBook()
        for side in SIDES:
            for price, level in self.levels[side].items():
                other.levels[side][price] = {
                    oid: RestingOrder(
                        o.order_id, o.side, o.price, o.remaining_size,
                        o.submit_time, o.last_revision_time, o.revision_count,
                    )
                    for oid, o in level.items()
                }
            other.prices[side] = list(self.prices[side])
        for level_map in other.levels.values():
            for level in level_map.values():
                other.orders.update(level)
        other.retired = dict(self.retired)
        other.current_time = self.current_time
        other.unknown_ids = self.unknown_ids
        other.submitted_volume = self.submitted_volume
        other.executed_volume = self.executed_volume
        other.cancelled_volume = self.cancelled_volume
        return other

    def state_key(self) -> tuple:
        """Hashable view of the resting orders, for equality checks."""
        return tuple(
            (side, price, tuple(
                (o.order_id, o.remaining_size, o.submit_time, o.last_revision_time, o.revision_count)
                for o in self.levels[side][price].values()
            ))
            for side in SIDES
            for price in self.prices[side]
        )


def apply_event(book: OrderBook, e: LobEvent) -> OrderBook:
    book.apply(e)
    return book


def sweep(book: OrderBook, aggressor: str, size: int, timestamp: int, seq: int) -> list[LobEvent]:
    """Execution events a marketable order of ``size`` would generate.

    Walks the opposite side in price-time priority. The book is not modified;
    feed the returned events through :meth:`OrderBook.apply`.
    """
    passive = ASK if aggressor == BID else BID
    out: list[LobEvent] = []
    left = size
    prices = book.prices[passive]
    ordered = prices if passive == ASK else prices[::-1]
    for price in ordered:
        for order in book.levels[passive][price].values():
            take = min(left, order.remaining_size)
            out.append(LobEvent(timestamp, seq + len(out), order.order_id, passive, EXECUTE, price, take))
            left -= take
            if left == 0:
                return out
    return out
