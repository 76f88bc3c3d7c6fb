"""Synthetic daily order flow.

Background flow is a Poisson stream of submissions (geometric offsets behind
the own-side best, occasional improvements inside the spread), cancellations
of uniformly chosen resting orders (equivalent to independent exponential
clocks on every order) and small market orders that never empty a level.
Background flow keeps the spread inside ``[1, equilibrium_spread]``.

Shocks arrive as a Poisson stream with clustered follow-ups. A shock either
sweeps the top levels of one side with a market order or cancels them in a
burst. If the spread ends up above the equilibrium band a replenishing limit
order arrives inside the spread after a log-normal delay whose location grows
with the post-shock spread and shrinks with the number of shock deviations in
the preceding second.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass

from .book import ASK, BID, CANCEL, EXECUTE, SUBMIT, LobEvent, OrderBook, sweep
from .ingest import DEFAULT_SESSION, DayLog


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    event_count: int = 200_000
    exec_fraction: float = 0.025
    # per-side mean resting orders; cancel vs submit balance targets this
    target_depth: int = 60
    depth_decay: float = 0.35
    improve_prob: float = 0.3
    revision_prob: float = 0.2
    lot_size: int = 50
    max_lots: int = 10
    equilibrium_spread: int = 2
    initial_mid: int = 2701
    tick_size: float = 0.01
    shock_rate: float = 0.02
    cluster_prob: float = 0.35
    cluster_gap_s: float = 0.3
    sweep_share: float = 0.5
    extra_level_prob: float = 0.2
    recovery_log_ms: float = 3.0
    recovery_spread_effect: float = 0.5
    recovery_prevexceed_effect: float = -0.6
    recovery_noise: float = 0.8
    time_resolution_us: int = 1000
    session_start: int = DEFAULT_SESSION[0]
    session_end: int = DEFAULT_SESSION[1]

    def validate(self) -> None:
        if not 0.0 < self.exec_fraction < 1.0:
            raise InfeasibleConfig("exec_fraction must lie in (0, 1)")
        if self.event_count <= 0 or self.target_depth <= 0:
            raise InfeasibleConfig("event_count and target_depth must be positive")
        if not 0.0 < self.depth_decay <= 1.0:
            raise InfeasibleConfig("depth_decay must lie in (0, 1]")
        if self.shock_rate < 0 or self.cluster_gap_s <= 0:
            raise InfeasibleConfig("shock rates must be non-negative, cluster gap positive")
        if not 0.0 <= self.cluster_prob < 1.0:
            raise InfeasibleConfig("cluster_prob must lie in [0, 1)")
        if self.equilibrium_spread < 1 or self.initial_mid <= self.equilibrium_spread + 50:
            raise InfeasibleConfig("equilibrium spread / initial mid out of range")
        if self.session_end <= self.session_start or self.time_resolution_us < 1:
            raise InfeasibleConfig("bad session bounds or time resolution")


class _LiveOrders:
    """Resting order ids with O(1) uniform sampling and removal."""

    def __init__(self) -> None:
        self.ids: list[str] = []
        self.pos: dict[str, int] = {}

    def add(self, oid: str) -> None:
        if oid not in self.pos:
            self.pos[oid] = len(self.ids)
            self.ids.append(oid)

    def discard(self, oid: str) -> None:
        i = self.pos.pop(oid, None)
        if i is None:
            return
        last = self.ids.pop()
        if last != oid:
            self.ids[i] = last
            self.pos[last] = i

    def __len__(self) -> int:
        return len(self.ids)


# scheduled item kinds; lower sorts first at equal times
_RECOVER, _SHOCK = 0, 1


class _Generator:
    def __init__(self, cfg: SyntheticConfig) -> None:
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.book = OrderBook()
        self.live = _LiveOrders()
        self.events: list[LobEvent] = []
        self.next_id = 0
        self.pending = False
        self.recover_at = 0.0
        self.shock_deviation_times: list[int] = []
        self.queue: list[tuple[int, int, int, object]] = []
        self.qcount = 0
        self._exec_mark = 0

    # -- helpers --------------------------------------------------------------

    def _stamp(self, t_us: float) -> int:
        res = self.cfg.time_resolution_us
        ts = int(t_us) // res * res
        last = self.events[-1].timestamp if self.events else self.cfg.session_start
        return max(ts, last)

    def _emit(self, ts: int, oid: str, side: str, action: str, price: int, size: int) -> None:
        e = LobEvent(ts, len(self.events), oid, side, action, price, size)
        self.book.apply(e)
        self.events.append(e)
        if oid in self.book.orders:
            self.live.add(oid)
        else:
            self.live.discard(oid)

    def _new_id(self) -> str:
        self.next_id += 1
        return f"o{self.next_id}"

    def _size(self) -> int:
        return self.cfg.lot_size * self.rng.randint(1, self.cfg.max_lots)

    def _schedule(self, t: float, kind: int, payload: object = None) -> None:
        self.qcount += 1
        heapq.heappush(self.queue, (t, kind, self.qcount, payload))

    def _geometric(self, p: float) -> int:
        """Number of failures before the first success, support {0, 1, ...}."""
        if p >= 1.0:
            return 0
        return int(math.log(1.0 - self.rng.random()) / math.log(1.0 - p))

    def _spread_without_best(self, side: str) -> float:
        """Spread if the best level of ``side`` disappeared."""
        second = self.book.level_price(side, 2)
        other = self.book.best(ASK if side == BID else BID)
        if second is None or other is None:
            return math.inf
        return other - second if side == BID else second - other

    # -- background flow ------------------------------------------------------

    def _submit_price(self, side: str) -> int:
        cfg, book = self.cfg, self.book
        own = book.best(side)
        other = book.best(ASK if side == BID else BID)
        spread = book.spread()
        if own is None:
            if other is None:
                half = cfg.equilibrium_spread // 2
                return cfg.initial_mid - half if side == BID else cfg.initial_mid - half + cfg.equilibrium_spread
            return other - cfg.equilibrium_spread if side == BID else other + cfg.equilibrium_spread
        if not self.pending and spread is not None and spread > 1 and self.rng.random() < cfg.improve_prob:
            return own + 1 if side == BID else own - 1
        k = self._geometric(cfg.depth_decay)
        return max(1, own - k) if side == BID else own + k

    def _submit(self, ts: int) -> None:
        side = BID if self.rng.random() < 0.5 else ASK
        self._emit(ts, self._new_id(), side, SUBMIT, self._submit_price(side), self._size())

    def _cancel(self, ts: int) -> bool:
        book = self.book
        oid = self.live.ids[self.rng.randrange(len(self.live))]
        order = book.orders[oid]
        side = order.side
        if len(book.prices[side]) < 2:
            return False
        if order.price == book.best(side) and len(book.levels[side][order.price]) == 1:
            limit = book.spread() if self.pending else self.cfg.equilibrium_spread
            if self._spread_without_best(side) > limit:
                return False
        self._emit(ts, oid, side, CANCEL, order.price, order.remaining_size)
        if self.rng.random() < self.cfg.revision_prob:
            self._emit(ts, oid, side, SUBMIT, self._submit_price(side), self._size())
        return True

    def _market(self, ts: int) -> bool:
        book = self.book
        passive = BID if self.rng.random() < 0.5 else ASK
        best = book.best(passive)
        if best is None:
            return False
        level = book.levels[passive][best]
        first = next(iter(level.values()))
        if len(level) > 1:
            size = first.remaining_size
        elif first.remaining_size > 1:
            size = self.rng.randint(1, first.remaining_size - 1)
        else:
            return False
        aggressor = ASK if passive == BID else BID
        for e in sweep(book, aggressor, size, ts, 0):
            self._emit(ts, e.order_id, e.side, e.action, e.price, e.size)
        return True

    # -- shocks ---------------------------------------------------------------

    def _shock(self, t: float) -> None:
        cfg, book, rng = self.cfg, self.book, self.rng
        ts = self._stamp(t)
        side = BID if rng.random() < 0.5 else ASK
        n_levels = 1
        while rng.random() < cfg.extra_level_prob:
            n_levels += 1
        # leave at least two levels behind so the spread stays defined
        n_levels = min(n_levels, len(book.prices[side]) - 2)
        if n_levels < 1:
            return
        levels = book.top_levels(side, n_levels)
        if rng.random() < cfg.sweep_share:
            volume = sum(o.remaining_size for p in levels for o in book.levels[side][p].values())
            aggressor = ASK if side == BID else BID
            for e in sweep(book, aggressor, volume, ts, 0):
                self._emit(ts, e.order_id, e.side, e.action, e.price, e.size)
        else:
            for p in levels:
                for o in list(book.levels[side][p].values()):
                    self._emit(ts, o.order_id, side, CANCEL, p, o.remaining_size)

        spread = book.spread()
        if spread is None or spread <= cfg.equilibrium_spread:
            return
        recent = sum(1 for s in self.shock_deviation_times if ts - 1_000_000 <= s < ts)
        self.shock_deviation_times.append(ts)
        log_ms = (
            cfg.recovery_log_ms
            + cfg.recovery_spread_effect * (spread - 1 - cfg.equilibrium_spread)
            + cfg.recovery_prevexceed_effect * recent
            + cfg.recovery_noise * rng.gauss(0.0, 1.0)
        )
        delay_us = 1000.0 * math.exp(log_ms)
        self.pending = True
        self.recover_at = t + delay_us
        self._schedule(self.recover_at, _RECOVER, side)
        if rng.random() < cfg.cluster_prob:
            gap = rng.expovariate(1.0 / cfg.cluster_gap_s) * 1e6
            self._schedule(t + delay_us + gap, _SHOCK, "cluster")

    def _recover(self, t: float, side: str) -> None:
        book, cfg = self.book, self.cfg
        ts = self._stamp(t)
        other = book.best(ASK if side == BID else BID)
        own = book.best(side)
        gap = self.rng.randint(1, cfg.equilibrium_spread)
        price = other - gap if side == BID else other + gap
        if own is not None and (price <= own if side == BID else price >= own):
            price = own
        self.pending = False
        self._emit(ts, self._new_id(), side, SUBMIT, price, self._size())

    # -- main loop ------------------------------------------------------------

    def run(self) -> list[LobEvent]:
        cfg, rng = self.cfg, self.rng
        start, end = cfg.session_start, cfg.session_end
        for _ in range(cfg.target_depth):
            self._submit(start)
        rate_per_us = cfg.event_count / (end - start)
        if cfg.shock_rate > 0:
            self._schedule(start + rng.expovariate(cfg.shock_rate) * 1e6, _SHOCK, "base")
        # revisions add a resubmission to a fraction of cancels
        rate_per_us /= 1.0 + 0.5 * cfg.revision_prob
        executions = 0
        t = float(start)

        while len(self.events) < cfg.event_count:
            t += rng.expovariate(rate_per_us)
            while self.queue and self.queue[0][0] <= t:
                when, kind, _, payload = heapq.heappop(self.queue)
                if when >= end:
                    continue
                if kind == _RECOVER:
                    self._recover(when, payload)
                elif self.pending:
                    # one deviation at a time; retry right after recovery
                    self._schedule(max(when, self.recover_at) + 1.0, _SHOCK, payload)
                else:
                    self._shock(when)
                    if payload == "base":
                        self._schedule(when + rng.expovariate(cfg.shock_rate) * 1e6, _SHOCK, "base")
            if t >= end:
                break
            ts = self._stamp(t)
            u = rng.random()
            if u < cfg.exec_fraction:
                # shocks also execute; only top up towards the target share
                executions = sum(1 for e in self.events[self._exec_mark:] if e.action == EXECUTE) + executions
                self._exec_mark = len(self.events)
                if executions < cfg.exec_fraction * len(self.events):
                    self._market(ts)
                continue
            n = len(self.live)
            p_cancel = n / (n + 2 * cfg.target_depth)
            if rng.random() < p_cancel and n > 0:
                self._cancel(ts)
            else:
                self._submit(ts)
        return self.events


def generate_synthetic_day(cfg: SyntheticConfig, date: str = "") -> DayLog:
    """Generate a replayable, uncrossed day of events; a pure function of ``cfg``."""
    cfg.validate()
    events = _Generator(cfg).run()
    return DayLog(date or f"synth-{cfg.seed}", events, cfg.session_start, cfg.session_end)
