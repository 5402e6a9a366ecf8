"""Deterministic discrete-event engine."""
import heapq
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional

from models.netsim_models import SimEvent
from tools.envelope_codec import canonical_json

logger = logging.getLogger(__name__)


class SchedulingError(ValueError):
    pass


@dataclass
class VirtualClock:
    now_us: int = 0

    def advance_to(self, t_us: int) -> None:
        if t_us < self.now_us:
            raise SchedulingError(f"clock cannot move backwards ({t_us} < {self.now_us})")
        self.now_us = t_us


class Simulator:
    """Event queue ordered by (fire_at_us, seq) plus the trace it produces"""

    def __init__(self, clock: Optional[VirtualClock] = None):
        self.clock = clock or VirtualClock()
        self._queue: List[SimEvent] = []
        self._next_seq = 0
        self.trace: List[Dict[str, Any]] = []

    @property
    def now_us(self) -> int:
        return self.clock.now_us

    def schedule(self, fire_at_us: int, kind: str, action: Optional[Callable[[], None]] = None, /,
                 **details: Any) -> int:
        """Enqueue an event; returns its id (the insertion sequence number)"""
        if fire_at_us < self.clock.now_us:
            raise SchedulingError(
                f"cannot schedule {kind!r} at {fire_at_us}us, clock is at {self.clock.now_us}us"
            )
        seq = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._queue, SimEvent(fire_at_us, seq, kind, details, action))
        return seq

    def schedule_in(self, delay_us: int, kind: str, action: Optional[Callable[[], None]] = None, /,
                    **details: Any) -> int:
        return self.schedule(self.clock.now_us + delay_us, kind, action, **details)

    def peek_time(self) -> Optional[int]:
        return self._queue[0].fire_at_us if self._queue else None

    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> Optional[SimEvent]:
        """Process the next event; None when the queue is exhausted"""
        if not self._queue:
            return None
        event = heapq.heappop(self._queue)
        self.clock.advance_to(event.fire_at_us)
        self.trace.append({
            "time_us": event.fire_at_us,
            "seq": event.seq,
            "kind": event.kind,
            "details": event.details,
        })
        if event.action is not None:
            event.action()
        return event

    def run(self, until_us: Optional[int] = None,
            stop_when: Optional[Callable[[], bool]] = None) -> int:
        """Step until exhaustion, until_us, or stop_when(); returns events processed"""
        processed = 0
        while self._queue:
            if stop_when is not None and stop_when():
                break
            if until_us is not None and self.peek_time() > until_us:
                break
            self.step()
            processed += 1
        if until_us is not None and self.clock.now_us < until_us and not (stop_when and stop_when()):
            self.clock.advance_to(until_us)
        logger.debug("processed %d events, clock at %dus", processed, self.clock.now_us)
        return processed

    def trace_lines(self) -> Iterable[bytes]:
        for record in self.trace:
            yield canonical_json(record)

    def export_trace(self, path: str) -> None:
        with open(path, "wb") as fh:
            for line in self.trace_lines():
                fh.write(line + b"\n")
