"""Per-cell decoding workers: parallel decode, ordered assembly, snapshots.

Each cell has one producer feeding subframes in sfn order to a pool of
stateless decode executors. A single assembler owns the cell's tracker.
Decode hints for subframe k come from the tracker snapshot published at
the 10 ms boundary 10*floor((k - 16) / 10), so the hints never depend on
how fast the executors happen to run: any pool size yields the same output.
"""
from __future__ import annotations

import logging
import os
from collections import deque
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .cell import CellConfig
from .decoder import DecodeReport, decode_subframe
from .tracker import TrackerSnapshot, UeTracker, WINDOW

log = logging.getLogger(__name__)

HISTORY = 320
QUEUE_DEPTH = 64
SNAPSHOT_MS = 10
MAX_POOL = 8
SNAPSHOT_KEEP = 32  # boundaries retained for readers

ACCEPTED = "accepted"
BACKPRESSURE = "backpressure"
REJECTED = "rejected"


def default_pool_size() -> int:
    return max(1, min(MAX_POOL, os.cpu_count() or 1))


@dataclass(frozen=True)
class Snapshot:
    cell_id: int
    watermark: int  # every subframe <= watermark has been assembled
    tracker: TrackerSnapshot
    capacity: tuple = ()  # most recent capacity samples, oldest first


class CellWorker:
    """Decode one cell's subframe stream.

    ``submit`` enqueues a subframe; ``drain_ordered`` returns finished
    reports in sfn order. A report is finished once the tracker can no
    longer release messages into it (16 subframes later, or at ``flush``).
    """

    def __init__(self, cfg: CellConfig, pool_size: Optional[int] = None,
                 depth: int = QUEUE_DEPTH, executor: Optional[Executor] = None,
                 tracker: Optional[UeTracker] = None, hint_lag: int = WINDOW,
                 snapshot_ms: int = SNAPSHOT_MS, decode: Callable = decode_subframe,
                 on_final: Optional[Callable[[DecodeReport], None]] = None,
                 capacity_history: int = 0, **decode_kwargs):
        self.cfg = cfg
        self.pool_size = pool_size or default_pool_size()
        self._own_executor = executor is None
        self.executor = executor or ThreadPoolExecutor(self.pool_size)
        self.depth = depth
        self.tracker = tracker or UeTracker(cfg.cell_id)
        self.hint_lag = hint_lag
        self.snapshot_ms = snapshot_ms
        self.decode = decode
        self.decode_kwargs = decode_kwargs
        self.on_final = on_final
        self.last_sfn = -1
        self.waiting: deque = deque()  # submitted, not yet dispatched
        self.inflight: deque = deque()  # (sfn, future) in sfn order
        self.assembled: dict[int, DecodeReport] = {}  # awaiting late tracker releases
        self.ready: deque = deque()  # finished, not yet drained
        self.history: deque = deque(maxlen=HISTORY)
        self.capacity: deque = deque(maxlen=max(capacity_history, 1))
        self.snapshots: dict[int, Snapshot] = {}
        self.published: Optional[Snapshot] = None
        self.assembled_sfn = -1

    # producer side -------------------------------------------------------

    def pending(self) -> int:
        return len(self.waiting) + len(self.inflight)

    def submit(self, sub) -> str:
        if sub.cell_id != self.cfg.cell_id:
            raise ValueError(f"subframe of cell {sub.cell_id} sent to worker of cell {self.cfg.cell_id}")
        if sub.sfn <= self.last_sfn:
            log.warning("cell %d: rejected subframe %d (last %d)", self.cfg.cell_id, sub.sfn, self.last_sfn)
            return REJECTED
        if self.pending() >= self.depth:
            return BACKPRESSURE
        self.last_sfn = sub.sfn
        self.waiting.append(sub)
        self._pump(block=False)
        return ACCEPTED

    # scheduling ------------------------------------------------------------

    def hint_boundary(self, sfn: int) -> int:
        return self.snapshot_ms * ((sfn - self.hint_lag) // self.snapshot_ms)

    def _publish(self, boundary: int):
        if boundary in self.snapshots:
            return
        snap = Snapshot(self.cfg.cell_id, boundary, self.tracker.snapshot(boundary),
                        tuple(self.capacity))
        self.snapshots[boundary] = snap
        if self.published is None or boundary > self.published.watermark:
            self.published = snap
        for old in [b for b in self.snapshots if b < boundary - SNAPSHOT_KEEP * self.snapshot_ms]:
            del self.snapshots[old]

    def _dispatch(self) -> bool:
        progressed = False
        while self.waiting:
            sub = self.waiting[0]
            snap = self._snapshot_for_dispatch(sub.sfn)
            if snap is None:
                break
            self.waiting.popleft()
            fut = self.executor.submit(self.decode, sub, self.cfg, snap.tracker.hints(),
                                       **self.decode_kwargs)
            self.inflight.append((sub.sfn, fut))
            progressed = True
        return progressed

    def _snapshot_for_dispatch(self, sfn: int) -> Optional[Snapshot]:
        boundary = self.hint_boundary(sfn)
        if boundary in self.snapshots:
            return self.snapshots[boundary]
        if any(s <= boundary for s, _ in self.inflight):
            return None
        # waiting entries are all >= sfn > boundary, so everything <= boundary is assembled
        if self.assembled_sfn >= 0 and self.tracker.sfn > boundary:
            raise RuntimeError(f"snapshot {boundary} requested after the tracker moved past it")
        self._publish(boundary)
        return self.snapshots[boundary]

    def _assemble(self, report: DecodeReport):
        sfn = report.sfn
        # boundaries passed since the previous subframe see the state before this one
        if self.assembled_sfn >= 0:
            first = -(-self.assembled_sfn // self.snapshot_ms) * self.snapshot_ms
        else:
            first = self.hint_boundary(sfn)
        for b in range(first, sfn, self.snapshot_ms):
            self._publish(b)
        self.tracker.expire(sfn)
        self.assembled[sfn] = report
        released = self.tracker.observe(sfn, report.candidates, report.validated)
        for d in released:
            target = self.assembled.get(d.msg.sfn)
            if target is None:
                raise RuntimeError(f"tracker released a message for finalized subframe {d.msg.sfn}")
            target.validated.append(d)
        self.assembled_sfn = sfn
        self._finalize(sfn - self.tracker.window + 1)

    def _finalize(self, before: int):
        for s in sorted(k for k in self.assembled if k < before):
            rep = self.assembled.pop(s)
            rep.validated.sort(key=lambda d: d.msg.cce_start)
            self.history.append(rep)
            self.ready.append(rep)
            if self.on_final is not None:
                self.on_final(rep)

    def _collect(self, block: bool) -> bool:
        progressed = False
        while self.inflight:
            sfn, fut = self.inflight[0]
            if not fut.done():
                if not block:
                    break
                fut.result()
            self.inflight.popleft()
            self._assemble(fut.result())
            progressed = True
            block = False
        return progressed

    def _pump(self, block: bool):
        while True:
            moved = self._collect(block=False)
            moved |= self._dispatch()
            if moved:
                continue
            if block and self.inflight:
                self._collect(block=True)
                block = False
                continue
            return

    # consumer side ---------------------------------------------------------

    def drain_ordered(self, up_to_sfn: Optional[int] = None) -> list[DecodeReport]:
        """Finished reports with sfn <= up_to_sfn, contiguous and in order."""
        self._pump(block=False)
        out = []
        while self.ready and (up_to_sfn is None or self.ready[0].sfn <= up_to_sfn):
            out.append(self.ready.popleft())
        return out

    def wait(self):
        """Block until at least one in-flight decode has been assembled."""
        self._pump(block=True)

    def flush(self) -> list[DecodeReport]:
        """Decode everything submitted and finish all remaining reports."""
        while self.waiting or self.inflight:
            self._pump(block=True)
        self._finalize(self.assembled_sfn + 1)
        if self.assembled_sfn >= 0:
            self._publish(self.snapshot_ms * (self.assembled_sfn // self.snapshot_ms))
        return self.drain_ordered()

    def publish_snapshot(self) -> Optional[Snapshot]:
        """Latest snapshot at a 10 ms boundary whose subframes are all assembled."""
        self._pump(block=False)
        if self.assembled_sfn >= 0:
            b = self.snapshot_ms * (self.assembled_sfn // self.snapshot_ms)
            if self.tracker.sfn <= b:
                self._publish(b)
        return self.published

    def close(self):
        if self._own_executor:
            self.executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def decode_stream(subs: Iterable, cfg: CellConfig, pool_size: Optional[int] = None,
                  depth: int = QUEUE_DEPTH, **kwargs) -> Iterator[DecodeReport]:
    """Decode a subframe stream of one cell; yields finished reports in sfn order."""
    with CellWorker(cfg, pool_size=pool_size, depth=depth, **kwargs) as worker:
        for sub in subs:
            while True:
                status = worker.submit(sub)
                if status != BACKPRESSURE:
                    break
                worker.wait()
                yield from worker.drain_ordered()
            if status == REJECTED:
                raise ValueError(f"subframe {sub.sfn} is out of order")
            yield from worker.drain_ordered()
        yield from worker.flush()


def publish_snapshots(workers: Sequence[CellWorker]) -> dict[int, Snapshot]:
    return {w.cfg.cell_id: w.publish_snapshot() for w in workers}
