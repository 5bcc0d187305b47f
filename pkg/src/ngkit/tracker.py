"""Temporal validation of derived C-RNTIs and carrier-aggregation detection.

A C-RNTI derived from a decode at the wrong location, level or format is
uniformly random over 2^16 values, so the same wrong ID rarely recurs within
a few subframes. The tracker buffers unvalidated decodes from the last 16
subframes and promotes an ID to the detected list once it has appeared more
than twice; the buffered messages carrying it are then released.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .decoder import CandidateMessage, DecodedMessage

log = logging.getLogger(__name__)

WINDOW = 16
MIN_COUNT = 3  # promoted when the count is larger than two
EXPIRY_MS = 10_000
ACTIVITY_MS = 1000
CA_MIN_RATE_BPS = 3e6
RNTI_SPACE = 1 << 16


@dataclass(frozen=True)
class UeActivity:
    first_seen: int
    last_active: int
    count: int  # messages in the last second
    rate_bps: float  # sum of TB sizes over the last second


@dataclass(frozen=True)
class TrackerSnapshot:
    cell_id: int
    sfn: int
    ues: dict  # rnti -> UeActivity

    def hints(self) -> list[int]:
        """Detected C-RNTIs, most active first."""
        return sorted(self.ues, key=lambda r: (-self.ues[r].count, r))


@dataclass
class _Detected:
    first_seen: int
    last_active: int
    recent: deque = field(default_factory=deque)  # (sfn, tbs)


@dataclass(frozen=True)
class TrackerEvent:
    sfn: int
    cell_id: int
    rnti: int
    event: str  # promoted | expired | ca_detected
    primary_cell: Optional[int] = None


class UeTracker:
    """Per-cell tracker state. Single writer: the cell's assembler."""

    def __init__(self, cell_id: int = 0, window: int = WINDOW, min_count: int = MIN_COUNT,
                 expiry_ms: int = EXPIRY_MS, activity_ms: int = ACTIVITY_MS):
        self.cell_id = cell_id
        self.window = window
        self.min_count = min_count
        self.expiry_ms = expiry_ms
        self.activity_ms = activity_ms
        self.ring: deque = deque()  # (sfn, [CandidateMessage], claimed CCE set)
        self.counts: Counter = Counter()
        self.detected: dict[int, _Detected] = {}
        self.events: list[TrackerEvent] = []
        self.sfn = -1

    def _evict(self, sfn: int):
        while self.ring and self.ring[0][0] <= sfn - self.window:
            _, cands, _ = self.ring.popleft()
            for c in cands:
                self.counts[c.derived_rnti] -= 1
                if self.counts[c.derived_rnti] <= 0:
                    del self.counts[c.derived_rnti]

    def _activity(self, rnti: int, sfn: int, tbs: int):
        ue = self.detected.get(rnti)
        if ue is None:
            ue = self.detected[rnti] = _Detected(first_seen=sfn, last_active=sfn)
            self.events.append(TrackerEvent(sfn, self.cell_id, rnti, "promoted"))
        ue.last_active = max(ue.last_active, sfn)
        ue.first_seen = min(ue.first_seen, sfn)
        ue.recent.append((sfn, tbs))

    def observe(self, sfn: int, candidates: Sequence[CandidateMessage],
                validated: Iterable[DecodedMessage] = ()) -> list[DecodedMessage]:
        """Feed one subframe; returns messages the tracker validates now (possibly for earlier subframes).

        ``validated`` are messages the decoder already validated; their
        C-RNTIs are real and count as activity.
        """
        if sfn <= self.sfn:
            raise ValueError(f"subframe {sfn} observed out of order")
        self.sfn = sfn
        self._evict(sfn)
        claimed = set()
        for d in validated:
            claimed.update(d.msg.cces)
            self._activity(d.msg.rnti, sfn, d.msg.tbs)

        released: list[DecodedMessage] = []
        buffered: list[CandidateMessage] = []
        for c in candidates:
            cces = set(range(c.cce_start, c.cce_start + c.level))
            if c.derived_rnti in self.detected:
                if cces & claimed:
                    continue
                claimed |= cces
                released.append(DecodedMessage(c.message, c.flip_ratio, "tracker"))
                self._activity(c.derived_rnti, sfn, c.message.tbs)
            else:
                buffered.append(c)
        entry = (sfn, buffered, claimed)
        self.ring.append(entry)
        for c in buffered:
            self.counts[c.derived_rnti] += 1

        for rnti in sorted({c.derived_rnti for c in buffered}):
            if self.counts.get(rnti, 0) >= self.min_count:
                released.extend(self._promote(rnti))
        return sorted(released, key=lambda d: (d.msg.sfn, d.msg.cce_start))

    def _promote(self, rnti: int) -> list[DecodedMessage]:
        out = []
        for i, (sfn, cands, claimed) in enumerate(self.ring):
            keep = []
            for c in cands:
                if c.derived_rnti != rnti:
                    keep.append(c)
                    continue
                cces = set(range(c.cce_start, c.cce_start + c.level))
                self.counts[rnti] -= 1
                if cces & claimed:
                    continue
                claimed |= cces
                out.append(DecodedMessage(c.message, c.flip_ratio, "tracker"))
                self._activity(rnti, sfn, c.message.tbs)
            self.ring[i] = (sfn, keep, claimed)
        if self.counts.get(rnti, 0) <= 0:
            self.counts.pop(rnti, None)
        return out

    def expire(self, now_sfn: int) -> list[int]:
        removed = [r for r, ue in self.detected.items() if now_sfn - ue.last_active >= self.expiry_ms]
        for r in sorted(removed):
            del self.detected[r]
            self.events.append(TrackerEvent(now_sfn, self.cell_id, r, "expired"))
        return sorted(removed)

    def snapshot(self, sfn: Optional[int] = None) -> TrackerSnapshot:
        now = self.sfn if sfn is None else sfn
        ues = {}
        for r, ue in self.detected.items():
            while ue.recent and ue.recent[0][0] <= now - self.activity_ms:
                ue.recent.popleft()
            ues[r] = UeActivity(ue.first_seen, ue.last_active, len(ue.recent),
                                sum(t for _, t in ue.recent) * 1000.0 / self.activity_ms)
        return TrackerSnapshot(self.cell_id, now, ues)


@dataclass(frozen=True)
class CaMap:
    cells: dict  # rnti -> [(cell_id, first_seen)], primary first
    rate_bps: dict  # rnti -> summed recent rate across its cells

    def primary(self, rnti: int) -> int:
        return self.cells[rnti][0][0]


def ca_intersect(snapshots: Sequence[TrackerSnapshot], min_rate_bps: float = CA_MIN_RATE_BPS,
                 max_staleness_ms: int = 10) -> CaMap:
    """C-RNTIs detected in two or more cells, ordered by first appearance (ties: lower cell id)."""
    if snapshots:
        newest = max(s.sfn for s in snapshots)
        stale = [s.cell_id for s in snapshots if newest - s.sfn > max_staleness_ms]
        if stale:
            log.warning("snapshots of cells %s are more than %d ms old", stale, max_staleness_ms)
    seen: dict[int, list] = {}
    rate: dict[int, float] = {}
    for snap in snapshots:
        for rnti, act in snap.ues.items():
            seen.setdefault(rnti, []).append((snap.cell_id, act.first_seen))
            rate[rnti] = rate.get(rnti, 0.0) + act.rate_bps
    cells, rates = {}, {}
    for rnti, lst in seen.items():
        if len(lst) < 2 or rate[rnti] < min_rate_bps:
            continue
        cells[rnti] = sorted(lst, key=lambda x: (x[1], x[0]))
        rates[rnti] = rate[rnti]
    return CaMap(cells, rates)


# false-promotion analysis ------------------------------------------------------

def promoted_rntis(sfns, rntis, window: int = WINDOW, min_count: int = MIN_COUNT) -> np.ndarray:
    """C-RNTIs the tracker would promote from a stream of unvalidated candidates.

    Vectorised equivalent of feeding ``UeTracker.observe`` one subframe at a
    time: an ID is promoted once ``min_count`` of its candidates fall within
    ``window`` consecutive subframes.
    """
    sfns = np.asarray(sfns, dtype=np.int64)
    rntis = np.asarray(rntis, dtype=np.int64)
    k = min_count - 1
    if len(rntis) <= k:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((sfns, rntis))
    r, s = rntis[order], sfns[order]
    hit = (r[k:] == r[:-k]) & (s[k:] - s[:-k] < window)
    return np.unique(r[:-k][hit])


def window_triples(n: int, window: int = WINDOW) -> int:
    """Number of index triples i < j < k < n with k - i < window."""
    span = window - 1
    full = max(0, n - span) * math.comb(span, 2)
    tail = sum(math.comb(m, 2) for m in range(min(span, n)))
    return full + tail


def false_promotion_bound(n: int, window: int = WINDOW, space: int = RNTI_SPACE) -> float:
    """Union bound on a false promotion among ``n`` random IDs arriving one per subframe.

    Each window triple is a false promotion with probability 1/space^2.
    """
    return window_triples(n, window) / float(space) ** 2


def false_promotion_mc(n: int, trials: int, rng: np.random.Generator, window: int = WINDOW,
                       space: int = RNTI_SPACE, chunk: int = 5000) -> float:
    """Monte Carlo estimate of the same probability through pairwise repeats.

    Direct sampling would need millions of trials to see a triple, so each
    trial draws the IDs, finds the repeated pairs inside the window and
    counts, for every such pair, the positions a third matching ID could
    take. Each triple is reached from three pairs and the third ID matches
    with probability 1/space, giving an unbiased estimate of the expected
    number of triples.
    """
    total = 0.0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        ids = rng.integers(0, space, size=(m, n), dtype=np.int32)
        for d in range(1, window):
            rows, i = np.nonzero(ids[:, d:] == ids[:, :-d])
            j = i + d
            lo = np.maximum(j - (window - 1), 0)
            hi = np.minimum(i + (window - 1), n - 1)
            total += float(np.sum(hi - lo + 1 - 2))
        done += m
    return total / (3.0 * space * trials)
