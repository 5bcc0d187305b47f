"""Fuse decoded control messages with a transport-layer packet log.

A failed transport block shows up twice: as an ``ndi=False`` message eight
subframes after the original, and in the packet log as a silence of about
8 ms followed by a burst (the link layer releases everything it held back
for in-order delivery). Matching the two event series recovers the clock
offset between the packet log and the subframe index, and picks which
C-RNTI belongs to the device that recorded the log.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dci import DciMessage

log = logging.getLogger(__name__)

HARQ_RTT_MS = 8
GAP_TOLERANCE_MS = 0.5
BURST_PACKETS = 2
BURST_WINDOW_MS = 1.0
MATCH_TOLERANCE_MS = 0.5
DEFAULT_SEARCH_MS = 500


@dataclass(frozen=True)
class PacketRecord:
    recv_time: int  # microseconds, receiver clock
    size: int  # bytes
    one_way_delay: int  # microseconds
    seq: int


@dataclass(frozen=True)
class RetxEvent:
    source: str  # "log" or "messages"
    start: float  # ms: original transmission (messages) or last packet before the gap (log)
    end: float  # ms: retransmission subframe (messages) or first burst packet (log)
    burst_size: int = 0
    rnti: Optional[int] = None
    harq: Optional[int] = None


class AlignmentUnavailable(Exception):
    """No retransmission events on one side; keep the coarse clock."""


@dataclass(frozen=True)
class Association:
    rnti: int
    offset_ms: int
    matches: int
    margin: int
    ambiguous: bool


def detect_retx_from_log(records: Sequence[PacketRecord],
                         gap_ms: float = HARQ_RTT_MS,
                         tolerance_ms: float = GAP_TOLERANCE_MS,
                         burst_packets: int = BURST_PACKETS,
                         burst_window_ms: float = BURST_WINDOW_MS) -> list[RetxEvent]:
    """Find gap-then-burst signatures in a receive-time-sorted packet log."""
    if len(records) < burst_packets + 1:
        return []
    t = np.array([r.recv_time for r in records], dtype=np.float64) / 1000.0
    if np.any(np.diff(t) < 0):
        raise ValueError("packet log is not sorted by receive time")
    events = []
    for i in range(1, len(t)):
        if t[i] - t[i - 1] < gap_ms - tolerance_ms:
            continue
        j = i
        while j < len(t) and t[j] - t[i] <= burst_window_ms:
            j += 1
        if j - i >= burst_packets:
            events.append(RetxEvent("log", start=float(t[i - 1]), end=float(t[i]), burst_size=j - i))
    return events


def detect_retx_from_msgs(msgs: Iterable[DciMessage]) -> list[RetxEvent]:
    """One event per retransmission message: original at sfn-8, retransmission at sfn."""
    return [
        RetxEvent("messages", start=float(m.sfn - HARQ_RTT_MS), end=float(m.sfn),
                  rnti=m.rnti, harq=m.harq)
        for m in msgs if not m.ndi
    ]


def _match_count(log_times: np.ndarray, msg_times: np.ndarray, offset: int,
                 tolerance: float) -> int:
    shifted = log_times - offset
    idx = np.searchsorted(msg_times, shifted)
    lo = np.abs(shifted - msg_times[np.clip(idx - 1, 0, len(msg_times) - 1)])
    hi = np.abs(shifted - msg_times[np.clip(idx, 0, len(msg_times) - 1)])
    return int(np.count_nonzero(np.minimum(lo, hi) <= tolerance))


def match_scores(log_events: Sequence[RetxEvent], msg_events: Sequence[RetxEvent],
                 search_range_ms: int = DEFAULT_SEARCH_MS,
                 tolerance_ms: float = MATCH_TOLERANCE_MS) -> dict[int, int]:
    if not log_events or not msg_events:
        raise AlignmentUnavailable("need retransmission events on both sides")
    # log burst times are measured inside the subframe, so compare against its centre
    log_times = np.array([e.end for e in log_events])
    msg_times = np.sort(np.array([e.end for e in msg_events])) + 0.5
    return {
        d: _match_count(log_times, msg_times, d, tolerance_ms)
        for d in range(-search_range_ms, search_range_ms + 1)
    }


def align(log_events: Sequence[RetxEvent], msg_events: Sequence[RetxEvent],
          search_range_ms: int = DEFAULT_SEARCH_MS,
          tolerance_ms: float = MATCH_TOLERANCE_MS) -> int:
    """Integer-ms offset (log clock minus subframe clock) matching the most events.

    Ties go to the smallest absolute offset, then to the negative one.
    """
    scores = match_scores(log_events, msg_events, search_range_ms, tolerance_ms)
    best = max(scores.values())
    return min((d for d, s in scores.items() if s == best), key=lambda d: (abs(d), d))


def associate_rnti(records: Sequence[PacketRecord],
                   streams: Mapping[int, Sequence[DciMessage]],
                   search_range_ms: int = DEFAULT_SEARCH_MS) -> Association:
    """Pick the C-RNTI whose retransmissions best explain the packet log."""
    if not streams:
        raise ValueError("no candidate C-RNTIs")
    log_events = detect_retx_from_log(records)
    results = []
    for rnti in sorted(streams):
        msg_events = detect_retx_from_msgs(streams[rnti])
        try:
            scores = match_scores(log_events, msg_events, search_range_ms)
        except AlignmentUnavailable:
            results.append((0, 0, rnti))
            continue
        best = max(scores.values())
        offset = min((d for d, s in scores.items() if s == best), key=lambda d: (abs(d), d))
        results.append((best, offset, rnti))
    results.sort(key=lambda r: (-r[0], r[2]))
    best, offset, rnti = results[0]
    margin = best - results[1][0] if len(results) > 1 else best
    ambiguous = len(results) > 1 and margin == 0
    if ambiguous:
        log.warning("C-RNTI association ambiguous: %d matches for several candidates", best)
    return Association(rnti=rnti, offset_ms=offset, matches=best, margin=margin, ambiguous=ambiguous)


def fuse(records: Sequence[PacketRecord], msgs: Sequence[DciMessage], offset_ms: int) -> list[dict]:
    """Per-subframe rows (sfn, rnti, bytes_delivered, retx_flag) for one UE's messages."""
    delivered: dict[int, int] = {}
    for r in records:
        sfn = int(np.floor(r.recv_time / 1000.0)) - offset_ms
        delivered[sfn] = delivered.get(sfn, 0) + r.size
    rows = []
    for m in sorted(msgs, key=lambda m: m.sfn):
        rows.append({
            "sfn": m.sfn,
            "rnti": m.rnti,
            "bytes_delivered": delivered.get(m.sfn, 0),
            "retx_flag": int(not m.ndi),
        })
    return rows
