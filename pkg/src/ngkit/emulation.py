"""Trace-driven bottleneck emulator and congestion controllers.

Time advances in 1 ms ticks. The bottleneck serves MTU-sized packets at
delivery opportunities listed in a trace (Mahimahi style). Packets reach
the bottleneck queue one propagation delay after they are sent and leave
it at an opportunity; the ACK returns one propagation delay later.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

MTU_BYTES = 1500
MTU_BITS = MTU_BYTES * 8
CUBIC_BETA = 0.7
CUBIC_C = 0.4
TELEMETRY_STALE_MS = 100
RTT_INFLATION_MS = 50.0
BUSY_UTILIZATION = 0.9


# traces -------------------------------------------------------------------

@dataclass(frozen=True)
class LinkTrace:
    """Delivery opportunities as a count per millisecond, starting at t = 0."""

    counts: np.ndarray

    @property
    def duration_ms(self) -> int:
        return len(self.counts)

    @property
    def timestamps(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)

    @property
    def mean_rate_bps(self) -> float:
        return float(self.counts.sum()) * MTU_BITS * 1000.0 / max(len(self.counts), 1)

    @classmethod
    def from_timestamps(cls, stamps: Sequence[int], duration_ms: Optional[int] = None) -> "LinkTrace":
        stamps = np.asarray(stamps, dtype=np.int64)
        if stamps.size and np.any(np.diff(stamps) < 0):
            raise ValueError("trace timestamps must be nondecreasing")
        if stamps.size and stamps[0] < 0:
            raise ValueError("trace timestamps must be nonnegative")
        n = duration_ms if duration_ms is not None else (int(stamps[-1]) + 1 if stamps.size else 0)
        return cls(np.bincount(stamps, minlength=n)[:n].astype(np.int64))


def carry_counts(bits_per_ms: Sequence[float], carry: float = 0.0) -> tuple[np.ndarray, float]:
    """Whole MTU packets per ms from a bit budget, carrying the remainder forward."""
    out = np.zeros(len(bits_per_ms), dtype=np.int64)
    for i, bits in enumerate(bits_per_ms):
        if bits < 0:
            raise ValueError("capacity cannot be negative")
        carry += bits
        n = int(carry // MTU_BITS)
        carry -= n * MTU_BITS
        out[i] = n
    return out, carry


def trace_from_capacity(capacity_bits: Sequence[float]) -> LinkTrace:
    """One sample per ms of capacity (bits) to delivery opportunities."""
    counts, _ = carry_counts([float(getattr(c, "capacity_bits", c)) for c in capacity_bits])
    return LinkTrace(counts)


def write_trace(trace: LinkTrace, path) -> None:
    Path(path).write_text("".join(f"{t}\n" for t in trace.timestamps))


def read_trace(path) -> LinkTrace:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        stamps = [int(ln) for ln in lines]
    except ValueError as exc:
        raise ValueError(f"{path}: not a delivery-opportunity trace") from exc
    return LinkTrace.from_timestamps(stamps)


# senders --------------------------------------------------------------------

class Cubic:
    """CUBIC window growth in packets; time in seconds."""

    def __init__(self, cwnd: float = 10.0, beta: float = CUBIC_BETA, c: float = CUBIC_C,
                 ssthresh: float = math.inf):
        self.cwnd = cwnd
        self.beta = beta
        self.c = c
        self.ssthresh = ssthresh
        self.w_max = cwnd
        self.epoch: Optional[float] = None
        self.k = 0.0

    def window_at(self, t: float) -> float:
        return self.c * (t - self.epoch - self.k) ** 3 + self.w_max

    def on_ack(self, now: float, acked: int = 1) -> float:
        if self.cwnd < self.ssthresh:
            self.cwnd += acked
            return self.cwnd
        if self.epoch is None:
            self.epoch, self.w_max, self.k = now, self.cwnd, 0.0
        self.cwnd = max(self.cwnd, self.window_at(now))
        return self.cwnd

    def on_loss(self, now: float) -> float:
        self.w_max = self.cwnd
        self.cwnd = max(self.cwnd * self.beta, 1.0)
        self.ssthresh = self.cwnd
        self.epoch = now
        self.k = (self.w_max * (1 - self.beta) / self.c) ** (1 / 3)
        return self.cwnd


class Sender:
    """Interface used by the emulator."""

    name = "sender"

    def packets_to_send(self, t: int, inflight: int) -> int:
        raise NotImplementedError

    def on_ack(self, t: int, rtt_ms: int) -> None:
        pass

    def on_loss(self, t: int) -> None:
        pass


class ConstantRate(Sender):
    name = "constant"

    def __init__(self, rate_bps: float):
        self.bits = rate_bps / 1000.0
        self.carry = 0.0

    def packets_to_send(self, t: int, inflight: int) -> int:
        self.carry += self.bits
        n = int(self.carry // MTU_BITS)
        self.carry -= n * MTU_BITS
        return n


class CubicSender(Sender):
    """Window-limited CUBIC; the window is released as ACKs return."""

    name = "cubic"

    def __init__(self, initial_cwnd: float = 10.0):
        self.cc = Cubic(initial_cwnd)
        self.rtt = 1.0
        self.recover_until = -math.inf

    def packets_to_send(self, t: int, inflight: int) -> int:
        return max(0, int(self.cc.cwnd) - inflight)

    def on_ack(self, t: int, rtt_ms: int) -> None:
        self.rtt = rtt_ms
        self.cc.on_ack(t / 1000.0)

    def on_loss(self, t: int) -> None:
        # losses from one overflow burst count as a single congestion event
        if t < self.recover_until:
            return
        self.recover_until = t + self.rtt
        self.cc.on_loss(t / 1000.0)


CAPACITY_MODE = "capacity-driven"
FALLBACK_MODE = "cubic-fallback"


class NgCc(Sender):
    """Paces at the reported capacity; falls back to CUBIC on Internet-side congestion.

    ``telemetry[i]`` is the capacity (bits per ms) reported for bottleneck
    time ``i``; the sender at time t reads the entry for ``t + lead_ms``.
    NaN entries are missing reports. Fallback starts when the RTT exceeds
    the minimum by ``rtt_threshold_ms`` while the cell is not busy, and ends
    once the CUBIC rate reaches the reported capacity.
    """

    name = "ngcc"

    def __init__(self, telemetry: Sequence[float], lead_ms: int = 0,
                 utilization: Optional[Sequence[float]] = None,
                 rtt_threshold_ms: float = RTT_INFLATION_MS, stale_ms: int = TELEMETRY_STALE_MS):
        self.telemetry = np.asarray(telemetry, dtype=np.float64)
        self.lead = lead_ms
        self.utilization = None if utilization is None else np.asarray(utilization, dtype=np.float64)
        self.rtt_threshold = rtt_threshold_ms
        self.stale_ms = stale_ms
        self.mode = CAPACITY_MODE
        self.rate_bits = 0.0  # per ms
        self.last_report: Optional[int] = None
        self.stale = False
        self.min_rtt = math.inf
        self.srtt: Optional[float] = None
        self.cubic: Optional[Cubic] = None
        self.carry = 0.0
        self.mode_changes: list[tuple[int, str]] = []
        self.recover_until = -math.inf

    def reported(self, t: int) -> Optional[float]:
        i = t + self.lead
        if 0 <= i < len(self.telemetry) and not math.isnan(self.telemetry[i]):
            return float(self.telemetry[i])
        return None

    def cell_busy(self, t: int) -> bool:
        if self.utilization is None:
            return False
        i = min(max(t + self.lead, 0), len(self.utilization) - 1)
        return bool(self.utilization[i] >= BUSY_UTILIZATION)

    def cubic_rate_bits(self) -> float:
        rtt = max(self.srtt or 1.0, 1.0)
        return self.cubic.cwnd * MTU_BITS / rtt

    def step(self, t: int, rtt_sample: Optional[float] = None) -> float:
        """Update the mode and return the pacing rate in bits per ms."""
        cap = self.reported(t)
        if cap is not None:
            self.last_report = t
            self.stale = False
        elif self.last_report is None or t - self.last_report > self.stale_ms:
            if not self.stale:
                log.warning("telemetry stale at t=%d ms; holding %.0f bits/ms", t, self.rate_bits)
            self.stale = True
        if rtt_sample is not None:
            self.min_rtt = min(self.min_rtt, rtt_sample)
            if (self.mode == CAPACITY_MODE and rtt_sample > self.min_rtt + self.rtt_threshold
                    and not self.cell_busy(t)):
                self.mode = FALLBACK_MODE
                self.mode_changes.append((t, self.mode))
                w = max(self.rate_bits * max(self.srtt or 1.0, 1.0) / MTU_BITS, 1.0)
                self.cubic = Cubic(cwnd=w, ssthresh=w)
                self.cubic.on_loss(t / 1000.0)
        if self.mode == FALLBACK_MODE and cap is not None and self.cubic_rate_bits() >= cap:
            self.mode = CAPACITY_MODE
            self.mode_changes.append((t, self.mode))
        if self.mode == CAPACITY_MODE:
            if cap is not None:
                self.rate_bits = cap
        else:
            self.rate_bits = self.cubic_rate_bits()
        return self.rate_bits

    def packets_to_send(self, t: int, inflight: int) -> int:
        self.step(t)
        self.carry += self.rate_bits
        n = int(self.carry // MTU_BITS)
        self.carry -= n * MTU_BITS
        return n

    def on_ack(self, t: int, rtt_ms: int) -> None:
        self.srtt = rtt_ms if self.srtt is None else 0.875 * self.srtt + 0.125 * rtt_ms
        if self.cubic is not None and self.mode == FALLBACK_MODE:
            self.cubic.on_ack(t / 1000.0)
        self.step(t, rtt_sample=rtt_ms)

    def on_loss(self, t: int) -> None:
        if self.cubic is not None and self.mode == FALLBACK_MODE and t >= self.recover_until:
            self.recover_until = t + max(self.srtt or 1.0, 1.0)
            self.cubic.on_loss(t / 1000.0)


# emulator -----------------------------------------------------------------

@dataclass(frozen=True)
class PacketResult:
    seq: int
    sent_ms: int
    delivered_ms: int  # -1 when dropped at a full buffer

    @property
    def delay_ms(self) -> int:
        return self.delivered_ms - self.sent_ms


@dataclass(frozen=True)
class FlowMetrics:
    throughput_bps: float
    mean_delay_ms: float
    p95_delay_ms: float
    delivered: int
    empty: bool = False


@dataclass
class EmulationResult:
    packets: list
    metrics: FlowMetrics
    queue: np.ndarray  # queue length after service, per ms
    unused: np.ndarray = field(default=None)  # opportunities left unused, per ms


def nearest_rank(values: Sequence[float], q: float) -> float:
    if not len(values):
        raise ValueError("no values")
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def metrics(packets: Sequence[PacketResult], duration_ms: Optional[int] = None) -> FlowMetrics:
    done = [p for p in packets if p.delivered_ms >= 0]
    if not done:
        return FlowMetrics(0.0, 0.0, 0.0, 0, empty=True)
    delays = [p.delay_ms for p in done]
    if duration_ms is None:
        duration_ms = max(p.delivered_ms for p in done) - min(p.sent_ms for p in done) + 1
    return FlowMetrics(len(done) * MTU_BITS * 1000.0 / duration_ms, float(np.mean(delays)),
                       nearest_rank(delays, 95), len(done))


def emulate(trace: LinkTrace, sender: Sender, duration_ms: Optional[int] = None,
            prop_delay_ms: int = 10, buffer_packets: Optional[int] = None) -> EmulationResult:
    """Run one flow through the bottleneck for ``duration_ms`` (default: trace length)."""
    duration = trace.duration_ms if duration_ms is None else duration_ms
    counts = trace.counts
    pipe: deque = deque()  # (arrival at queue, seq, sent)
    queue: deque = deque()  # (seq, sent)
    acks: deque = deque()  # (ack time, sent)
    losses: deque = deque()  # loss notification times
    results: list[PacketResult] = []
    qlen = np.zeros(duration, dtype=np.int64)
    unused = np.zeros(duration, dtype=np.int64)
    seq = 0
    inflight = 0
    for t in range(duration):
        while acks and acks[0][0] <= t:
            _, sent = acks.popleft()
            inflight -= 1
            sender.on_ack(t, t - sent)
        while losses and losses[0] <= t:
            losses.popleft()
            inflight -= 1
            sender.on_loss(t)
        for _ in range(sender.packets_to_send(t, inflight)):
            pipe.append((t + prop_delay_ms, seq, t))
            seq += 1
            inflight += 1
        while pipe and pipe[0][0] <= t:
            _, s, sent = pipe.popleft()
            if buffer_packets is not None and len(queue) >= buffer_packets:
                results.append(PacketResult(s, sent, -1))
                losses.append(t + prop_delay_ms)
                continue
            queue.append((s, sent))
        n = int(counts[t]) if t < len(counts) else 0
        while n and queue:
            s, sent = queue.popleft()
            results.append(PacketResult(s, sent, t))
            acks.append((t + prop_delay_ms, sent))
            n -= 1
        unused[t] = n
        qlen[t] = len(queue)
    results.sort(key=lambda p: p.seq)
    return EmulationResult(results, metrics(results, duration), qlen, unused)


def drop_messages(msgs: Sequence, p: float, seed: int) -> list:
    """Remove each message independently with probability p (at most 0.5)."""
    if not 0.0 <= p <= 0.5:
        raise ValueError(f"drop probability {p} outside [0, 0.5]")
    rng = np.random.default_rng(seed)
    keep = rng.random(len(msgs)) >= p
    return [m for m, k in zip(msgs, keep) if k]
