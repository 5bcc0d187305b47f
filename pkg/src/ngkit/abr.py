"""Chunked video streaming over a capacity trace, with MPC-style bitrate selection.

QoE of a session with bitrates R_n and rebuffering times T_n:

    QoE = sum q(R_n) - mu * sum T_n - sum |q(R_(n+1)) - q(R_n)|
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

LADDER_BPS = (300e3, 750e3, 1200e3, 1850e3, 2850e3, 4300e3)
HD_TABLE = (1.0, 2.0, 3.0, 12.0, 15.0, 20.0)
MU = {"linear": 4.3, "log": 2.66, "hd": 8.0}
METRICS = ("linear", "log", "hd")
HARMONIC_WINDOW = 5
HORIZON = 5
BUFFER_CAP_S = 60.0
TIMEOUT_S = 120.0
TELEMETRY_STALE_MS = 100


@dataclass(frozen=True)
class VideoSpec:
    n_chunks: int = 48
    chunk_s: float = 4.0
    ladder_bps: tuple = LADDER_BPS

    def __post_init__(self):
        if self.n_chunks < 1:
            raise ValueError("a video needs at least one chunk")
        if any(b <= a for a, b in zip(self.ladder_bps, self.ladder_bps[1:])):
            raise ValueError("bitrate ladder must be strictly ascending")

    def chunk_bits(self, level: int) -> float:
        return self.ladder_bps[level] * self.chunk_s


@dataclass(frozen=True)
class QoeParams:
    metric: str = "linear"
    mu: Optional[float] = None
    rebuffer_weighted_smoothness: bool = False  # weight each switch by T_n

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown QoE metric {self.metric!r}")
        if self.mu is None:
            object.__setattr__(self, "mu", MU[self.metric])


def quality(bitrate_bps, metric: str, ladder: Sequence[float] = LADDER_BPS):
    r = np.asarray(bitrate_bps, dtype=np.float64)
    if metric == "linear":
        return r / 1e6
    if metric == "log":
        return np.log(r / ladder[0])
    if metric == "hd":
        idx = np.searchsorted(np.asarray(ladder), r)
        if np.any(idx >= len(ladder)) or np.any(np.asarray(ladder)[np.minimum(idx, len(ladder) - 1)] != r):
            raise ValueError("the HD mapping is only defined on ladder bitrates")
        return np.asarray(HD_TABLE)[idx]
    raise ValueError(f"unknown QoE metric {metric!r}")


@dataclass(frozen=True)
class ChunkRecord:
    index: int
    level: int
    bitrate_bps: float
    download_s: float
    rebuffer_s: float
    buffer_s: float  # after the chunk arrived
    wait_s: float = 0.0  # idle time before the request (full buffer)


@dataclass
class SessionLog:
    chunks: list = field(default_factory=list)
    timed_out: bool = False
    startup_s: float = 0.0

    @property
    def bitrates(self) -> list[float]:
        return [c.bitrate_bps for c in self.chunks]

    @property
    def rebuffers(self) -> list[float]:
        return [c.rebuffer_s for c in self.chunks]


def qoe_terms(bitrates: Sequence[float], rebuffers: Sequence[float], params: QoeParams,
              ladder: Sequence[float] = LADDER_BPS) -> tuple[float, float, float]:
    """(quality, rebuffer penalty, smoothness penalty); QoE is the first minus the others."""
    q = quality(bitrates, params.metric, ladder)
    t = np.asarray(rebuffers, dtype=np.float64)
    switches = np.abs(np.diff(q))
    if params.rebuffer_weighted_smoothness:
        switches = switches * t[:-1]
    return float(q.sum()), float(params.mu * t.sum()), float(switches.sum())


def qoe(session, params: QoeParams, ladder: Sequence[float] = LADDER_BPS) -> float:
    if isinstance(session, SessionLog):
        bitrates, rebuffers = session.bitrates, session.rebuffers
    else:
        bitrates, rebuffers = session
    a, b, c = qoe_terms(bitrates, rebuffers, params, ladder)
    return a - b - c


# bitrate selection --------------------------------------------------------

def harmonic_mean(samples: Sequence[float], window: int = HARMONIC_WINDOW) -> float:
    recent = [s for s in samples[-window:]]
    if not recent:
        raise ValueError("no throughput samples")
    if any(s <= 0 for s in recent):
        return 0.0
    return len(recent) / sum(1.0 / s for s in recent)


_SEQUENCES: dict = {}


def _sequences(n_levels: int, horizon: int) -> np.ndarray:
    key = (n_levels, horizon)
    if key not in _SEQUENCES:
        _SEQUENCES[key] = np.array(list(itertools.product(range(n_levels), repeat=horizon)),
                                   dtype=np.int64).reshape(-1, horizon)
    return _SEQUENCES[key]


def plan_scores(estimate_bps: float, buffer_s: float, last_level: Optional[int], horizon: int,
                spec: VideoSpec, params: QoeParams) -> tuple[np.ndarray, np.ndarray]:
    """QoE of every bitrate sequence over the horizon under a constant throughput estimate."""
    seqs = _sequences(len(spec.ladder_bps), horizon)
    ladder = np.asarray(spec.ladder_bps)
    qtab = quality(ladder, params.metric, spec.ladder_bps)
    q = qtab[seqs]
    est = max(estimate_bps, 1e-9)
    dl = ladder[seqs] * spec.chunk_s / est
    buf = np.full(len(seqs), float(buffer_s))
    rebuf = np.zeros(len(seqs))
    for k in range(horizon):
        rebuf += np.maximum(dl[:, k] - buf, 0.0)
        buf = np.minimum(np.maximum(buf - dl[:, k], 0.0) + spec.chunk_s, BUFFER_CAP_S)
    smooth = np.abs(np.diff(q, axis=1)).sum(axis=1)
    if last_level is not None:
        smooth += np.abs(q[:, 0] - qtab[last_level])
    return seqs, q.sum(axis=1) - params.mu * rebuf - smooth


def plan(estimate_bps: float, buffer_s: float, last_level: Optional[int], horizon: int,
         spec: VideoSpec, params: QoeParams) -> tuple[int, ...]:
    """Best sequence; ties go to the lexicographically lowest levels."""
    seqs, scores = plan_scores(estimate_bps, buffer_s, last_level, horizon, spec, params)
    return tuple(int(x) for x in seqs[int(np.argmax(scores))])


@dataclass
class PlayerState:
    chunk: int
    buffer_s: float
    now_ms: float
    last_level: Optional[int]
    speeds_bps: list  # measured per-chunk download throughput


class Policy:
    name = "policy"

    def select(self, state: PlayerState, spec: VideoSpec) -> int:
        raise NotImplementedError


class Mpc(Policy):
    name = "mpc"

    def __init__(self, params: QoeParams, horizon: int = HORIZON, window: int = HARMONIC_WINDOW):
        self.params = params
        self.horizon = horizon
        self.window = window

    def estimate(self, state: PlayerState) -> Optional[float]:
        if not state.speeds_bps:
            return None
        return harmonic_mean(state.speeds_bps, self.window)

    def select(self, state: PlayerState, spec: VideoSpec) -> int:
        est = self.estimate(state)
        if est is None:
            return 0
        h = min(self.horizon, spec.n_chunks - state.chunk)
        return plan(est, state.buffer_s, state.last_level, h, spec, self.params)[0]


class NgMpc(Mpc):
    """MPC whose throughput estimate is the telemetry capacity at decision time.

    ``telemetry`` holds one capacity value (bits per ms) per millisecond;
    NaN marks a missing report. Without a fresh report the harmonic mean
    is used instead.
    """

    name = "ngmpc"

    def __init__(self, params: QoeParams, telemetry: Sequence[float], horizon: int = HORIZON,
                 window: int = HARMONIC_WINDOW, stale_ms: int = TELEMETRY_STALE_MS):
        super().__init__(params, horizon, window)
        self.telemetry = np.asarray(telemetry, dtype=np.float64)
        self.stale_ms = stale_ms
        self.fallbacks = 0

    def estimate(self, state: PlayerState) -> Optional[float]:
        t = int(state.now_ms)
        lo = max(0, t - self.stale_ms)
        recent = self.telemetry[lo:t + 1]
        fresh = np.flatnonzero(~np.isnan(recent))
        if fresh.size:
            return float(recent[fresh[-1]]) * 1000.0
        self.fallbacks += 1
        return super().estimate(state)


class BufferBased(Policy):
    """Linear map from buffer level to bitrate between a reservoir and a cushion."""

    name = "buffer"

    def __init__(self, reservoir_s: float = 5.0, cushion_s: float = 20.0):
        self.reservoir = reservoir_s
        self.cushion = cushion_s

    def select(self, state: PlayerState, spec: VideoSpec) -> int:
        top = len(spec.ladder_bps) - 1
        frac = (state.buffer_s - self.reservoir) / self.cushion
        return int(np.clip(math.floor(frac * top), 0, top))


# download simulation ---------------------------------------------------------

class CapacityLink:
    """Fluid link: ``bits_per_ms[i]`` bits are deliverable uniformly during ms i."""

    def __init__(self, bits_per_ms: Sequence[float]):
        self.rate = np.asarray(bits_per_ms, dtype=np.float64)
        if np.any(self.rate < 0):
            raise ValueError("capacity cannot be negative")
        self.cum = np.concatenate([[0.0], np.cumsum(self.rate)])

    def delivered(self, t_ms: float) -> float:
        """Bits deliverable in [0, t_ms)."""
        if t_ms >= len(self.rate):
            return float(self.cum[-1])
        i = int(math.floor(t_ms))
        return float(self.cum[i] + self.rate[i] * (t_ms - i))

    def finish(self, start_ms: float, bits: float) -> float:
        """Time at which ``bits`` sent from ``start_ms`` have arrived (inf if never)."""
        target = self.delivered(start_ms) + bits
        if target > self.cum[-1] + 1e-9:
            return math.inf
        i = int(np.searchsorted(self.cum, target, side="left"))
        if i == 0:
            return start_ms
        # cum[i-1] < target <= cum[i], so ms i-1 has positive rate
        t = (i - 1) + (target - self.cum[i - 1]) / self.rate[i - 1]
        return max(t, start_ms)


def download_sim(spec: VideoSpec, policy: Policy, link: CapacityLink,
                 buffer_cap_s: float = BUFFER_CAP_S, timeout_s: float = TIMEOUT_S,
                 start_ms: float = 0.0) -> SessionLog:
    """Fetch chunks back to back; playback starts once the first chunk arrives."""
    log = SessionLog()
    now = start_ms
    buffer = 0.0
    last = None
    speeds: list[float] = []
    for n in range(spec.n_chunks):
        wait = max(0.0, buffer - (buffer_cap_s - spec.chunk_s))
        now += wait * 1000.0
        buffer -= wait
        level = policy.select(PlayerState(n, buffer, now, last, speeds), spec)
        bits = spec.chunk_bits(level)
        end = link.finish(now, bits)
        dl = (end - now) / 1000.0
        if dl > timeout_s:
            rebuf = max(0.0, timeout_s - buffer) if n > 0 else 0.0
            log.chunks.append(ChunkRecord(n, level, spec.ladder_bps[level], timeout_s, rebuf, 0.0, wait))
            log.timed_out = True
            break
        if n == 0:
            log.startup_s = dl
            rebuf = 0.0
            buffer = spec.chunk_s
        else:
            rebuf = max(0.0, dl - buffer)
            buffer = max(buffer - dl, 0.0) + spec.chunk_s
        now = end
        speeds.append(bits / dl if dl > 0 else math.inf)
        log.chunks.append(ChunkRecord(n, level, spec.ladder_bps[level], dl, rebuf, buffer, wait))
        last = level
    return log


def step_trace(seed: int, duration_s: float = 300.0, low_bps: float = 0.4e6,
               high_bps: float = 6e6, min_ratio: float = 2.0,
               segment_s: tuple = (20.0, 60.0)) -> np.ndarray:
    """Piecewise-constant capacity (bits per ms) whose level changes by at least ``min_ratio``.

    Each level lasts longer than the default planning horizon (5 chunks of 4 s).
    """
    rng = np.random.default_rng(seed)
    n = int(duration_s * 1000)
    out = np.empty(n)
    t = 0
    level = math.exp(rng.uniform(math.log(low_bps), math.log(high_bps)))
    while t < n:
        seg = int(rng.uniform(*segment_s) * 1000)
        out[t:t + seg] = level / 1000.0
        t += seg
        while True:
            nxt = math.exp(rng.uniform(math.log(low_bps), math.log(high_bps)))
            if max(nxt / level, level / nxt) >= min_ratio:
                break
        level = nxt
    return out


POLICIES: dict[str, Callable] = {"mpc": Mpc, "ngmpc": NgMpc, "buffer": BufferBased}
