"""Per-millisecond capacity available to one target UE.

The target could use the PRBs it was given plus the PRBs nobody was given,
at the bit density of its own transport blocks:

    capacity = (target_prb + idle_prb) * bits_per_prb

Estimates are smoothed over a sliding window and summed over the cells a
UE aggregates.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .cell import CellConfig
from .dci import DciMessage

log = logging.getLogger(__name__)

WINDOW = 100
HOLD_MS = 1000
DECAY_MS = 1000
DEFAULT_BITS_PER_PRB = 300.0
MEDIAN_MESSAGES = 1000


@dataclass(frozen=True)
class CapacitySample:
    sfn: int
    cell_id: int
    target_prb: int
    other_prb: int
    idle_prb: int
    bits_per_prb: float
    capacity_bits: float
    provisional: bool = False

    @property
    def available_prb(self) -> int:
        return self.target_prb + self.idle_prb


@dataclass(frozen=True)
class SmoothedCapacity:
    sfn: int
    cell_id: object  # cell id, or "CA" for the aggregate
    available_prb: float  # window mean
    bits_per_prb: float  # window mean
    capacity_bits: float  # per ms


def split_prb(msgs: Iterable[DciMessage], n_prb: int, target: int) -> tuple[int, int, int]:
    """(target_prb, other_prb, idle_prb). Retransmissions to the target count as other."""
    target_prb = other_prb = 0
    for m in msgs:
        if m.rnti == target and m.ndi:
            target_prb += m.nof_prb
        else:
            other_prb += m.nof_prb
    idle = n_prb - target_prb - other_prb
    if idle < 0:
        raise ValueError(f"messages allocate {target_prb + other_prb} PRBs of {n_prb}")
    return target_prb, other_prb, idle


class CapacityEstimator:
    """Stateful per-cell capacity for one target C-RNTI.

    When the target is not scheduled its last bits-per-PRB is held for
    ``hold_ms``, then relaxes exponentially (time constant ``decay_ms``)
    toward the median density of all recent messages in the cell.
    """

    def __init__(self, cfg: CellConfig, target: int, default_bits_per_prb: float = DEFAULT_BITS_PER_PRB,
                 hold_ms: int = HOLD_MS, decay_ms: int = DECAY_MS):
        self.cfg = cfg
        self.target = target
        self.default = default_bits_per_prb
        self.hold_ms = hold_ms
        self.decay_ms = decay_ms
        self.last_value: Optional[float] = None
        self.last_sfn: Optional[int] = None
        self.cell_density: deque = deque(maxlen=MEDIAN_MESSAGES)

    def bits_per_prb(self, sfn: int) -> tuple[float, bool]:
        if self.last_value is None:
            if self.cell_density:
                return float(np.median(self.cell_density)), True
            return self.default, True
        age = sfn - self.last_sfn
        if age <= self.hold_ms or not self.cell_density:
            return self.last_value, False
        median = float(np.median(self.cell_density))
        w = math.exp(-(age - self.hold_ms) / self.decay_ms)
        return median + (self.last_value - median) * w, False

    def update(self, sfn: int, msgs: Sequence[DciMessage]) -> CapacitySample:
        target_prb, other_prb, idle = split_prb(msgs, self.cfg.n_prb, self.target)
        own = [m for m in msgs if m.rnti == self.target and m.ndi]
        for m in msgs:
            if m.nof_prb > 0 and m.ndi:
                self.cell_density.append(m.tbs / m.nof_prb)
        if target_prb > 0:
            bpp = sum(m.tbs for m in own) / target_prb
            self.last_value, self.last_sfn = bpp, sfn
            provisional = False
        else:
            bpp, provisional = self.bits_per_prb(sfn)
        return CapacitySample(sfn, self.cfg.cell_id, target_prb, other_prb, idle, bpp,
                              (target_prb + idle) * bpp, provisional)


def per_subframe_capacity(msgs: Sequence[DciMessage], cfg: CellConfig, target: int,
                          state: Optional[CapacityEstimator] = None, sfn: Optional[int] = None) -> CapacitySample:
    """Capacity of one subframe; pass ``state`` to carry bits-per-PRB across subframes."""
    if state is None:
        state = CapacityEstimator(cfg, target)
    if sfn is None:
        if not msgs:
            raise ValueError("sfn is required for an empty subframe")
        sfn = msgs[0].sfn
    return state.update(sfn, msgs)


def capacity_series(per_sfn: Iterable[tuple[int, Sequence[DciMessage]]], cfg: CellConfig,
                    target: int, **kwargs) -> list[CapacitySample]:
    est = CapacityEstimator(cfg, target, **kwargs)
    return [est.update(sfn, msgs) for sfn, msgs in per_sfn]


def smooth(samples: Iterable[CapacitySample], window: int = WINDOW) -> list[SmoothedCapacity]:
    """Sliding means of available PRB and bits per PRB, then their product."""
    if window < 1:
        raise ValueError("window must be at least one subframe")
    prb: deque = deque(maxlen=window)
    bpp: deque = deque(maxlen=window)
    out = []
    for s in samples:
        prb.append(s.available_prb)
        bpp.append(s.bits_per_prb)
        p = sum(prb) / len(prb)
        b = sum(bpp) / len(bpp)
        out.append(SmoothedCapacity(s.sfn, s.cell_id, p, b, p * b))
    return out


def aggregate_ca(streams: Mapping[int, Sequence[SmoothedCapacity]], cells: Sequence[int]) -> list[SmoothedCapacity]:
    """Sum the target's aggregated cells, one sample per subframe.

    A cell missing a subframe contributes its previous value.
    """
    cells = [c for c in cells if c in streams]
    if not cells:
        return []
    by_cell = {c: {s.sfn: s for s in streams[c]} for c in cells}
    sfns = [s for c in cells for s in by_cell[c]]
    first, last = min(sfns), max(sfns)
    last_seen: dict[int, SmoothedCapacity] = {}
    out = []
    stale = 0
    for sfn in range(first, last + 1):
        total_prb = total = 0.0
        for c in cells:
            s = by_cell[c].get(sfn)
            if s is None:
                s = last_seen.get(c)
                if s is not None:
                    stale += 1
            else:
                last_seen[c] = s
            if s is not None:
                total += s.capacity_bits
                total_prb += s.available_prb
        out.append(SmoothedCapacity(sfn, "CA", total_prb, total / total_prb if total_prb else 0.0, total))
    if stale:
        log.info("aggregate held %d stale per-cell samples", stale)
    return out


def cell_utilization(msgs: Iterable[DciMessage], cfg: CellConfig) -> float:
    used = sum(m.nof_prb for m in msgs)
    if used > cfg.n_prb:
        raise ValueError(f"messages allocate {used} PRBs of {cfg.n_prb}")
    return used / cfg.n_prb
