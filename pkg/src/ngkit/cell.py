"""Cell configuration and the UE-specific search-space hash."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

BANDWIDTH_PRB = {5: 25, 10: 50, 20: 100}
BANDWIDTH_CCE = {5: 12, 10: 28, 20: 84}
SEGMENT = 8

# search-space hash constants and candidates per aggregation level
HASH_A = 39827
HASH_D = 65537
CANDIDATES = {1: 6, 2: 6, 4: 2, 8: 2}

RNTI_MIN = 0x003D
RNTI_MAX = 0xFFF3


@dataclass(frozen=True)
class CellConfig:
    """One downlink carrier.

    ``usable_cce`` is the control-region size; ``n_cce`` pads it to a whole
    number of 8-CCE segments with always-empty CCEs.
    """

    cell_id: int = 1
    bandwidth_mhz: int = 20
    antennas: int = 2
    role: str = "primary-capable"
    usable_cce: Optional[int] = field(default=None)

    def __post_init__(self):
        if self.bandwidth_mhz not in BANDWIDTH_PRB:
            raise ValueError(f"unsupported bandwidth {self.bandwidth_mhz} MHz")
        if self.role not in ("primary-capable", "secondary-only"):
            raise ValueError(f"unknown cell role {self.role!r}")
        if self.usable_cce is None:
            object.__setattr__(self, "usable_cce", BANDWIDTH_CCE[self.bandwidth_mhz])
        if self.usable_cce <= 0:
            raise ValueError("control region must hold at least one CCE")

    @property
    def n_prb(self) -> int:
        return BANDWIDTH_PRB[self.bandwidth_mhz]

    @property
    def n_cce(self) -> int:
        return -(-self.usable_cce // SEGMENT) * SEGMENT


@lru_cache(maxsize=65536)
def hash_y(rnti: int, subframe: int) -> int:
    """Y_k for subframe k = 0..9, from Y_-1 = rnti and Y_k = A * Y_(k-1) mod D."""
    y = rnti
    for _ in range(subframe + 1):
        y = (HASH_A * y) % HASH_D
    return y


def search_space(rnti: int, sfn: int, level: int, usable_cce: int) -> list[int]:
    """Candidate start CCEs of a UE's search space at one aggregation level."""
    n_pos = usable_cce // level
    if n_pos == 0:
        return []
    y = hash_y(rnti, sfn % 10)
    starts = []
    for m in range(min(CANDIDATES[level], n_pos)):
        s = level * ((y + m) % n_pos)
        if s not in starts:
            starts.append(s)
    return starts
