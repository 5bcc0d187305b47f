"""Downlink control messages: field layouts with payload packing, and TB sizes."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .coding import CRC_LEN, as_bits, bits_to_int, int_to_bits

MAX_MCS = 28
N_HARQ = 8
LEVELS = (1, 2, 4, 8)
RE_PER_PRB = 132

# Spectral efficiency per MCS index (modulation bits x code rate).
# 0-9 QPSK, 10-16 16QAM, 17-28 64QAM.
_QM = [2] * 10 + [4] * 7 + [6] * 12
_CODE_RATE = [
    0.117, 0.153, 0.188, 0.245, 0.301, 0.370, 0.438, 0.514, 0.588, 0.663,
    0.332, 0.369, 0.424, 0.478, 0.540, 0.602, 0.643,
    0.429, 0.455, 0.505, 0.553, 0.602, 0.650, 0.702, 0.754, 0.803, 0.853, 0.889, 0.925,
]
EFFICIENCY = tuple(round(q * r, 4) for q, r in zip(_QM, _CODE_RATE))


@dataclass(frozen=True)
class FormatSpec:
    name: str
    fields: tuple  # (field name, width) in transmission order; "reserved" is zero fill
    streams: int = 1

    @property
    def length(self) -> int:
        return sum(w for _, w in self.fields)

    @property
    def block_length(self) -> int:
        """Payload plus appended CRC: the convolutional encoder input length."""
        return self.length + CRC_LEN

    @property
    def coded_length(self) -> int:
        return 3 * self.block_length


FORMATS = {
    # single stream
    "A": FormatSpec("A", (("nof_prb", 7), ("mcs1", 5), ("ndi", 1), ("harq", 3), ("reserved", 11))),
    # two spatial streams, second MCS
    "B": FormatSpec(
        "B",
        (("nof_prb", 7), ("mcs1", 5), ("mcs2", 5), ("ndi", 1), ("harq", 3), ("reserved", 18)),
        streams=2,
    ),
    # compact
    "C": FormatSpec("C", (("nof_prb", 7), ("mcs1", 5), ("ndi", 1), ("harq", 3))),
}


def min_level(fmt: FormatSpec) -> int:
    """Smallest aggregation level whose CCEs hold at least two of the three coded streams."""
    for level in LEVELS:
        if 72 * level >= 2 * fmt.block_length:
            return level
    return 8


@dataclass(frozen=True)
class DciMessage:
    rnti: int
    sfn: int
    format_id: str
    mcs1: int
    nof_prb: int
    tbs: int
    ndi: bool
    harq: int
    aggregation_level: int = 1
    cce_start: int = 0
    mcs2: Optional[int] = None
    cell_id: int = 0

    @property
    def streams(self) -> int:
        return 2 if self.mcs2 is not None else 1

    @property
    def cces(self) -> range:
        return range(self.cce_start, self.cce_start + self.aggregation_level)

    def at(self, **changes) -> "DciMessage":
        return replace(self, **changes)


def tbs_lookup(mcs1: int, mcs2: Optional[int], nof_prb: int, streams: int = 1) -> int:
    """Transport block size in bits from the shipped efficiency table.

    Each stream carries ``round(nof_prb * 132 * eff(mcs))`` bits; with two
    streams and no second MCS the first MCS is used for both.
    """
    if streams not in (1, 2):
        raise ValueError("streams must be 1 or 2")
    mcs_list = [mcs1] if streams == 1 else [mcs1, mcs1 if mcs2 is None else mcs2]
    for m in mcs_list:
        if not 0 <= m <= MAX_MCS:
            raise ValueError(f"invalid MCS {m}")
    if nof_prb < 0:
        raise ValueError("negative PRB count")
    return sum(int(round(nof_prb * RE_PER_PRB * EFFICIENCY[m])) for m in mcs_list)


def _field_value(msg: DciMessage, name: str) -> int:
    if name == "reserved":
        return 0
    if name == "ndi":
        return int(bool(msg.ndi))
    value = getattr(msg, name)
    if value is None:
        raise ValueError(f"format requires field {name}")
    return int(value)


def build_dci_payload(msg: DciMessage, fmt: FormatSpec) -> np.ndarray:
    """Pack the message fields MSB-first in the format's field order."""
    if fmt.streams == 1 and msg.mcs2 is not None:
        raise ValueError(f"format {fmt.name} has no second MCS")
    parts = []
    for name, width in fmt.fields:
        value = _field_value(msg, name)
        if value >= (1 << width) or value < 0:
            raise ValueError(f"field {name}={value} overflows {width} bits")
        parts.append(int_to_bits(value, width))
    return np.concatenate(parts)


def unpack_fields(bits, fmt: FormatSpec) -> dict:
    bits = as_bits(bits)
    if bits.size != fmt.length:
        raise ValueError(f"format {fmt.name} expects {fmt.length} bits, got {bits.size}")
    out, pos = {}, 0
    for name, width in fmt.fields:
        if name != "reserved":
            out[name] = bits_to_int(bits[pos:pos + width])
        pos += width
    return out


def parse_dci_payload(bits, fmt: FormatSpec, *, rnti: int = 0, sfn: int = 0,
                      aggregation_level: int = 1, cce_start: int = 0,
                      cell_id: int = 0) -> DciMessage:
    """Inverse of :func:`build_dci_payload`; context not carried in the payload is passed in."""
    f = unpack_fields(bits, fmt)
    mcs2 = f.get("mcs2")
    if f["mcs1"] > MAX_MCS or (mcs2 is not None and mcs2 > MAX_MCS):
        raise ValueError("MCS out of range")
    return DciMessage(
        rnti=rnti,
        sfn=sfn,
        format_id=fmt.name,
        mcs1=f["mcs1"],
        mcs2=mcs2,
        nof_prb=f["nof_prb"],
        tbs=tbs_lookup(f["mcs1"], mcs2, f["nof_prb"], fmt.streams),
        ndi=bool(f["ndi"]),
        harq=f["harq"],
        aggregation_level=aggregation_level,
        cce_start=cce_start,
        cell_id=cell_id,
    )
