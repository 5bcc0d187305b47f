"""File formats for message and packet logs, LLR streams and result tables."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .coding import CCE_BITS
from .dci import DciMessage, FORMATS
from .fusion import PacketRecord
from .sim import LlrSubframe


class DataFormatError(ValueError):
    """An input file does not have the expected layout."""


MESSAGE_COLUMNS = ["sfn", "cell_id", "rnti", "format", "L", "cce_start", "mcs1", "mcs2",
                   "nof_prb", "tbs", "ndi", "harq"]
DECODED_COLUMNS = MESSAGE_COLUMNS + ["flip_ratio", "attempts", "validated_by"]
PACKET_COLUMNS = ["recv_time_us", "size_bytes", "one_way_delay_us", "seq"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(round(x, 6))
    return str(x)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
            n += 1
    return n


def read_table(path, required: Sequence[str]) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise DataFormatError(f"{path}: missing columns {missing}")
            return list(reader)
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not a text table") from exc


def message_row(m: DciMessage) -> list:
    return [m.sfn, m.cell_id, m.rnti, m.format_id, m.aggregation_level, m.cce_start, m.mcs1,
            m.mcs2, m.nof_prb, m.tbs, m.ndi, m.harq]


def write_messages(path, msgs: Iterable[DciMessage]) -> int:
    return write_table(path, MESSAGE_COLUMNS, (message_row(m) for m in msgs))


def write_decoded(path, rows: Iterable[tuple]) -> int:
    """Rows of (DecodedMessage, attempts)."""
    return write_table(path, DECODED_COLUMNS,
                       (message_row(d.msg) + [d.flip_ratio, attempts, d.validated_by]
                        for d, attempts in rows))


def _int(row: dict, key: str, path) -> int:
    try:
        return int(row[key])
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: bad {key!r} value {row.get(key)!r}") from exc


def read_messages(path) -> list[DciMessage]:
    out = []
    for row in read_table(path, MESSAGE_COLUMNS):
        fmt = row["format"]
        if fmt not in FORMATS:
            raise DataFormatError(f"{path}: unknown format {fmt!r}")
        mcs2 = row["mcs2"]
        try:
            out.append(DciMessage(
                rnti=_int(row, "rnti", path), sfn=_int(row, "sfn", path), format_id=fmt,
                mcs1=_int(row, "mcs1", path), nof_prb=_int(row, "nof_prb", path),
                tbs=_int(row, "tbs", path), ndi=bool(_int(row, "ndi", path)),
                harq=_int(row, "harq", path), aggregation_level=_int(row, "L", path),
                cce_start=_int(row, "cce_start", path),
                mcs2=None if mcs2 == "" else _int(row, "mcs2", path),
                cell_id=_int(row, "cell_id", path)))
        except DataFormatError:
            raise
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return out


def group_by_sfn(msgs: Iterable[DciMessage]) -> dict[int, list[DciMessage]]:
    out: dict[int, list] = {}
    for m in msgs:
        out.setdefault(m.sfn, []).append(m)
    return out


# LLR stream -----------------------------------------------------------------

_HEADER = struct.Struct("<II")
_SFN = struct.Struct("<Q")


class LlrWriter:
    """Little-endian: header (cell_id u32, n_cce u32), then per subframe sfn u64 and n_cce*72 float32."""

    def __init__(self, path, cell_id: int, n_cce: int):
        self.fh = open(path, "wb")
        self.cell_id = cell_id
        self.n_cce = n_cce
        self.fh.write(_HEADER.pack(cell_id, n_cce))

    def write(self, sub: LlrSubframe):
        if sub.llrs.shape != (self.n_cce, CCE_BITS):
            raise ValueError(f"subframe {sub.sfn} has shape {sub.llrs.shape}")
        self.fh.write(_SFN.pack(sub.sfn))
        self.fh.write(np.ascontiguousarray(sub.llrs, dtype="<f4").tobytes())

    def close(self):
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class LlrHeader:
    cell_id: int
    n_cce: int


def read_llr_header(path) -> LlrHeader:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    cell_id, n_cce = _HEADER.unpack(raw)
    if n_cce == 0 or n_cce % 8:
        raise DataFormatError(f"{path}: implausible CCE count {n_cce}")
    return LlrHeader(cell_id, n_cce)


def read_llr_stream(path) -> Iterator[LlrSubframe]:
    hdr = read_llr_header(path)
    block = hdr.n_cce * CCE_BITS * 4
    size = Path(path).stat().st_size - _HEADER.size
    if size % (_SFN.size + block):
        raise DataFormatError(f"{path}: length does not match {hdr.n_cce} CCEs per subframe")
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        while True:
            raw = fh.read(_SFN.size)
            if not raw:
                return
            (sfn,) = _SFN.unpack(raw)
            llrs = np.frombuffer(fh.read(block), dtype="<f4").reshape(hdr.n_cce, CCE_BITS)
            if not np.all(np.isfinite(llrs)):
                raise DataFormatError(f"{path}: non-finite LLRs in subframe {sfn}")
            yield LlrSubframe(int(sfn), hdr.cell_id, llrs.astype(np.float32))


# packet logs ----------------------------------------------------------------

def write_packets(path, records: Iterable[PacketRecord]) -> int:
    return write_table(path, PACKET_COLUMNS,
                       ((r.recv_time, r.size, r.one_way_delay, r.seq) for r in records))


def read_packets(path) -> list[PacketRecord]:
    return [PacketRecord(_int(r, "recv_time_us", path), _int(r, "size_bytes", path),
                         _int(r, "one_way_delay_us", path), _int(r, "seq", path))
            for r in read_table(path, PACKET_COLUMNS)]


def parse_rnti(text: str) -> int:
    try:
        return int(text, 0)
    except ValueError as exc:
        raise ValueError(f"bad C-RNTI {text!r}") from exc


def parse_range(text: str) -> list[float]:
    """'start:stop:step' inclusive of stop, e.g. 0:0.5:0.1."""
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ValueError(f"bad range {text!r}; expected start:stop:step") from exc
    if step <= 0 or stop < start:
        raise ValueError(f"bad range {text!r}")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 10) for i in range(n + 1)]


def optional_int(text: Optional[str]) -> Optional[int]:
    return None if text in (None, "") else int(text)
