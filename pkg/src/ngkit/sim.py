"""Synthetic LTE downlink with ground truth.

Per subframe and cell the simulator schedules PRBs among backlogged UEs
(round robin), runs stop-and-wait HARQ with eight processes, places the
control messages in each UE's hashed search space, encodes them into CCEs,
and passes the control region through an AWGN channel that yields per-bit
LLRs. A packet log for selected UEs is synthesised from the same schedule,
with in-order link-layer delivery so that TB failures produce the
gap-then-burst pattern seen by a real receiver.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .cell import RNTI_MAX, RNTI_MIN, CellConfig, search_space
from .coding import CCE_BITS, attach_crc, conv_encode, rate_match
from .dci import FORMATS, LEVELS, MAX_MCS, N_HARQ, DciMessage, build_dci_payload, min_level, tbs_lookup
from .fusion import PacketRecord

log = logging.getLogger(__name__)

HARQ_RTT = 8
PACKET_WIRE_BYTES = 1500
PACKET_PAYLOAD_BYTES = 1400
FULL_BUFFER_BYTES = 200_000
TRAFFIC_MODELS = ("constant", "bursty", "web")


@dataclass(frozen=True)
class UeProfile:
    rnti: int
    traffic: str = "constant"
    rate_bps: float = 10e6  # constant rate, or the rate while "on"; inf = full buffer
    on_ms: int = 100
    off_ms: int = 100
    flow_bytes: int = 150_000
    flow_gap_ms: float = 300.0  # mean time between web-like flows
    mcs_low: int = 4
    mcs_high: int = 24
    mcs_start: Optional[int] = None
    mcs_move_prob: float = 0.1  # bounded random walk: chance of a +-1 step per subframe
    streams: int = 1
    format_id: Optional[str] = None
    ca_cells: tuple = (1,)
    levels: Optional[tuple] = None

    def __post_init__(self):
        if not RNTI_MIN <= self.rnti <= RNTI_MAX:
            raise ValueError(f"C-RNTI {self.rnti:#06x} outside the usable range")
        if self.traffic not in TRAFFIC_MODELS:
            raise ValueError(f"unknown traffic model {self.traffic!r}")
        if not 0 <= self.mcs_low <= self.mcs_high <= MAX_MCS:
            raise ValueError("MCS bounds must satisfy 0 <= low <= high <= 28")
        if self.streams not in (1, 2):
            raise ValueError("streams must be 1 or 2")
        fmt = self.format_id or ("B" if self.streams == 2 else "A")
        if fmt not in FORMATS:
            raise ValueError(f"unknown format {fmt!r}")
        if (FORMATS[fmt].streams == 2) != (self.streams == 2):
            raise ValueError(f"format {fmt} does not match {self.streams} stream(s)")
        object.__setattr__(self, "format_id", fmt)
        if not self.ca_cells:
            raise ValueError("UE must be served by at least one cell")
        lo = min_level(FORMATS[fmt])
        levels = tuple(self.levels) if self.levels else tuple(l for l in LEVELS if l >= lo)
        if any(l not in LEVELS or l < lo for l in levels):
            raise ValueError(f"format {fmt} cannot use aggregation levels {levels}")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "ca_cells", tuple(self.ca_cells))


@dataclass(frozen=True)
class SubframeTruth:
    sfn: int
    cell_id: int
    messages: tuple
    idle_prb: int
    retransmissions: tuple = ()


@dataclass(frozen=True)
class LlrSubframe:
    sfn: int
    cell_id: int
    llrs: np.ndarray  # (n_cce, 72) float32, read-only

    @property
    def n_cce(self) -> int:
        return self.llrs.shape[0]


@dataclass(frozen=True)
class Occupancy:
    sfn: int
    cell_id: int
    bits: np.ndarray  # (n_cce, 72) coded bits, zero where empty
    occupied: np.ndarray  # (n_cce,) bool


# ---------------------------------------------------------------------------
# placement, encoding, channel


def place_messages(messages: Sequence[DciMessage], cfg: CellConfig, sfn: int):
    """Assign start CCEs inside each message's search space, in the given order.

    Returns (placed, unplaced). The first free candidate wins; a message
    whose candidates are all taken is returned in ``unplaced``.
    """
    used = np.zeros(cfg.n_cce, dtype=bool)
    placed, unplaced = [], []
    for m in messages:
        level = m.aggregation_level
        for start in search_space(m.rnti, sfn, level, cfg.usable_cce):
            if not used[start:start + level].any():
                used[start:start + level] = True
                placed.append(m.at(cce_start=start, sfn=sfn, cell_id=cfg.cell_id))
                break
        else:
            unplaced.append(m)
    return placed, unplaced


def encode_message(msg: DciMessage) -> np.ndarray:
    """Payload -> CRC scrambled with the C-RNTI -> convolutional code -> rate matching."""
    fmt = FORMATS[msg.format_id]
    block = attach_crc(build_dci_payload(msg, fmt), msg.rnti)
    return rate_match(conv_encode(block), msg.aggregation_level)


def encode_subframe(truth: SubframeTruth, cfg: CellConfig) -> Occupancy:
    bits = np.zeros((cfg.n_cce, CCE_BITS), dtype=np.uint8)
    occupied = np.zeros(cfg.n_cce, dtype=bool)
    for m in truth.messages:
        if m.cce_start % m.aggregation_level:
            raise ValueError("message start is not a multiple of its aggregation level")
        if m.cce_start + m.aggregation_level > cfg.usable_cce:
            raise ValueError("message runs past the control region")
        if occupied[m.cces].any():
            raise ValueError("CCE double-booked")
        bits[m.cces] = encode_message(m).reshape(m.aggregation_level, CCE_BITS)
        occupied[m.cces] = True
    return Occupancy(truth.sfn, truth.cell_id, bits, occupied)


def noise_sigma(snr_db: float) -> float:
    """Noise std for unit-energy BPSK at Es/N0 = snr_db."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return math.sqrt(1.0 / (2.0 * 10 ** (snr_db / 10.0)))


def channel_apply(occ: Occupancy, snr_db: float, rng: np.random.Generator) -> LlrSubframe:
    """BPSK-equivalent LLRs 2y/sigma^2; empty CCEs carry noise only.

    At infinite SNR the LLRs are the noiseless +-1 symbols (0 where empty).
    """
    symbols = np.where(occ.occupied[:, None], 1.0 - 2.0 * occ.bits, 0.0)
    sigma = noise_sigma(snr_db)
    if sigma == 0.0:
        llrs = symbols
    else:
        y = symbols + sigma * rng.standard_normal(symbols.shape)
        llrs = 2.0 * y / sigma ** 2
    llrs = np.ascontiguousarray(llrs, dtype=np.float32)
    llrs.flags.writeable = False
    return LlrSubframe(occ.sfn, occ.cell_id, llrs)


def tb_error_probability(ber: float, tbs: int) -> float:
    """Probability that a TB of ``tbs`` bits has at least one i.i.d. bit error."""
    return -math.expm1(tbs * math.log1p(-ber)) if ber < 1 else 1.0


# ---------------------------------------------------------------------------
# scheduling


@dataclass
class _Packet:
    seq: int
    remaining: int
    send_us: int


@dataclass
class _Tb:
    rnti: int
    cell_id: int
    msg: DciMessage
    packets: list  # (seq, send_us) of packets whose last byte is in this TB
    tx_count: int = 1
    delivered_sfn: Optional[int] = None


class _UeState:
    def __init__(self, profile: UeProfile, rng: np.random.Generator, record: bool):
        self.p = profile
        self.rng = rng
        lo, hi = profile.mcs_low, profile.mcs_high
        self.mcs = profile.mcs_start if profile.mcs_start is not None else (lo + hi) // 2
        self.mcs = min(max(self.mcs, lo), hi)
        self.queue: deque[_Packet] = deque()
        self.queued = 0
        self.seq = 0
        self.carry = 0.0
        self.next_flow = 0.0
        self.record = record
        self.in_flight: deque[_Tb] = deque()
        self.log: list[PacketRecord] = []
        self.first_sfn: dict[int, int] = {}

    @property
    def full_buffer(self) -> bool:
        return math.isinf(self.p.rate_bps)

    def _push(self, nbytes: float, now_us: int):
        self.carry += nbytes
        while self.carry >= PACKET_WIRE_BYTES:
            self.carry -= PACKET_WIRE_BYTES
            self.queue.append(_Packet(self.seq, PACKET_WIRE_BYTES, now_us))
            self.queued += PACKET_WIRE_BYTES
            self.seq += 1

    def arrivals(self, sfn: int):
        now = sfn * 1000
        p = self.p
        if self.full_buffer:
            while self.queued < FULL_BUFFER_BYTES:
                self._push(PACKET_WIRE_BYTES, now)
            return
        if p.traffic == "constant":
            self._push(p.rate_bps / 8000.0, now)
        elif p.traffic == "bursty":
            if sfn % (p.on_ms + p.off_ms) < p.on_ms:
                self._push(p.rate_bps / 8000.0, now)
        else:
            while sfn >= self.next_flow:
                self._push(p.flow_bytes + PACKET_WIRE_BYTES - 1, now)
                self.carry = 0.0
                self.next_flow += self.rng.exponential(p.flow_gap_ms)

    def walk_mcs(self):
        if self.rng.random() < self.p.mcs_move_prob:
            step = 1 if self.rng.random() < 0.5 else -1
            self.mcs = min(max(self.mcs + step, self.p.mcs_low), self.p.mcs_high)

    def tbs(self, nof_prb: int) -> int:
        mcs2 = self.mcs if self.p.streams == 2 else None
        return tbs_lookup(self.mcs, mcs2, nof_prb, self.p.streams)

    def demand_prb(self, cap: int) -> int:
        if self.queued == 0:
            return 0
        need = self.queued * 8
        per_prb = self.tbs(1) or 1
        n = min(cap, max(1, need // per_prb))
        while n < cap and self.tbs(n) < need:
            n += 1
        return n

    def drain(self, tbs_bits: int) -> list:
        budget = tbs_bits // 8
        done = []
        while budget > 0 and self.queue:
            pkt = self.queue[0]
            take = min(budget, pkt.remaining)
            pkt.remaining -= take
            budget -= take
            self.queued -= take
            if pkt.remaining == 0:
                self.queue.popleft()
                done.append((pkt.seq, pkt.send_us))
        return done

    def release(self, sfn: int, jitter: np.random.Generator):
        """In-order delivery: pop delivered TBs from the head of the in-flight list."""
        while self.in_flight and self.in_flight[0].delivered_sfn is not None:
            tb = self.in_flight.popleft()
            if not self.record:
                continue
            for seq, send_us in tb.packets:
                recv = sfn * 1000 + int(jitter.integers(0, 400))
                self.log.append(PacketRecord(recv, PACKET_PAYLOAD_BYTES, recv - send_us, seq))


class NetworkSimulator:
    """Joint simulation of one or more cells sharing UE queues (carrier aggregation).

    Each call to :meth:`step` advances one subframe and returns the ground
    truth of every cell, in configuration order.
    """

    def __init__(self, ues: Sequence[UeProfile], cells: Sequence[CellConfig], ber: float = 0.0,
                 seed: int = 0, max_messages: int = 4, max_retx: int = 3,
                 record_rntis: Iterable[int] = (), start_sfn: int = 0):
        if not 0.0 <= ber <= 1.0:
            raise ValueError("bit error rate must be in [0, 1]")
        self.cells = list(cells)
        by_id = {c.cell_id: c for c in self.cells}
        if len(by_id) != len(self.cells):
            raise ValueError("duplicate cell id")
        rnti_seen = set()
        for ue in ues:
            if ue.rnti in rnti_seen:
                raise ValueError(f"duplicate C-RNTI {ue.rnti:#06x}")
            rnti_seen.add(ue.rnti)
            for c in ue.ca_cells:
                if c not in by_id:
                    raise ValueError(f"UE {ue.rnti:#06x} refers to unknown cell {c}")
            if by_id[ue.ca_cells[0]].role == "secondary-only":
                raise ValueError(f"UE {ue.rnti:#06x} has a secondary-only primary cell")
        self.ber = ber
        self.max_messages = max_messages
        self.max_retx = max_retx
        ss = np.random.SeedSequence(seed)
        ue_seeds = ss.spawn(len(ues) + 2)
        record = set(record_rntis)
        self.ues = [_UeState(u, np.random.default_rng(s), u.rnti in record)
                    for u, s in zip(ues, ue_seeds)]
        self.rng = np.random.default_rng(ue_seeds[-2])
        self.jitter = np.random.default_rng(ue_seeds[-1])
        self.sfn = start_sfn
        self.rr = {c.cell_id: 0 for c in self.cells}
        self.pending: dict[tuple[int, int], list[_Tb]] = {}
        self.abandoned = 0

    def packet_log(self, rnti: int) -> list[PacketRecord]:
        for ue in self.ues:
            if ue.p.rnti == rnti:
                return sorted(ue.log, key=lambda r: (r.recv_time, r.seq))
        raise KeyError(rnti)

    def _allocate(self, chosen: list[_UeState], budget: int) -> dict[int, int]:
        """Equal split of ``budget`` PRBs, capped by demand, leftovers re-shared."""
        demand = {u.p.rnti: u.demand_prb(budget) for u in chosen}
        alloc = {r: 0 for r in demand}
        active = [u.p.rnti for u in chosen if demand[u.p.rnti] > 0]
        left = budget
        while active and left > 0:
            share, extra = divmod(left, len(active))
            nxt = []
            for i, r in enumerate(active):
                give = min(share + (1 if i < extra else 0), demand[r] - alloc[r])
                alloc[r] += give
                left -= give
                if alloc[r] < demand[r]:
                    nxt.append(r)
            if len(nxt) == len(active) and share == 0 and extra == 0:
                break
            active = nxt
        return alloc

    def _schedule_cell(self, cfg: CellConfig, sfn: int) -> SubframeTruth:
        cid = cfg.cell_id
        retx_tbs = self.pending.pop((sfn, cid), [])
        retx_msgs = [tb.msg.at(sfn=sfn, ndi=False) for tb in retx_tbs]
        retx_rnti = {tb.rnti for tb in retx_tbs}
        retx_prb = sum(m.nof_prb for m in retx_msgs)

        members = [u for u in self.ues if cid in u.p.ca_cells]
        n = len(members)
        order = [members[(self.rr[cid] + i) % n] for i in range(n)] if n else []
        eligible = []
        for u in order:
            if u.p.rnti in retx_rnti:
                continue
            if u.queued == 0:
                continue
            primary = u.p.ca_cells[0]
            if cid != primary and u.first_sfn.get(primary, sfn) >= sfn:
                continue  # secondary cells only serve UEs already seen on their primary
            eligible.append(u)
        slots = max(0, self.max_messages - len(retx_msgs))
        chosen = eligible[:slots]

        while True:
            alloc = self._allocate(chosen, cfg.n_prb - retx_prb)
            new_msgs = []
            for u in chosen:
                prb = alloc[u.p.rnti]
                if prb == 0:
                    continue
                level = int(u.rng.choice(u.p.levels))
                new_msgs.append(DciMessage(
                    rnti=u.p.rnti, sfn=sfn, format_id=u.p.format_id, mcs1=u.mcs,
                    mcs2=u.mcs if u.p.streams == 2 else None, nof_prb=prb,
                    tbs=u.tbs(prb), ndi=True, harq=sfn % N_HARQ,
                    aggregation_level=level, cell_id=cid))
            ordered = retx_msgs + sorted(new_msgs, key=lambda m: -m.aggregation_level)
            placed, unplaced = place_messages(ordered, cfg, sfn)
            lost_new = [m for m in unplaced if m.ndi]
            if not lost_new:
                break
            log.debug("sfn %d cell %d: placement overflow, dropping %d message(s)",
                      sfn, cid, len(lost_new))
            drop = {m.rnti for m in lost_new}
            chosen = [u for u in chosen if u.p.rnti not in drop]

        by_rnti = {u.p.rnti: u for u in self.ues}
        retx_by_rnti = {tb.rnti: tb for tb in retx_tbs}
        for m in unplaced:  # retransmissions that found no free candidate
            tb = retx_by_rnti[m.rnti]
            tb.delivered_sfn = sfn
            self.abandoned += 1
            log.info("sfn %d cell %d: retransmission for %#06x not placed, TB abandoned",
                     sfn, cid, m.rnti)

        served = 0
        for m in placed:
            u = by_rnti[m.rnti]
            if m.ndi:
                tb = _Tb(m.rnti, cid, m, u.drain(m.tbs))
                u.in_flight.append(tb)
                u.first_sfn.setdefault(cid, sfn)
                served += 1
            else:
                tb = retx_by_rnti[m.rnti]
                tb.tx_count += 1
            if self.rng.random() < tb_error_probability(self.ber, m.tbs):
                if tb.tx_count <= self.max_retx:
                    self.pending.setdefault((sfn + HARQ_RTT, cid), []).append(tb)
                else:
                    tb.delivered_sfn = sfn
                    self.abandoned += 1
            else:
                tb.delivered_sfn = sfn
        if n:
            self.rr[cid] = (self.rr[cid] + max(served, 1)) % n

        messages = tuple(sorted(placed, key=lambda m: m.cce_start))
        used = sum(m.nof_prb for m in messages)
        return SubframeTruth(
            sfn=sfn, cell_id=cid, messages=messages, idle_prb=cfg.n_prb - used,
            retransmissions=tuple((m.rnti, m.harq) for m in messages if not m.ndi))

    def step(self) -> list[SubframeTruth]:
        sfn = self.sfn
        for u in self.ues:
            u.arrivals(sfn)
            u.walk_mcs()
        out = [self._schedule_cell(cfg, sfn) for cfg in self.cells]
        for u in self.ues:
            u.release(sfn, self.jitter)
        self.sfn += 1
        return out

    def run(self, duration_ms: int) -> Iterator[list[SubframeTruth]]:
        if duration_ms < 1:
            raise ValueError("duration must be at least one subframe")
        for _ in range(duration_ms):
            yield self.step()


def schedule_generator(ues: Sequence[UeProfile], cfg: CellConfig, duration_ms: int,
                       ber: float = 0.0, seed: int = 0, **kw) -> Iterator[SubframeTruth]:
    """Ground-truth schedule of a single cell."""
    sim = NetworkSimulator(ues, [cfg], ber=ber, seed=seed, **kw)
    for (truth,) in sim.run(duration_ms):
        yield truth


def simulate(ues: Sequence[UeProfile], cells: Sequence[CellConfig], duration_ms: int,
             snr_db: float, ber: float = 0.0, seed: int = 0, **kw):
    """Yield, per subframe, a list of (truth, llr subframe) pairs in cell order."""
    sim = NetworkSimulator(ues, cells, ber=ber, seed=seed, **kw)
    chans = [np.random.default_rng([seed, 0x11, cfg.cell_id]) for cfg in cells]
    for truths in sim.run(duration_ms):
        yield [(t, channel_apply(encode_subframe(t, cfg), snr_db, chan))
               for t, cfg, chan in zip(truths, cells, chans)]
