"""Synthetic workloads shared by the unit and acceptance tests."""
import math
from dataclasses import replace

from ngkit.cell import CellConfig
from ngkit.sim import NetworkSimulator, UeProfile

TARGET = 0x0100


def decoder_ues():
    """Four UEs, 1-4 messages per subframe, every format."""
    return [UeProfile(0x100 + i * 37, rate_bps=r, format_id=f, streams=s)
            for i, (r, f, s) in enumerate([(20e6, "A", 1), (5e6, "C", 1), (math.inf, "B", 2),
                                            (2e6, "C", 1)])]


def busy_cell_ues():
    """Full-buffer two-stream target sharing a cell with four competitors."""
    return [UeProfile(TARGET, rate_bps=math.inf, streams=2, mcs_low=12)] + [
        UeProfile(0x200 + i * 91, traffic=tr, rate_bps=r)
        for i, (tr, r) in enumerate([("bursty", 20e6), ("web", 10e6), ("constant", 8e6), ("bursty", 10e6)])]


def shift_log(records, offset_ms):
    return [replace(r, recv_time=r.recv_time + offset_ms * 1000) for r in records]


def fusion_run(seed, duration_ms=600, ber=3e-5, ues=None, record=(TARGET,)):
    """Packet log of the recorded UE(s) and every message, from one cell."""
    ues = ues or [UeProfile(TARGET, rate_bps=12e6, mcs_low=10, mcs_high=10),
                  UeProfile(0x0200, rate_bps=8e6, mcs_low=10, mcs_high=10)]
    sim = NetworkSimulator(ues, [CellConfig()], ber=ber, seed=seed, record_rntis=record)
    msgs = [m for (tr,) in sim.run(duration_ms) for m in tr.messages]
    return sim, msgs
