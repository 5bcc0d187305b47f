import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ngkit.emulation import (CAPACITY_MODE, CUBIC_BETA, CUBIC_C, FALLBACK_MODE, MTU_BITS,
                             ConstantRate, Cubic, CubicSender, LinkTrace, NgCc, PacketResult,
                             drop_messages, emulate, metrics, nearest_rank, read_trace,
                             trace_from_capacity, write_trace)


def test_trace_examples():
    assert trace_from_capacity([12_000] * 10).counts.tolist() == [1] * 10
    assert trace_from_capacity([0] * 10).counts.sum() == 0
    t = trace_from_capacity([18_000] * 10)
    assert t.counts.tolist() == [1, 2] * 5 and t.counts.mean() == 1.5
    assert t.mean_rate_bps == pytest.approx(18e6)
    with pytest.raises(ValueError):
        trace_from_capacity([-1])


@given(st.lists(st.floats(0, 200_000), max_size=200))
def test_carry_conserves_bits(bits):
    counts = trace_from_capacity(bits).counts
    total = sum(bits)
    assert counts.sum() * MTU_BITS <= total + 1e-6
    assert total - counts.sum() * MTU_BITS < MTU_BITS + 1e-6


@given(st.lists(st.integers(0, 5), min_size=1, max_size=100))
def test_trace_file_round_trip(tmp_path_factory, counts):
    path = tmp_path_factory.mktemp("t") / "x.trace"
    trace = LinkTrace(np.array(counts, dtype=np.int64))
    write_trace(trace, path)
    back = read_trace(path)
    # trailing empty milliseconds are not representable in the timestamp format
    n = back.duration_ms
    assert np.array_equal(back.counts, trace.counts[:n]) and not trace.counts[n:].any()


def test_bad_trace_file(tmp_path):
    p = tmp_path / "bad.trace"
    p.write_text("1\nx\n")
    with pytest.raises(ValueError):
        read_trace(p)
    p.write_text("5\n3\n")
    with pytest.raises(ValueError):
        read_trace(p)


def test_cubic_decrease_and_growth():
    c = Cubic(cwnd=100.0, ssthresh=0.0)
    w = c.on_loss(10.0)
    assert w == pytest.approx(70.0)
    k = (100 * (1 - CUBIC_BETA) / CUBIC_C) ** (1 / 3)
    for dt in (0.5, 1.0, 2.0, 5.0):
        got = c.on_ack(10.0 + dt)
        assert got == pytest.approx(max(70.0, CUBIC_C * (dt - k) ** 3 + 100.0))


@given(st.lists(st.floats(0.0, 0.5), min_size=1, max_size=50))
def test_cubic_without_loss_never_shrinks(gaps):
    c = Cubic(cwnd=10.0, ssthresh=20.0)
    t, last = 0.0, c.cwnd
    for g in gaps:
        t += g
        w = c.on_ack(t)
        assert w >= last
        last = w


def test_light_load_sees_propagation_delay_only():
    r = emulate(LinkTrace(np.full(2000, 4)), ConstantRate(6e6), prop_delay_ms=10)
    assert r.metrics.p95_delay_ms == 10 and r.queue.max() == 0


def test_overload_queue_grows_linearly():
    r = emulate(LinkTrace(np.full(2000, 1)), ConstantRate(24e6), prop_delay_ms=10)
    slope = np.polyfit(np.arange(100, 2000), r.queue[100:], 1)[0]
    assert slope == pytest.approx(1.0, rel=0.01)


def test_matched_load_keeps_queue_bounded():
    r = emulate(trace_from_capacity([18_000] * 3000), ConstantRate(18e6), prop_delay_ms=10)
    assert r.queue.max() <= 1


def test_emulation_is_deterministic():
    trace = trace_from_capacity(np.random.default_rng(1).uniform(0, 60_000, 3000))
    a = emulate(trace, CubicSender(), prop_delay_ms=20, buffer_packets=100)
    b = emulate(trace, CubicSender(), prop_delay_ms=20, buffer_packets=100)
    assert a.packets == b.packets


def test_cubic_sender_fills_a_buffered_link():
    r = emulate(LinkTrace(np.full(5000, 2)), CubicSender(), prop_delay_ms=10, buffer_packets=50)
    assert r.metrics.throughput_bps > 0.9 * 24e6
    assert any(p.delivered_ms < 0 for p in r.packets)


def test_ngcc_follows_capacity_step():
    tel = np.array([30_000.0] * 50 + [50_000.0] * 50)
    cc = NgCc(tel)
    assert cc.step(49) == 30_000 and cc.step(50) == 50_000


def test_ngcc_fallback_exit_rule():
    cc = NgCc(np.full(100, 50_000.0))
    cc.step(0, rtt_sample=20)
    cc.step(1, rtt_sample=200)  # queueing elsewhere, cell idle
    assert cc.mode == FALLBACK_MODE
    cc.cubic.cwnd = 60_000 * cc.srtt / MTU_BITS if cc.srtt else 5.0
    cc.srtt = 1.0
    cc.cubic.cwnd = 60_000 / MTU_BITS  # 60 Mbit/s against 50 reported
    cc.step(2)
    assert cc.mode == CAPACITY_MODE and cc.rate_bits == 50_000
    assert [m for _, m in cc.mode_changes] == [FALLBACK_MODE, CAPACITY_MODE]


def test_ngcc_busy_cell_does_not_fall_back():
    cc = NgCc(np.full(100, 50_000.0), utilization=np.full(100, 0.95))
    cc.step(0, rtt_sample=20)
    cc.step(1, rtt_sample=200)
    assert cc.mode == CAPACITY_MODE


def test_ngcc_holds_rate_when_telemetry_stale(caplog):
    tel = np.full(400, np.nan)
    tel[:10] = 40_000.0
    cc = NgCc(tel)
    for t in range(10):
        cc.step(t)
    with caplog.at_level("WARNING"):
        rates = [cc.step(t) for t in range(10, 300)]
    assert all(r == 40_000 for r in rates)
    assert cc.stale and "stale" in caplog.text


def test_ngcc_with_perfect_telemetry_keeps_queue_small():
    rng = np.random.default_rng(2)
    trace = trace_from_capacity(np.repeat(rng.uniform(5_000, 80_000, 60), 100))
    r = emulate(trace, NgCc(trace.counts * float(MTU_BITS), lead_ms=10), prop_delay_ms=10)
    assert r.queue[50:].max() <= 2
    assert r.metrics.throughput_bps >= 0.95 * trace.mean_rate_bps


def test_metric_examples():
    assert metrics([]).empty
    assert metrics([PacketResult(i, 0, -1) for i in range(3)]).empty
    assert metrics([PacketResult(i, i, i + 10) for i in range(50)]).p95_delay_ms == 10
    delays = [10] * 90 + [100] * 10
    assert nearest_rank(delays, 95) == 100
    assert nearest_rank([1, 2, 3, 4], 50) == 2
    with pytest.raises(ValueError):
        nearest_rank([], 95)


def test_drop_messages_examples():
    msgs = list(range(10_000))
    assert drop_messages(msgs, 0.0, 1) == msgs
    with pytest.raises(ValueError):
        drop_messages(msgs, 1.0, 1)
    kept = len(drop_messages(msgs, 0.5, 1))
    assert abs(kept - 5000) <= 3 * math.sqrt(10_000 * 0.25)
    assert drop_messages(msgs, 0.3, 9) == drop_messages(msgs, 0.3, 9)
