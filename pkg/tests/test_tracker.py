import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ngkit.dci import DciMessage
from ngkit.decoder import CandidateMessage, DecodedMessage
from ngkit.tracker import (TrackerSnapshot, UeActivity, UeTracker, ca_intersect,
                           false_promotion_bound, false_promotion_mc, promoted_rntis, window_triples)


def cand(rnti, sfn, start=0, level=1, tbs=1000):
    msg = DciMessage(rnti=rnti, sfn=sfn, format_id="C", mcs1=5, nof_prb=10, tbs=tbs, ndi=True,
                     harq=sfn % 8, aggregation_level=level, cce_start=start)
    return CandidateMessage(start, level, "C", np.zeros(32, dtype=np.uint8), rnti, 0.05, 0.0,
                            (0.05,) * level, msg)


def feed(tracker, stream, upto):
    """stream: dict sfn -> list of candidates. Returns released messages."""
    out = []
    for sfn in range(upto):
        out += tracker.observe(sfn, stream.get(sfn, []))
    return out


def test_promotion_at_third_appearance():
    t = UeTracker(cell_id=1)
    assert feed(t, {3: [cand(0x111, 3)], 9: [cand(0x111, 9)]}, 14) == []
    released = t.observe(14, [cand(0x111, 14)])
    assert [d.msg.sfn for d in released] == [3, 9, 14]
    assert all(d.validated_by == "tracker" for d in released)
    assert [e.event for e in t.events] == ["promoted"]
    # later candidates validate immediately
    assert len(t.observe(15, [cand(0x111, 15)])) == 1


def test_two_appearances_far_apart_never_promote():
    t = UeTracker()
    assert feed(t, {0: [cand(0x222, 0)], 20: [cand(0x222, 20)], 40: [cand(0x222, 40)]}, 60) == []
    assert not t.detected


def test_window_edge():
    t = UeTracker()
    # first and third appearance 15 subframes apart: inside the window
    assert len(feed(t, {0: [cand(1, 0)], 7: [cand(1, 7)], 15: [cand(1, 15)]}, 16)) == 3
    t = UeTracker()
    assert feed(t, {0: [cand(1, 0)], 7: [cand(1, 7)], 16: [cand(1, 16)]}, 17) == []


def test_out_of_order_rejected():
    t = UeTracker()
    t.observe(5, [])
    with pytest.raises(ValueError):
        t.observe(5, [])


def test_release_skips_overlapping_cces():
    t = UeTracker()
    real = DecodedMessage(cand(0x500, 2, start=0, level=2).message, 0.0, "ancestor")
    t.observe(1, [cand(0x333, 1, start=4)])
    t.observe(2, [cand(0x333, 2, start=1)], validated=[real])  # overlaps the validated message
    released = t.observe(3, [cand(0x333, 3, start=4)])
    assert [d.msg.sfn for d in released] == [1, 3]


def test_validated_messages_count_as_activity():
    t = UeTracker()
    real = DecodedMessage(cand(0x600, 0, tbs=5000).message, 0.0, "ancestor")
    t.observe(0, [], validated=[real])
    snap = t.snapshot()
    assert snap.ues[0x600].count == 1 and snap.ues[0x600].rate_bps == 5000.0


def test_expiry_boundary():
    t = UeTracker()
    t.observe(0, [], validated=[DecodedMessage(cand(0x700, 0).message, 0.0, "ancestor")])
    assert t.expire(9999) == [] and 0x700 in t.detected
    assert t.expire(10_000) == [0x700] and not t.detected
    assert t.expire(20_000) == []
    assert t.events[-1].event == "expired"


def test_activity_window_slides():
    t = UeTracker()
    for sfn in (0, 500, 999):
        t.observe(sfn, [], validated=[DecodedMessage(cand(0x700, sfn).message, 0.0, "ancestor")])
    assert t.snapshot(999).ues[0x700].count == 3
    assert t.snapshot(1000).ues[0x700].count == 2
    assert t.snapshot(1500).ues[0x700].count == 1


def test_hints_ordered_by_activity():
    snap = TrackerSnapshot(1, 0, {5: UeActivity(0, 0, 2, 0.0), 3: UeActivity(0, 0, 2, 0.0),
                                  9: UeActivity(0, 0, 7, 0.0)})
    assert snap.hints() == [9, 3, 5]


def snap(cell, ues):
    return TrackerSnapshot(cell, 200, {r: UeActivity(first, first, 10, rate) for r, (first, rate) in ues.items()})


def test_ca_primary_secondary_tertiary():
    ca = ca_intersect([snap(5, {0x100: (150, 2e6)}), snap(1, {0x100: (100, 2e6)}),
                       snap(4, {0x100: (150, 2e6)})])
    assert [c for c, _ in ca.cells[0x100]] == [1, 4, 5]
    assert ca.primary(0x100) == 1
    assert ca.rate_bps[0x100] == pytest.approx(6e6)


def test_ca_requires_two_cells_and_rate():
    ca = ca_intersect([snap(1, {0x100: (0, 10e6), 0x200: (0, 0.5e6)}), snap(2, {0x200: (5, 0.5e6)})])
    assert 0x100 not in ca.cells  # one cell only
    assert 0x200 not in ca.cells  # 1 Mbit/s in total
    assert ca_intersect([]).cells == {}


def test_ca_stale_snapshot_warns(caplog):
    old = TrackerSnapshot(2, 100, {})
    with caplog.at_level("WARNING"):
        ca_intersect([snap(1, {}), old])
    assert "old" in caplog.text


streams = st.lists(st.tuples(st.integers(0, 80), st.integers(0, 5)), max_size=60)


@given(streams)
def test_vectorised_rule_matches_tracker(events):
    t = UeTracker()
    by_sfn = {}
    for sfn, r in events:
        by_sfn.setdefault(sfn, []).append(cand(r, sfn))
    feed(t, by_sfn, 81)
    sfns = [s for s, _ in events]
    rntis = [r for _, r in events]
    assert set(t.detected) == set(promoted_rntis(sfns, rntis).tolist())


@given(streams, st.tuples(st.integers(0, 80), st.integers(0, 5)))
def test_extra_appearance_never_unpromotes(events, extra):
    before = set(promoted_rntis([s for s, _ in events], [r for _, r in events]).tolist())
    more = events + [extra]
    after = set(promoted_rntis([s for s, _ in more], [r for _, r in more]).tolist())
    assert before <= after


@given(streams, st.integers(100, 1000))
def test_promotion_depends_only_on_window(events, shift):
    # replaying the same stream later in time changes nothing
    a = promoted_rntis([s for s, _ in events], [r for _, r in events])
    b = promoted_rntis([s + shift for s, _ in events], [r for _, r in events])
    assert np.array_equal(a, b)


@pytest.mark.parametrize("n,w", [(5, 16), (20, 16), (40, 4), (3, 3)])
def test_window_triples_brute_force(n, w):
    brute = sum(1 for i, j, k in itertools.combinations(range(n), 3) if k - i < w)
    assert window_triples(n, w) == brute


def test_false_promotion_bound_value():
    assert window_triples(1000) == 103_880
    assert false_promotion_bound(1000) == pytest.approx(103_880 / 2 ** 32)


def test_conditional_monte_carlo_matches_direct_sampling():
    rng = np.random.default_rng(0)
    n, space, trials = 120, 300, 20_000
    ids = rng.integers(0, space, size=(trials, n))
    direct = np.mean([len(promoted_rntis(np.arange(n), row)) > 0 for row in ids])
    mc = false_promotion_mc(n, 20_000, np.random.default_rng(1), space=space)
    bound = false_promotion_bound(n, space=space)
    # expected number of triples sits between the probability and the union bound
    assert direct <= mc * 1.1
    assert mc == pytest.approx(bound, rel=0.05)
