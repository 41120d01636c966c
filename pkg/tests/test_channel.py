import math
import random

import pytest
from hypothesis import given, strategies as st

from mlosteer.channel import (
    LOST,
    SUCCESS,
    ChannelState,
    McsTable,
    Outage,
    OutageSchedule,
    UnknownMcs,
    external_busy,
    sample_attempt_outcome,
    tx_duration,
)
from mlosteer.core import Band, ChannelId

CH = ChannelId(0, Band.GHz5)


def state(loss=0.0, outages=()):
    return ChannelState(CH, McsTable({0: 120.0, 1: 240.0}), loss, OutageSchedule(tuple(outages)))


def test_zero_payload_is_overhead_only():
    assert tx_duration(0, 0, McsTable({0: 120.0}), overhead=50) == 50


def test_1500_bytes_at_120():
    assert tx_duration(1500, 0, McsTable({0: 120.0}), overhead=50) == 150


def test_rate_ratio_scales_payload_time():
    table = McsTable({0: 12.0, 1: 120.0})
    slow = tx_duration(1500, 0, table, overhead=50) - 50
    fast = tx_duration(1500, 1, table, overhead=50) - 50
    assert (slow, fast) == (1000, 100)
    assert slow == 10 * fast


def test_rts_cts_adds_overhead():
    t = McsTable({0: 120.0})
    assert tx_duration(1500, 0, t, rts_cts=True) - tx_duration(1500, 0, t) == 44


def test_unknown_mcs():
    with pytest.raises(UnknownMcs):
        tx_duration(100, 7, McsTable({0: 120.0}))


@pytest.mark.parametrize("rates", [{0: 0.0}, {0: 100.0, 1: 50.0}, {}])
def test_mcs_table_invariants(rates):
    with pytest.raises(ValueError):
        McsTable(rates)


def test_no_loss_always_succeeds():
    rng = random.Random(1)
    s = state(0.0)
    assert all(sample_attempt_outcome(s, t, rng) == SUCCESS for t in range(1000))


def test_full_outage_always_loses():
    rng = random.Random(1)
    s = state(0.0, [Outage(0, 10_000, 1.0)])
    assert all(sample_attempt_outcome(s, t, rng) == LOST for t in range(0, 10_000, 7))


def test_loss_ratio_converges():
    n, p = 100_000, 0.3
    rng = random.Random(2024)
    s = state(p)
    lost = sum(sample_attempt_outcome(s, 0, rng) == LOST for _ in range(n))
    # 0.01 is ~6.9 binomial standard deviations at this n
    assert abs(lost / n - p) <= 0.01


@given(st.integers(0, 2**32), st.floats(0.0, 0.99))
def test_one_draw_per_sample(seed, p):
    a, b = random.Random(seed), random.Random(seed)
    sample_attempt_outcome(state(p), 0, a)
    b.random()
    assert a.random() == b.random()


def test_external_busy_examples():
    assert all(external_busy(state(), t) is None for t in (0, 1000, 10**9))
    s = state(outages=[Outage(1000, 5000, busy=True)])
    assert external_busy(s, 2000) == 5000
    assert external_busy(s, 1000) == 5000
    assert external_busy(s, 5000) is None
    assert external_busy(s, 999) is None


def test_lossy_outage_is_not_busy():
    s = state(outages=[Outage(1000, 5000, 0.5, busy=False)])
    assert external_busy(s, 2000) is None
    assert s.loss_prob(2000) == 0.5 and s.loss_prob(5000) == 0.0


@st.composite
def schedules(draw):
    cuts = sorted(draw(st.sets(st.integers(0, 10_000), min_size=0, max_size=12)))
    intervals = []
    for a, b in zip(cuts[::2], cuts[1::2]):
        intervals.append(Outage(a, b, busy=draw(st.booleans())))
    return OutageSchedule(tuple(intervals))


@given(schedules(), st.integers(0, 10_500))
def test_external_busy_matches_schedule(sched, t):
    s = ChannelState(CH, McsTable({0: 1.0}), 0.0, sched)
    expected = next((o.end for o in sched.intervals if o.busy and o.start <= t < o.end), None)
    assert external_busy(s, t) == expected


def test_overlapping_outages_rejected():
    with pytest.raises(ValueError):
        OutageSchedule((Outage(0, 10), Outage(5, 20)))


def test_base_loss_range():
    with pytest.raises(ValueError):
        state(1.0)


def test_busy_until_never_moves_back():
    s = state()
    s.mark_busy(100)
    s.mark_busy(50)
    assert s.busy_until == 100
