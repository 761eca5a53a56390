import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmesim.ewma import settling_time
from dsmesim.schedule import ActEntry, ConfigError, Direction, GtsDescriptor
from dsmesim.scheduler import (
    Intent,
    LinkScheduler,
    TrafficEstimate,
    pick_victim,
    reconcile,
    required_slots,
    update_estimate,
)


def test_first_step():
    assert update_estimate(TrafficEstimate(alpha=0.05), 5).rate == pytest.approx(0.25)


def test_alpha_one_forgets_history():
    est = TrafficEstimate(alpha=1.0, rate=17.2)
    assert update_estimate(est, 3).rate == 3


def test_constant_input_closed_form():
    est = TrafficEstimate(alpha=0.05)
    for t in range(1, 120):
        est = update_estimate(est, 5)
        assert est.rate == pytest.approx((1 - 0.95**t) * 5, rel=1e-12)


def test_rate_zero_until_first_packet():
    est = TrafficEstimate()
    for _ in range(10):
        est = update_estimate(est, 0)
        assert est.rate == 0.0
    assert est.idle_msf_counter == 10
    est = update_estimate(est, 1)
    assert est.rate > 0 and est.idle_msf_counter == 0


@pytest.mark.parametrize(
    "rate,allocated,expected",
    [(5.3, 5, 6), (2.4, 3, 3), (0.9, 4, 2), (3.0, 3, 3), (1.0, 3, 3), (0.99, 3, 2)],
)
def test_hysteresis_branches(rate, allocated, expected):
    # exact ties at 0 and -2 fall into the unchanged branch
    assert required_slots(TrafficEstimate(rate=rate, allocated=allocated)) == expected


def test_depreciation_forces_zero():
    est = TrafficEstimate(rate=0.7, allocated=2, idle_msf_counter=50, depreciation_threshold=50)
    assert required_slots(est) == 0


def test_hysteresis_disabled_tracks_ceiling():
    assert required_slots(TrafficEstimate(rate=2.4, allocated=3, hysteresis=False)) == 3
    assert required_slots(TrafficEstimate(rate=2.01, allocated=3, hysteresis=False)) == 3
    assert required_slots(TrafficEstimate(rate=1.9, allocated=3, hysteresis=False)) == 2


@settings(max_examples=200, deadline=None)
@given(rate=st.floats(0, 50), allocated=st.integers(0, 60))
def test_required_in_allowed_set(rate, allocated):
    r = required_slots(TrafficEstimate(rate=rate, allocated=allocated))
    assert r in {math.ceil(rate), math.ceil(rate) + 1, allocated}


@settings(max_examples=200, deadline=None)
@given(rate=st.floats(0, 50), alpha=st.floats(0.01, 1.0), a=st.integers(0, 40), b=st.integers(0, 40))
def test_update_monotone_in_packets(rate, alpha, a, b):
    est = TrafficEstimate(alpha=alpha, rate=rate)
    lo, hi = sorted((a, b))
    assert update_estimate(est, lo).rate <= update_estimate(est, hi).rate
    assert update_estimate(est, lo).rate >= 0


def test_reconcile_rules():
    assert reconcile(TrafficEstimate(required=3, allocated=1)) is Intent.ALLOCATE
    assert reconcile(TrafficEstimate(required=3, allocated=1), in_flight=True) is None
    assert reconcile(TrafficEstimate(required=2, allocated=2)) is None
    assert reconcile(TrafficEstimate(required=0, allocated=2)) is Intent.DEALLOCATE


def test_one_in_flight_per_link():
    link = LinkScheduler(TrafficEstimate(alpha=1.0))
    link.record_enqueue(3)
    assert link.on_multisuperframe(allocated=1) is Intent.ALLOCATE
    link.record_enqueue(3)
    assert link.on_multisuperframe(allocated=1) is None
    link.handshake_done()
    link.record_enqueue(3)
    assert link.on_multisuperframe(allocated=2) is Intent.ALLOCATE


def test_depreciated_link_sequential_deallocations():
    link = LinkScheduler(TrafficEstimate(alpha=0.05, rate=0.7, idle_msf_counter=49, depreciation_threshold=50))
    intents = []
    allocated = 2
    for _ in range(6):
        intent = link.on_multisuperframe(allocated)
        intents.append(intent)
        if intent is Intent.DEALLOCATE:
            allocated -= 1
            link.handshake_done()
    assert intents[:2] == [Intent.DEALLOCATE, Intent.DEALLOCATE]
    assert all(i is None for i in intents[2:])


@settings(max_examples=50, deadline=None)
@given(
    history=st.lists(st.integers(0, 12), min_size=1, max_size=80),
    threshold=st.integers(1, 60),
    alpha=st.floats(0.01, 1.0),
)
def test_depreciation_stops_intents_permanently(history, threshold, alpha):
    link = LinkScheduler(TrafficEstimate(alpha=alpha, depreciation_threshold=threshold))
    allocated = 0

    def step():
        nonlocal allocated
        intent = link.on_multisuperframe(allocated)
        if intent is Intent.ALLOCATE:
            allocated += 1
        elif intent is Intent.DEALLOCATE:
            allocated -= 1
        link.handshake_done()
        return intent

    for p in history:
        link.record_enqueue(p)
        step()
    # link goes silent at T
    late = [step() for _ in range(threshold + 200)]
    assert all(i is not Intent.ALLOCATE for i in late[threshold:])
    assert allocated == 0
    assert link.estimate.required == 0


def test_settling_crossing_within_one_step():
    for mu, alpha in [(5, 0.05), (3, 0.1), (10, 0.02), (2, 0.3)]:
        est = TrafficEstimate(alpha=alpha)
        t = 0
        while est.rate < mu - 1:
            est = update_estimate(est, mu)
            t += 1
        assert abs(t - settling_time(mu, alpha)) <= 1


def test_fixed_traffic_stable_after_settling():
    link = LinkScheduler(TrafficEstimate(alpha=0.05))
    allocated = 0
    changes = []
    for t in range(600):
        link.record_enqueue(5)
        intent = link.on_multisuperframe(allocated)
        if intent is Intent.ALLOCATE:
            allocated += 1
        elif intent is Intent.DEALLOCATE:
            allocated -= 1
        link.handshake_done()
        if intent is not None:
            changes.append(t)
    settle = settling_time(5, 0.05)
    # the last allocations only finish once the rate passes mu - 1 and then mu - 0
    assert max(changes) < 3 * settle
    assert allocated == 5


def test_poisson_stays_in_hysteresis_band():
    rng = np.random.default_rng(7)
    link = LinkScheduler(TrafficEstimate(alpha=0.05))
    allocated = 0
    counts = []
    for t in range(3000):
        link.record_enqueue(int(rng.poisson(5)))
        intent = link.on_multisuperframe(allocated)
        if intent is Intent.ALLOCATE:
            allocated += 1
        elif intent is Intent.DEALLOCATE:
            allocated -= 1
        link.handshake_done()
        counts.append(allocated)
    tail = np.array(counts[200:])
    assert tail.min() >= 4 and tail.max() <= 7


def test_pick_victim_most_recent():
    entries = [
        ActEntry(GtsDescriptor(0, 1, 11, Direction.TX, 2), created=5),
        ActEntry(GtsDescriptor(0, 3, 12, Direction.TX, 2), created=9),
        ActEntry(GtsDescriptor(1, 0, 12, Direction.TX, 2), created=2),
    ]
    assert pick_victim(entries).descriptor.slot == 3
    assert pick_victim([]) is None


def test_estimate_validation():
    with pytest.raises(ConfigError):
        TrafficEstimate(alpha=0)
    with pytest.raises(ConfigError):
        update_estimate(TrafficEstimate(), -1)
