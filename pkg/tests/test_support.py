"""Topology, routing, traffic and scenario parsing."""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsmesim.schedule import SYMBOL_DURATION, ConfigError
from dsmesim.sim.routing import Router, gpsr_line_next_hop, line_distance
from dsmesim.sim.scenario import Scenario, scenario_from_dict, scenario_to_dict, set_path
from dsmesim.sim.topology import (
    DESK_RINGS,
    PAPER_RINGS,
    TopologySpec,
    build_topology,
    greedy_voids,
)
from dsmesim.sim.traffic import TrafficSpec, emission_times, traffic_tick

# ---------------------------------------------------------------- topology


@pytest.mark.parametrize("kind", ["circles", "paper"])
def test_default_rings_have_no_greedy_voids(kind):
    topo = build_topology(TopologySpec(kind=kind), 50.0)
    assert topo.n == 1 + sum(DESK_RINGS if kind == "circles" else PAPER_RINGS)
    assert greedy_voids(topo.positions, 50.0) == []


def test_ring_levels_and_radii():
    topo = build_topology(TopologySpec(kind="circles", rings=(6, 10)), 50.0)
    r = np.hypot(topo.positions[:, 0], topo.positions[:, 1])
    assert np.allclose(r[topo.level == 1], 35.0)
    assert np.allclose(r[topo.level == 2], 70.0)
    assert list(topo.level).count(2) == 10


def test_line_levels_are_hop_counts():
    topo = build_topology(TopologySpec(kind="line", n=5), 50.0)
    assert list(topo.level) == [0, 1, 2, 3, 4]


def test_tree_rejects_overlong_edge():
    with pytest.raises(ConfigError):
        build_topology(TopologySpec(kind="tree", spacing=1.5), 50.0)


def test_tree_depths_follow_parents():
    topo = build_topology(TopologySpec(kind="tree"), 50.0)
    for child, parent in topo.parents.items():
        assert topo.level[child] == topo.level[parent] + 1
        assert np.hypot(*(topo.positions[child] - topo.positions[parent])) <= 50.0


def test_explicit_links_define_levels():
    spec = TopologySpec(kind="explicit", positions=((0, 0), (1, 0), (2, 0)), links=((0, 2), (2, 1)))
    assert list(build_topology(spec, 50.0).level) == [0, 2, 1]


def test_greedy_void_detected():
    # node 1 has no neighbour nearer the sink; node 2 can still step to node 1
    pos = np.array([(0.0, 0.0), (100.0, 0.0), (140.0, 0.0)])
    assert greedy_voids(pos, 50.0) == [1]


# ---------------------------------------------------------------- routing


def test_line_distance_oracle():
    assert line_distance((1.0, 1.0), (0.0, 0.0), (2.0, 0.0)) == pytest.approx(1.0)
    assert line_distance((3.0, 4.0), (0.0, 0.0), (0.0, 0.0)) == pytest.approx(5.0)


def test_gpsr_prefers_the_line_over_the_greedy_choice():
    here, sink = (100.0, 0.0), (0.0, 0.0)
    nbs = {1: (60.0, 0.0), 2: (55.0, 20.0)}
    # node 2 is closer to the sink, node 1 sits on the line
    assert gpsr_line_next_hop(here, here, sink, nbs) == 1


def test_gpsr_void_returns_none():
    assert gpsr_line_next_hop((10.0, 0.0), (10.0, 0.0), (0.0, 0.0), {1: (20.0, 0.0)}) is None


pts = st.tuples(st.floats(-200, 200), st.floats(-200, 200))


@given(pts, pts, st.dictionaries(st.integers(0, 30), pts, max_size=8))
@settings(max_examples=200)
def test_gpsr_always_makes_progress(here, origin, nbs):
    sink = (0.0, 0.0)
    nxt = gpsr_line_next_hop(here, origin, sink, nbs)
    if nxt is not None:
        assert math.dist(nbs[nxt], sink) < math.dist(here, sink)
    else:
        assert all(math.dist(p, sink) >= math.dist(here, sink) for p in nbs.values())


def test_static_tree_router_and_blocking():
    r = Router("static_tree", [(0, 0), (1, 0), (2, 0)], parents={1: 0, 2: 1})
    assert r.next_hop(2, 2, {}) == 1
    assert r.next_hop(2, 2, {}, blocked={1}) is None
    with pytest.raises(ValueError):
        Router("static_tree", [(0, 0)])


# ---------------------------------------------------------------- traffic


def test_fixed_traffic_is_phase_aligned():
    a = traffic_tick(TrafficSpec(kind="fixed", rate=2.0), random.Random(1), 200_000)
    b = traffic_tick(TrafficSpec(kind="fixed", rate=2.0), random.Random(9), 200_000)
    assert a == b
    assert a[:2] == [round(0.5 / SYMBOL_DURATION), round(1.0 / SYMBOL_DURATION)]


def test_poisson_mean_gap_matches_rate():
    rng = random.Random(5)
    it = emission_times(TrafficSpec(rate=4.0), rng)
    times = [next(it) for _ in range(20000)]
    gaps = np.diff([0] + times) * SYMBOL_DURATION
    # standard error of the mean gap is 0.25 / sqrt(20000)
    assert gaps.mean() == pytest.approx(0.25, abs=5 * 0.25 / math.sqrt(20000))
    assert gaps.std() == pytest.approx(0.25, rel=0.05)


def test_zero_rate_emits_nothing():
    assert traffic_tick(TrafficSpec(rate=0.0), random.Random(0), 10**9) == []


def test_negative_rate_rejected():
    with pytest.raises(ConfigError):
        next(emission_times(TrafficSpec(rate=-1.0), random.Random(0)))


# ---------------------------------------------------------------- scenario parsing


def test_round_trip_through_dict():
    sc = Scenario(name="x", seed=4)
    assert scenario_from_dict(scenario_to_dict(sc)) == sc


@pytest.mark.parametrize(
    "data",
    [
        {"bogus": 1},
        {"mac": {"colour": "red"}},
        {"mac": {"kind": "aloha"}},
        {"mac": {"so": 2}},
        {"mac": {"so": 5, "mo": 4}},
        {"traffic": {"kind": "bursty"}},
        {"timing": {"n_packets": 0}},
        {"version": 99},
        {"routing": "flooding"},
    ],
)
def test_bad_scenarios_rejected(data):
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_set_path_replaces_nested_scalar():
    sc = set_path(Scenario(), "mac.mo", 7)
    assert sc.mac.mo == 7 and Scenario().mac.mo == 6
    with pytest.raises(ConfigError):
        set_path(sc, "mac.nothing", 1)
    with pytest.raises(ConfigError):
        set_path(sc, "mac", 1)
