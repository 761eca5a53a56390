import pytest

from dsmesim.sim.network import Simulation
from dsmesim.sim.scenario import MacSpec, RadioSpec, Scenario, TimingSpec
from dsmesim.sim.topology import TopologySpec
from dsmesim.sim.traffic import TrafficSpec
from dsmesim.schedule import SYMBOL_DURATION


def quiet_sim(positions, seed=0, **mac):
    """A DSME network without traffic, for driving the protocol by hand."""
    sc = Scenario(
        name="harness",
        topology=TopologySpec(kind="explicit", positions=tuple(tuple(map(float, p)) for p in positions)),
        radio=RadioSpec(comm_range=50.0),
        traffic=TrafficSpec(rate=0.0),
        mac=MacSpec(**mac),
        timing=TimingSpec(t_setup=0.0, n_packets=1, max_time=3600.0),
        seed=seed,
    )
    return Simulation(sc, log=True)


def advance(sim, seconds):
    sim.loop.run(sim.loop.now + int(round(seconds / SYMBOL_DURATION)))


def wait_associated(sim, limit_s=300.0, step_s=1.0):
    waited = 0.0
    while not all(n.associated for n in sim.nodes):
        assert waited < limit_s, "network did not form"
        advance(sim, step_s)
        waited += step_s
    # settle so that every node has drained its CAP queue
    advance(sim, 2.0)


def line_positions(n, spacing=40.0):
    return [(i * spacing, 0.0) for i in range(n)]


# ---------------------------------------------------------------- acceptance report

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for a criterion, then assert it."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        request.config.stash[VERDICTS].append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
