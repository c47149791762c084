import time
import warnings

import numpy as np
import pytest
from hypothesis import settings

from heatflow.errors import NonMonotoneEnergy
from heatflow.flow import run
from heatflow.jacobi import assemble_system, lowest_eigs
from heatflow.scenario import parse_config

settings.register_profile("heatflow", deadline=None, max_examples=40)
settings.load_profile("heatflow")

ACCEPTANCE_LINES = []


class ScenarioRun:
    """Flow, final Jacobi system and spectrum of one bundled scenario."""

    def __init__(self, name):
        self.scenario = parse_config(name)
        self.f0 = self.scenario.initial()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonMonotoneEnergy)
            start = time.perf_counter()
            self.traj = run(self.f0, self.scenario.flow)
            self.seconds = time.perf_counter() - start
        self.warnings = [w for w in caught if issubclass(w.category, NonMonotoneEnergy)]
        self.system = assemble_system(self.traj.final_map())
        self.spectrum = lowest_eigs(self.system, k=self.scenario.analysis.eig_k,
                                    tol=self.scenario.analysis.eig_tol, seed=self.scenario.seed)


def _warm_up():
    # compile the flow kernels once so that timed runs measure the integration only
    from heatflow.flow import FlowConfig
    from heatflow.geometry import TargetManifold
    from heatflow.grid import DomainGrid
    from heatflow.maps import DiscreteMap
    for target, grid, stepper in (
            (TargetManifold.euclidean(1), DomainGrid.circle(2 * np.pi, 16), "coordinate_rk4"),
            (TargetManifold.hyperbolic(2), DomainGrid.interval(1.0, 8), "geodesic_euler")):
        values = np.ones(grid.shape + (target.dim,))
        f = DiscreteMap(grid, target, values)
        run(f, FlowConfig(dt=grid.stability_bound(0.2), t_end=grid.stability_bound(0.2) * 3,
                          stepper=stepper, snapshot_stride=1))


@pytest.fixture(scope="session")
def warm():
    _warm_up()
    return True


@pytest.fixture(scope="session")
def circle_run(warm):
    return ScenarioRun("circle_sine_euclidean.json")


@pytest.fixture(scope="session")
def h2_run(warm):
    return ScenarioRun("geodesic_h2_dirichlet.json")


@pytest.fixture(scope="session")
def torus_run(warm):
    return ScenarioRun("torus_winding_loop.json")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
