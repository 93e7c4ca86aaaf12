from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from pdmlab.closedloop import integrate_batch
from pdmlab.edm import bnn_protocol, logit_protocol, smith_protocol
from pdmlab.games import congestion_example, demand_response_example, task_allocation_example
from pdmlab.pdm import PdmModel
from pdmlab.simplex import simplex3_grid

CONGESTION_NE = np.array([4 / 11, 6 / 11, 1 / 11])
DEMAND_NE = np.array([0.15446153846153846, 0.29092307692307692, 0.55461538461538462])

ACCEPTANCE_LINES: list[str] = []


def grid_starts() -> np.ndarray:
    """The 3x3 barycentric grid without its centroid: 9 initial states."""
    pts = simplex3_grid(3)
    return pts[np.max(np.abs(pts - 1 / 3), axis=1) > 1e-12]


def random_starts(count: int = 50, seed: int = 2024) -> np.ndarray:
    return np.random.default_rng(seed).dirichlet(np.ones(3), size=count)


@dataclass
class Run:
    name: str
    pdm: PdmModel
    protocol: object
    trajectories: list
    seconds: float


def _run(name, pdm, protocol, x0, T=100.0, h=0.01) -> Run:
    t0 = time.perf_counter()
    trajs = integrate_batch(pdm, protocol, x0, None, T, h)
    return Run(name, pdm, protocol, trajs, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def congestion_memoryless_bnn() -> Run:
    return _run("congestion/bnn/memoryless", PdmModel.memoryless(congestion_example()), bnn_protocol(3), grid_starts())


@pytest.fixture(scope="session")
def congestion_anticipatory_bnn() -> Run:
    pdm = PdmModel.anticipatory(congestion_example(), 1.0, 5.0)
    return _run("congestion/bnn/anticipatory", pdm, bnn_protocol(3), grid_starts())


@pytest.fixture(scope="session")
def demand_memoryless_smith() -> Run:
    return _run("demand/smith/memoryless", PdmModel.memoryless(demand_response_example()), smith_protocol(3), grid_starts())


@pytest.fixture(scope="session")
def demand_smoothing_smith() -> Run:
    pdm = PdmModel.smoothing(demand_response_example(), 1.0)
    return _run("demand/smith/smoothing", pdm, smith_protocol(3), grid_starts())


@pytest.fixture(scope="session")
def task_logit_small_eta() -> Run:
    pdm = PdmModel.memoryless(task_allocation_example())
    # the logit target switches within one step at h=0.01 for this eta
    return _run("task/logit/eta=0.01", pdm, logit_protocol(3, 0.01), random_starts(), 100.0, 0.002)


@pytest.fixture(scope="session")
def task_logit_large_eta() -> Run:
    pdm = PdmModel.memoryless(task_allocation_example())
    return _run("task/logit/eta=25", pdm, logit_protocol(3, 25.0), random_starts())


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} [{number:2d}] {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
