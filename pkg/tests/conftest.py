import numpy as np
import pytest

from maxent_games.merge import MergeConfig, MergeScenario, seed_modes
from maxent_games.lq import iterative_lq_solve
from maxent_games.toy import ToyGame


@pytest.fixture(scope="session")
def toy():
    return ToyGame(eps=0.1, beta=0.5)


@pytest.fixture(scope="session")
def toy_bank(toy):
    return toy.lq_modes()


@pytest.fixture(scope="session")
def scenario():
    return MergeScenario(MergeConfig.default())


@pytest.fixture(scope="session")
def merge_modes(scenario):
    """Both converged merge equilibria from the default initial state."""
    game = scenario.game(0.05, 60)
    x0 = scenario.initial_state()
    seeds = seed_modes(scenario, x0, 60, 0.05)
    return game, x0, tuple(iterative_lq_solve(game, x0, s, 10.0, mode=z) for z, s in enumerate(seeds))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
