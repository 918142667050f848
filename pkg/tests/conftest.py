import pytest
from helpers import ACCEPTANCE_LINES

from wavesim import engine
from wavesim.epi import DiseaseParams
from wavesim.interventions import ScenarioLibrary
from wavesim.population import generate_population, load_population_config


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def us_world():
    """The bundled 50,000-agent population and network."""
    return generate_population(load_population_config())


@pytest.fixture(scope="session")
def small_world():
    return generate_population(load_population_config(n_agents=3000, rng_seed=7))


@pytest.fixture(scope="session")
def library():
    return ScenarioLibrary.load()


@pytest.fixture(scope="session")
def best_fit_params(library):
    return DiseaseParams(**library.disease_overrides("best_fit"))


@pytest.fixture(scope="session")
def small_burn_in(small_world):
    return engine.default_burn_in(len(small_world[0]))
