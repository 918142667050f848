"""Small hand-built worlds shared by the unit tests."""
import numpy as np

from wavesim.interventions import PolicyScenario
from wavesim.population import LayeredContactNetwork, Population

# Verdict lines from the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def isolated_population(n: int, age: int = 30) -> Population:
    """``n`` adults in single-person households with no school or work."""
    none = np.full(n, -1, dtype=np.int64)
    return Population(np.full(n, age, dtype=np.int64), np.arange(n, dtype=np.int64), none, none.copy())


def world_from_edges(n: int, layer: str, edges) -> tuple[Population, LayeredContactNetwork]:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return isolated_population(n), LayeredContactNetwork(n, {layer: e})


def quiet_scenario(**changes) -> PolicyScenario:
    return PolicyScenario.no_interventions().with_(**changes)
