"""Shared fixtures: large ensembles are expensive, so they are built once
per session and reused by the module tests and the acceptance suite."""

import numpy as np
import pytest

from lentparticle import ensemble, scenarios
from lentparticle.rng import RngStream


@pytest.fixture(scope="session")
def ens_power_100k():
    """10^5 paths of the compound scenario with the u^2 form weight."""
    sc = scenarios.build("compound")
    return sc, ensemble.simple_ensemble(sc, 100_000, RngStream(seed=42))


@pytest.fixture(scope="session")
def ens_bump_100k():
    """10^5 paths of the compound scenario with the boundary-vanishing weight."""
    sc = scenarios.build("compound", weight="bump")
    return sc, ensemble.simple_ensemble(sc, 100_000, RngStream(seed=102))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
