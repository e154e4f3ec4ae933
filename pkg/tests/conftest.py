import numpy as np
import pytest

from synthutil import planted_market, random_market


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_market():
    """Two random-walk assets over 2019-2020, 40 dates per year."""
    return random_market(n_assets=2, years=(2019, 2020), days_per_year=40, seed=3)


@pytest.fixture(scope="session")
def planted():
    """Riser/faller market over 2018-2020, 50 dates per year."""
    return planted_market()
