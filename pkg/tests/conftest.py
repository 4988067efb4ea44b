import itertools

import numpy as np
import pytest

from collateral_qubo.encode import QuboModel
from collateral_qubo.model import Account, Asset, CollateralInstance


def random_qubo(rng: np.random.Generator, n: int, density: float = 0.5, scale: float = 1.0) -> QuboModel:
    linear = rng.normal(scale=scale, size=n)
    quad = {
        (i, j): float(rng.normal(scale=scale))
        for i, j in itertools.combinations(range(n), 2)
        if rng.random() < density
    }
    return QuboModel(linear=linear, quadratic=quad, offset=float(rng.normal()))


def all_bitstrings(n: int) -> np.ndarray:
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(float)


def simple_instance(quantities, unit_values, tiers, exposures, durations, haircut, **kw):
    return CollateralInstance(
        assets=[Asset(quantity=q, unit_value=u, tier=t) for q, u, t in zip(quantities, unit_values, tiers)],
        accounts=[Account(exposure=c, duration=d) for c, d in zip(exposures, durations)],
        haircut=np.asarray(haircut, dtype=float),
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def one_pair():
    """One asset worth 100, one long-term account needing 50."""
    return simple_instance([100.0], [1.0], [0.2], [50.0], [0], [[1.0]])
