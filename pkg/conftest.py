import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from model.laws import Marginal, StepLaw, WeightLaw  # noqa: E402
from renewal.convolution import build_renewal_grids  # noqa: E402


def _gem(theta: float) -> StepLaw:
    return StepLaw.derived(WeightLaw.gem(theta))


def _lattice() -> StepLaw:
    one = Marginal.point_masses([(1.0, 1.0)])
    return StepLaw.independent(one, one)


@pytest.fixture
def gem1() -> StepLaw:
    return _gem(1.0)


@pytest.fixture
def gem2() -> StepLaw:
    return _gem(2.0)


@pytest.fixture
def lattice() -> StepLaw:
    return _lattice()


@pytest.fixture
def exp_law() -> StepLaw:
    return StepLaw.independent(Marginal.exponential(1.0), Marginal.exponential(4.0))


@pytest.fixture(scope="session")
def gem1_grids():
    return build_renewal_grids(_gem(1.0), 1e-2, 40.0, 5)


@pytest.fixture(scope="session")
def lattice_grids():
    return build_renewal_grids(_lattice(), 0.25, 12.0, 4)
