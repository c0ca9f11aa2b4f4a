import numpy as np
import pytest

from intraday_shock.model import (InitialPrices, JumpLaw, MaturityGrid,
                                  ModelParams, hourly_grid)

# Collected by the acceptance tests; printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def law_de_2022() -> JumpLaw:
    """German-2022-like jump sizes: m1 = 1.31, m2 = 1.72 EUR/MWh."""
    return JumpLaw((1.19, 1.25, 1.31, 1.37, 1.43), (0.1, 0.2, 0.4, 0.2, 0.1))


def law_fr_2019() -> JumpLaw:
    """French-2019-like jump sizes: m1 = 0.79, m2 = 0.63 EUR/MWh.

    The published (m1, m2) = (0.79, 0.62) rounds to an infeasible pair
    (m2 < m1^2); this is the nearest feasible two-atom law.
    """
    return JumpLaw((0.72, 0.86), (0.5, 0.5))


@pytest.fixture(scope="session")
def params_de_2022() -> ModelParams:
    return ModelParams(kappa=0.50, mu=71.96, mu_c=65.68, grid=hourly_grid(24),
                       jump_law=law_de_2022())


@pytest.fixture(scope="session")
def params_fr_2019() -> ModelParams:
    return ModelParams(kappa=0.36, mu=7.12, mu_c=2.57, grid=hourly_grid(24),
                       jump_law=law_fr_2019())


@pytest.fixture(scope="session")
def params_small() -> ModelParams:
    """Three products, light intensities: fast Monte Carlo."""
    return ModelParams(kappa=0.5, mu=4.0, mu_c=3.0,
                       grid=MaturityGrid((9.0, 10.0, 11.0)),
                       jump_law=JumpLaw((1.0, 2.0), (0.7, 0.3)))


@pytest.fixture(scope="session")
def params_pair() -> ModelParams:
    """Two products with a short horizon for distribution tests."""
    return ModelParams(kappa=0.7, mu=1.2, mu_c=0.9,
                       grid=MaturityGrid((1.0, 2.0), trading_cutoff_lead=0.0),
                       jump_law=JumpLaw((1.0, 2.0), (0.6, 0.4)))


@pytest.fixture(scope="session")
def f0_small() -> InitialPrices:
    return InitialPrices.flat(100.0, 3)


def day_ahead_shape(n_products: int = 24) -> np.ndarray:
    """A day-ahead curve with a night valley and two peaks."""
    hours = np.arange(n_products)
    curve = (150.0 + 40.0 * np.exp(-((hours - 8.5) / 2.5) ** 2)
             + 55.0 * np.exp(-((hours - 19.0) / 2.0) ** 2)
             - 35.0 * np.exp(-((hours - 3.0) / 3.0) ** 2))
    return np.round(curve, 2)
