"""Shared fixtures: one kernel fit per session, one oracle bath, seeded RNG."""

import numpy as np
import pytest

from redfield_slippage.bath import LorentzDrudeBath, fit_exponential_mixture
from redfield_slippage.master import SystemModel, build_redfield_generator
from redfield_slippage.oracle import default_oracle_bath


@pytest.fixture(scope="session")
def model():
    return SystemModel(epsilon=1.0)


@pytest.fixture(scope="session")
def ld_spec():
    return LorentzDrudeBath(omega_c=1.0, beta=1.0)


@pytest.fixture(scope="session")
def kernel(ld_spec):
    return fit_exponential_mixture(ld_spec, k_max=4000)


@pytest.fixture(scope="session")
def kernel_fine(ld_spec):
    # tail error of the pole sum scales like 1/k_max; the detailed-balance
    # checks at 1e-6 need far more terms than day-to-day propagation
    return fit_exponential_mixture(ld_spec, k_max=250000)


@pytest.fixture(scope="session")
def generator(model, kernel):
    return build_redfield_generator(model, kernel, lam=0.5)


@pytest.fixture(scope="session")
def oracle_bath():
    return default_oracle_bath()


@pytest.fixture()
def rng():
    return np.random.default_rng(20260816)
