import numpy as np
import pytest

from hsm_casimir.dielectric import GOLD_DRUDE, AbsorptionTable, Drude


def drude_eps_imag(omega, wp=GOLD_DRUDE.plasma_frequency, gamma=GOLD_DRUDE.relaxation_rate):
    return wp**2 * gamma / (omega * (omega**2 + gamma**2))


@pytest.fixture(scope="session")
def gold():
    return Drude(GOLD_DRUDE)


@pytest.fixture(scope="session")
def drude_table():
    omega = np.geomspace(1e11, 1e19, 2000)
    return AbsorptionTable(omega, drude_eps_imag(omega), low_tail="drude", high_tail=3.0)
