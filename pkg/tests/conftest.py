import json
import pathlib

import numpy as np
import pytest

from blockweak.core import instance_from_signal

ORACLE_PATH = pathlib.Path(__file__).with_name("oracle_values.json")


@pytest.fixture(scope="session")
def oracle():
    return json.loads(ORACLE_PATH.read_text())


def hand_instance(support_index):
    """``A = [[2, 1]]`` with a unit spike at ``support_index``."""
    x = np.zeros(2)
    x[support_index] = 1.0
    return instance_from_signal([[2.0, 1.0]], x, 1)


@pytest.fixture
def hand_success():
    return hand_instance(0)


@pytest.fixture
def hand_failure():
    return hand_instance(1)
