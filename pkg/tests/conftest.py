import numpy as np
import pandas as pd
import pytest

from longmed.estimator import NaturalEffectsIPW
from longmed.scm import preset_model


@pytest.fixture(scope="session")
def t2_model():
    return preset_model("longitudinal_t2_binary")


@pytest.fixture(scope="session")
def t2_data(t2_model):
    return t2_model.simulate(4000, seed=20260822)


@pytest.fixture(scope="session")
def t2_fit(t2_data):
    return NaturalEffectsIPW(schema=t2_data.schema).fit(t2_data)


@pytest.fixture(scope="session")
def single_model():
    return preset_model("single_mediator")


@pytest.fixture(scope="session")
def single_data(single_model):
    return single_model.simulate(3000, seed=7)


def small_frame():
    # Hand-sized two-time dataset with every modeled column present.
    return pd.DataFrame(
        {
            "id": [1, 2, 3, 4, 5, 6],
            "A": [0, 1, 0, 1, 1, 0],
            "L0": [0, 1, 1, 0, 1, 0],
            "M0": [0, 1, 1, 0, 1, 0],
            "Y0": [0, 1, 0, 1, 1, 0],
            "L1": [1, 0, 1, 0, 1, 1],
            "M1": [1, 0, 1, 1, 0, 0],
            "Y1": [1, 0, 0, 1, 1, 0],
        }
    )


def small_schema_dict():
    return {
        "id": "id",
        "exposure": "A",
        "times": [0, 1],
        "mediators": ["M0", "M1"],
        "outcomes": ["Y0", "Y1"],
        "mediator_levels": [2, 2],
        "baseline": ["L0"],
        "confounders": [[], ["L1"]],
        "outcome_type": "binary",
    }


def rng(seed=0):
    return np.random.default_rng(seed)
