import numpy as np
import pytest

from deduct.data_model import Dataset
from deduct.simulation import GenerativeConfig, GenerativeModel, generate

NA = np.nan


@pytest.fixture
def small_data() -> Dataset:
    """Eight subjects: four retained, two double-sampled dropouts, two unobserved dropouts."""
    return Dataset.from_arrays(
        c=[2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0],
        r_obs=[1, 0, 1, 0, 1, 0, 1, 0],
        z=[[0.0], [0.0], [1.0], [1.0], [0.0], [0.0], [1.0], [1.0]],
        w=[[NA], [0.5], [NA], [0.8], [NA], [0.4], [NA], [1.2]],
        s=[0, 1, 0, 1, 0, 0, 0, 0],
        x=[1.0, 0.7, 1.5, 1.1, 0.5, NA, 2.0, NA],
        delta=[1, 1, 0, 0, 1, NA, 1, NA],
        z_names=("Z",),
        w_names=("L",),
    )


@pytest.fixture(scope="session")
def gm1_data() -> Dataset:
    return generate(GenerativeConfig(model=GenerativeModel.GM1, n=200, seed=7))


@pytest.fixture(scope="session")
def gm2_data() -> Dataset:
    return generate(GenerativeConfig(model=GenerativeModel.GM2, n=200, seed=7))
